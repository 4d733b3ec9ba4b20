//! Deterministic Cauchy problems with smooth initial velocity φ.
//!
//! * `solve_quadrature`: u(t,x) = (t/2) ĉ ∫_{-1}^{1} φ(x + ξv)(1-v²)^{-γ} dv,
//!   integrated with Gauss-Jacobi weights so the endpoint singularity is exact.
//! * `solve_mc`: u(t,x) = t E[φ(x + ξ Z Y)] with antithetic Z.
//! * `solve_lower_order`: v(t,x) = ∫_0^t φ(x - t²/2 + z²) dz, plus the same
//!   value written as a singular integral in y (for cross-checking).
//! * `solve_wave_lower`: ∫ ½ e^{(y-x)/2} J0(½√(t²-(x-y)²)) φ(y) dy.
//! * `residual_oracle`: centered-difference residual of the PDE on a grid.

use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::quadrature::{gauss_jacobi_adaptive, gauss_legendre_adaptive, gauss_legendre_try, Tolerance};
use crate::tricomi::{sample_y, sample_z, xi, KernelSpec, KernelVariant, TricomiParams};

type PhiFn = dyn Fn(f64) -> f64 + Send + Sync;

/// Initial velocity φ. Callers promise φ ∈ C².
#[derive(Clone)]
pub struct InitialVelocity {
    f: Arc<PhiFn>,
    pub description: String,
}

impl fmt::Debug for InitialVelocity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "InitialVelocity({})", self.description)
    }
}

impl InitialVelocity {
    pub fn new(description: impl Into<String>, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        InitialVelocity {
            f: Arc::new(f),
            description: description.into(),
        }
    }

    #[inline]
    pub fn eval(&self, y: f64) -> f64 {
        (self.f)(y)
    }

    pub fn constant(c: f64) -> Self {
        Self::new(format!("{c}"), move |_| c)
    }

    pub fn affine(a: f64, b: f64) -> Self {
        Self::new(format!("{a} + {b}*y"), move |y| a + b * y)
    }

    pub fn square() -> Self {
        Self::new("y^2", |y| y * y)
    }

    pub fn cosine() -> Self {
        Self::new("cos(y)", f64::cos)
    }

    pub fn gaussian_bump(amplitude: f64, center: f64, width: f64) -> Self {
        Self::new(
            format!("{amplitude}*exp(-(y-{center})^2/(2*{width}^2))"),
            move |y| {
                let s = (y - center) / width;
                amplitude * (-0.5 * s * s).exp()
            },
        )
    }
}

fn check_time(func: &'static str, t: f64) -> Result<()> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Domain {
            func,
            arg: t,
            domain: "t in [0, inf)",
        });
    }
    Ok(())
}

fn default_tol() -> Tolerance {
    Tolerance::new(1e-12, 1e-14)
}

pub fn solve_quadrature(params: &TricomiParams, phi: &InitialVelocity, t: f64, x: f64) -> Result<f64> {
    check_time("solve_quadrature", t)?;
    if t == 0.0 {
        return Ok(0.0);
    }
    let r = xi(params, t)?;
    let g = params.gamma;
    let integral = gauss_jacobi_adaptive(-g, -g, default_tol(), |v| phi.eval(x + r * v))?;
    Ok(0.5 * t * params.c_hat * integral)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub pairs: u64,
}

/// Pairs per chunk. Chunk i draws from its own stream seeded with seed + i.
pub const MC_CHUNK: u64 = 4096;

#[derive(Debug, Clone, Copy)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn merge(a: Moments, b: Moments) -> Moments {
        if a.n == 0.0 {
            return b;
        }
        if b.n == 0.0 {
            return a;
        }
        let n = a.n + b.n;
        let d = b.mean - a.mean;
        Moments {
            n,
            mean: a.mean + d * b.n / n,
            m2: a.m2 + b.m2 + d * d * a.n * b.n / n,
        }
    }
}

fn merge_tree(ms: &[Moments]) -> Moments {
    match ms.len() {
        0 => Moments { n: 0.0, mean: 0.0, m2: 0.0 },
        1 => ms[0],
        n => Moments::merge(merge_tree(&ms[..n / 2]), merge_tree(&ms[n / 2..])),
    }
}

pub fn solve_mc(
    params: &TricomiParams,
    phi: &InitialVelocity,
    t: f64,
    x: f64,
    n_samples: u64,
    seed: u64,
) -> Result<McEstimate> {
    if n_samples < 2 {
        return Err(Error::arg(format!("solve_mc needs n_samples >= 2, got {n_samples}")));
    }
    check_time("solve_mc", t)?;
    let pairs = n_samples / 2;
    let r = xi(params, t)?;
    let chunks = pairs.div_ceil(MC_CHUNK);
    let parts: Vec<Moments> = (0..chunks)
        .into_par_iter()
        .map(|ci| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(ci));
            let count = MC_CHUNK.min(pairs - ci * MC_CHUNK);
            let mut m = Moments { n: 0.0, mean: 0.0, m2: 0.0 };
            for _ in 0..count {
                let y = sample_y(params, &mut rng);
                let z = sample_z(&mut rng);
                let s = r * z * y;
                let v = 0.5 * (phi.eval(x + s) + phi.eval(x - s));
                m.n += 1.0;
                let d = v - m.mean;
                m.mean += d / m.n;
                m.m2 += d * (v - m.mean);
            }
            m
        })
        .collect();
    let m = merge_tree(&parts);
    let var = if m.n > 1.0 { m.m2 / (m.n - 1.0) } else { 0.0 };
    Ok(McEstimate {
        estimate: t * m.mean,
        std_error: t * (var / m.n).sqrt(),
        pairs,
    })
}

/// v(t,x) = ∫_0^t φ(x - t²/2 + z²) dz.
pub fn solve_lower_order(phi: &InitialVelocity, t: f64, x: f64) -> Result<f64> {
    check_time("solve_lower_order", t)?;
    if t == 0.0 {
        return Ok(0.0);
    }
    let base = x - 0.5 * t * t;
    gauss_legendre_adaptive(0.0, t, default_tol(), |z| phi.eval(base + z * z))
}

/// The same v written as ∫ φ(y) / (2√(y - x + t²/2)) dy over (x - t²/2, x + t²/2].
/// Evaluated with Gauss-Jacobi weight (1+v)^{-1/2}, independent of the
/// z-substitution used by `solve_lower_order`.
pub fn solve_lower_order_singular_form(phi: &InitialVelocity, t: f64, x: f64) -> Result<f64> {
    check_time("solve_lower_order_singular_form", t)?;
    if t == 0.0 {
        return Ok(0.0);
    }
    let h = 0.5 * t * t;
    let lo = x - h;
    let integral = gauss_jacobi_adaptive(0.0, -0.5, default_tol(), |v| phi.eval(lo + h * (1.0 + v)))?;
    Ok(t / (2.0 * std::f64::consts::SQRT_2) * integral)
}

pub fn solve_wave_lower(phi: &InitialVelocity, t: f64, x: f64) -> Result<f64> {
    let k = KernelSpec::new(KernelVariant::WaveLower, t, x)?;
    if t == 0.0 {
        return Ok(0.0);
    }
    // the kernel is entire in y on the closed support; plain Gauss-Legendre
    gauss_legendre_try(x - t, x + t, default_tol(), |y| Ok(k.eval(y)? * phi.eval(y)))
}

/// Values on a tensor grid, row-major in t.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub t_values: Vec<f64>,
    pub x_values: Vec<f64>,
    pub values: Vec<f64>,
}

impl GridField {
    pub fn new(t_values: Vec<f64>, x_values: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if values.len() != t_values.len() * x_values.len() {
            return Err(Error::arg(format!(
                "grid of {}x{} needs {} values, got {}",
                t_values.len(),
                x_values.len(),
                t_values.len() * x_values.len(),
                values.len()
            )));
        }
        Ok(GridField {
            t_values,
            x_values,
            values,
        })
    }

    /// Evaluates `f` on every grid point, in parallel over t-rows.
    pub fn tabulate<F>(t_values: Vec<f64>, x_values: Vec<f64>, f: F) -> Result<Self>
    where
        F: Fn(f64, f64) -> Result<f64> + Sync,
    {
        let rows: Vec<Vec<f64>> = t_values
            .par_iter()
            .map(|&t| x_values.iter().map(|&x| f(t, x)).collect::<Result<Vec<f64>>>())
            .collect::<Result<_>>()?;
        let values = rows.into_iter().flatten().collect();
        GridField::new(t_values, x_values, values)
    }

    pub fn get(&self, it: usize, ix: usize) -> f64 {
        self.values[it * self.x_values.len() + ix]
    }
}

/// n evenly spaced points from a to b inclusive.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![a],
        _ => {
            let h = (b - a) / (n - 1) as f64;
            (0..n).map(|i| if i == n - 1 { b } else { a + h * i as f64 }).collect()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PdeVariant {
    /// u_tt = t^α u_xx
    Tricomi,
    /// v_tt = t² v_xx - v_x
    TricomiLower,
    /// u_tt = u_xx
    Wave,
    /// V_tt = V_xx + V_x
    WaveLower,
}

impl PdeVariant {
    fn coefficients(&self, alpha: f64, t: f64) -> (f64, f64) {
        match self {
            PdeVariant::Tricomi => (t.powf(alpha), 0.0),
            PdeVariant::TricomiLower => (t * t, -1.0),
            PdeVariant::Wave => (1.0, 0.0),
            PdeVariant::WaveLower => (1.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    pub variant: PdeVariant,
    pub max_abs_residual: f64,
    pub dt: f64,
    pub dx: f64,
    /// Half-open index ranges of the rows and columns that were checked.
    pub interior_t: (usize, usize),
    pub interior_x: (usize, usize),
}

fn uniform_spacing(v: &[f64], what: &str) -> Result<f64> {
    let h = v[1] - v[0];
    if !(h > 0.0) {
        return Err(Error::arg(format!("{what} values must be ascending")));
    }
    for w in v.windows(2) {
        if ((w[1] - w[0]) - h).abs() > 1e-9 * h.max(w[1].abs()) {
            return Err(Error::arg(format!("{what} spacing is not uniform")));
        }
    }
    Ok(h)
}

/// max |D_tt u - a(t) D_xx u - b D_x u| over interior points with t >= dt.
pub fn residual_oracle(field: &GridField, variant: PdeVariant, alpha: f64) -> Result<ResidualReport> {
    let nt = field.t_values.len();
    let nx = field.x_values.len();
    if nt < 3 || nx < 3 {
        return Err(Error::arg(format!("residual needs at least 3x3 points, got {nt}x{nx}")));
    }
    let dt = uniform_spacing(&field.t_values, "t")?;
    let dx = uniform_spacing(&field.x_values, "x")?;
    let first = (1..nt - 1)
        .find(|&i| field.t_values[i] >= dt * (1.0 - 1e-9))
        .unwrap_or(nt - 1);
    let mut worst: f64 = 0.0;
    for it in first..nt - 1 {
        let (a, b) = variant.coefficients(alpha, field.t_values[it]);
        for ix in 1..nx - 1 {
            let u = |i: usize, j: usize| field.get(i, j);
            let utt = (u(it + 1, ix) - 2.0 * u(it, ix) + u(it - 1, ix)) / (dt * dt);
            let uxx = (u(it, ix + 1) - 2.0 * u(it, ix) + u(it, ix - 1)) / (dx * dx);
            let ux = (u(it, ix + 1) - u(it, ix - 1)) / (2.0 * dx);
            worst = worst.max((utt - a * uxx - b * ux).abs());
        }
    }
    Ok(ResidualReport {
        variant,
        max_abs_residual: worst,
        dt,
        dx,
        interior_t: (first, nt - 1),
        interior_x: (1, nx - 1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::gauss_legendre;
    use crate::tricomi::make_params;

    #[test]
    fn constant_datum() {
        for alpha in [0.0, 1.0, 2.0, 7.3] {
            let p = make_params(alpha).unwrap();
            let u = solve_quadrature(&p, &InitialVelocity::constant(1.0), 2.0, 0.0).unwrap();
            assert!((u - 2.0).abs() < 1e-12, "alpha={alpha} u={u}");
        }
    }

    #[test]
    fn linear_datum() {
        for alpha in [0.0, 2.0, 5.0] {
            let p = make_params(alpha).unwrap();
            for (t, x) in [(0.3, -1.0), (1.0, 2.5), (2.2, 0.7)] {
                let u = solve_quadrature(&p, &InitialVelocity::affine(0.0, 1.0), t, x).unwrap();
                assert!((u - t * x).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn square_datum() {
        let p = make_params(2.0).unwrap();
        let u = solve_quadrature(&p, &InitialVelocity::square(), 1.0, 0.0).unwrap();
        assert!((u - 0.1).abs() < 1e-13, "{u}");
    }

    #[test]
    fn zero_time_is_exact_zero() {
        let p = make_params(2.0).unwrap();
        assert_eq!(solve_quadrature(&p, &InitialVelocity::cosine(), 0.0, 1.0).unwrap(), 0.0);
        assert!(solve_quadrature(&p, &InitialVelocity::cosine(), -1.0, 1.0).is_err());
    }

    #[test]
    fn dalembert_reduction() {
        let p = make_params(0.0).unwrap();
        let phi = InitialVelocity::gaussian_bump(1.0, 0.3, 0.4);
        for (t, x) in [(0.5, 0.0), (1.5, 0.2), (3.0, -1.0)] {
            let u = solve_quadrature(&p, &phi, t, x).unwrap();
            let want = 0.5 * gauss_legendre(200).integrate_on(x - t, x + t, |y| phi.eval(y));
            assert!((u - want).abs() < 1e-9);
        }
    }

    #[test]
    fn initial_velocity_recovered() {
        let p = make_params(2.0).unwrap();
        let phi = InitialVelocity::gaussian_bump(1.0, 0.0, 0.5);
        let x = 0.3;
        let mut prev = f64::INFINITY;
        for d in [1e-2, 1e-3, 1e-4] {
            let err = (solve_quadrature(&p, &phi, d, x).unwrap() / d - phi.eval(x)).abs();
            assert!(err < prev / 5.0 || err < 1e-10, "d={d} err={err}");
            assert!(err < 10.0 * d);
            prev = err;
        }
    }

    #[test]
    fn finite_propagation() {
        let p = make_params(2.0).unwrap();
        // compactly supported C² datum on [5, 7]
        let phi = InitialVelocity::new("bump", |y: f64| {
            let s = y - 6.0;
            if s.abs() < 1.0 {
                (1.0 - s * s).powi(3)
            } else {
                0.0
            }
        });
        let t = 1.5;
        let r = xi(&p, t).unwrap();
        let x = 5.0 - r - 1.0;
        assert!(solve_quadrature(&p, &phi, t, x).unwrap().abs() < 1e-14);
    }

    #[test]
    fn mc_affine_is_exact() {
        let p = make_params(2.0).unwrap();
        for n in [2, 3, 10, 10_001] {
            let e = solve_mc(&p, &InitialVelocity::affine(1.5, -2.0), 1.2, 0.4, n, 5).unwrap();
            let want = 1.2 * (1.5 - 2.0 * 0.4);
            assert!((e.estimate - want).abs() < 1e-13, "n={n}");
            assert!(e.std_error < 1e-13);
        }
    }

    #[test]
    fn mc_square() {
        let p = make_params(2.0).unwrap();
        let e = solve_mc(&p, &InitialVelocity::square(), 1.0, 0.0, 1_000_000, 42).unwrap();
        assert!((e.estimate - 0.1).abs() < 4.0 * e.std_error, "{e:?}");
        assert_eq!(e.pairs, 500_000);
    }

    #[test]
    fn mc_rejects_tiny_n() {
        let p = make_params(0.0).unwrap();
        assert!(matches!(
            solve_mc(&p, &InitialVelocity::square(), 1.0, 0.0, 1, 0),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn mc_thread_count_invariant() {
        let p = make_params(1.3).unwrap();
        let phi = InitialVelocity::gaussian_bump(1.0, 0.1, 0.3);
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| solve_mc(&p, &phi, 0.8, 0.0, 100_000, 9).unwrap())
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.estimate.to_bits(), b.estimate.to_bits());
        assert_eq!(a.std_error.to_bits(), b.std_error.to_bits());
    }

    #[test]
    fn lower_order_examples() {
        for (t, x) in [(0.5, 0.0), (1.0, 1.0), (2.0, -0.5)] {
            let v = solve_lower_order(&InitialVelocity::constant(1.0), t, x).unwrap();
            assert!((v - t).abs() < 1e-13);
            let v = solve_lower_order(&InitialVelocity::affine(0.0, 1.0), t, x).unwrap();
            assert!((v - (t * x - t * t * t / 6.0)).abs() < 1e-12);
            let w = solve_lower_order_singular_form(&InitialVelocity::affine(0.0, 1.0), t, x).unwrap();
            assert!((w - (t * x - t * t * t / 6.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn lower_order_initial_velocity() {
        let phi = InitialVelocity::cosine();
        for x in [0.0, 0.7] {
            let d = 1e-4;
            let vt = solve_lower_order(&phi, d, x).unwrap() / d;
            assert!((vt - phi.eval(x)).abs() < 1e-3);
        }
    }

    #[test]
    fn wave_lower_small_time() {
        let one = InitialVelocity::constant(1.0);
        assert_eq!(solve_wave_lower(&one, 0.0, 0.0).unwrap(), 0.0);
        for t in [1e-2, 1e-3, 1e-4] {
            let r = solve_wave_lower(&one, t, 0.3).unwrap() / t;
            assert!((r - 1.0).abs() < 2.0 * t, "t={t} r={r}");
        }
        assert!(solve_wave_lower(&one, 61.0, 0.0).is_err());
    }

    #[test]
    fn residual_constant_field_is_zero() {
        let t = linspace(0.0, 1.0, 6);
        let x = linspace(-1.0, 1.0, 7);
        let f = GridField::tabulate(t, x, |_, _| Ok(3.0)).unwrap();
        for v in [PdeVariant::Tricomi, PdeVariant::TricomiLower, PdeVariant::Wave, PdeVariant::WaveLower] {
            assert_eq!(residual_oracle(&f, v, 2.0).unwrap().max_abs_residual, 0.0);
        }
    }

    #[test]
    fn residual_second_order_on_dalembert() {
        let res = |n: usize| {
            let t = linspace(0.0, 1.0, n + 1);
            // dx != dt, otherwise the leading errors of D_tt and D_xx cancel
            let x = linspace(-1.0, 1.0, 3 * n + 1);
            let f = GridField::tabulate(t, x, |t, x| Ok(x.cos() * t.sin())).unwrap();
            residual_oracle(&f, PdeVariant::Tricomi, 0.0).unwrap().max_abs_residual
        };
        let r1 = res(20);
        let r2 = res(40);
        let ratio = r1 / r2;
        assert!((3.5..=4.5).contains(&ratio), "ratio={ratio}");
    }

    #[test]
    fn residual_rejects_small_or_ragged_grids() {
        let f = GridField::new(vec![0.0, 1.0], vec![0.0, 1.0, 2.0], vec![0.0; 6]).unwrap();
        assert!(residual_oracle(&f, PdeVariant::Wave, 0.0).is_err());
        let f = GridField::new(vec![0.0, 1.0, 3.0], vec![0.0, 1.0, 2.0], vec![0.0; 9]).unwrap();
        assert!(residual_oracle(&f, PdeVariant::Wave, 0.0).is_err());
        assert!(GridField::new(vec![0.0], vec![0.0], vec![]).is_err());
    }

    mod props {
        use super::super::*;
        use crate::tricomi::make_params;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn lower_order_forms_agree(t in 0.05f64..2.0, x in -2.0f64..2.0, c in -1.0f64..1.0, w in 0.2f64..1.5) {
                let phi = InitialVelocity::gaussian_bump(1.0, c, w);
                let a = solve_lower_order(&phi, t, x).unwrap();
                let b = solve_lower_order_singular_form(&phi, t, x).unwrap();
                prop_assert!((a - b).abs() < 1e-7, "a={} b={}", a, b);
            }

            #[test]
            fn odd_part_cancels(alpha in 0.0f64..8.0, t in 0.0f64..2.0, x in -2.0f64..2.0, a in -3.0f64..3.0, b in -3.0f64..3.0) {
                let p = make_params(alpha).unwrap();
                let u = solve_quadrature(&p, &InitialVelocity::affine(a, b), t, x).unwrap();
                prop_assert!((u - t * (a + b * x)).abs() < 1e-11 * (1.0 + (t * (a + b * x)).abs()));
            }
        }
    }
}
