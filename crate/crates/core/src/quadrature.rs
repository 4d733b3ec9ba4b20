//! Quadrature rules.
//!
//! * Gauss-Legendre nodes by Newton iteration on P_n.
//! * Gauss-Jacobi nodes by Golub-Welsch: eigenvalues of the Jacobi matrix via
//!   implicit QL, weights from the first eigenvector components.
//! * Tanh-sinh for integrands with endpoint singularities. The integrand also
//!   receives the distances to both endpoints, computed without cancellation,
//!   so that `(x - a)^p` can be evaluated accurately at nodes 1e-200 away from `a`.
//!
//! Rules are cached process-wide; they are immutable once built.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{Error, QuadratureDiagnostics, Result};
use crate::specialfn::beta_fn;

/// Nodes and weights on [-1, 1].
#[derive(Debug, Clone)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Σ w_i f(x_i) on [-1, 1].
    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    /// Affine map to [a, b]. Only meaningful for the Legendre weight.
    pub fn integrate_on<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let h = 0.5 * (b - a);
        let m = 0.5 * (a + b);
        h * self.integrate(|x| f(m + h * x))
    }
}

type Key = (u64, u64, usize);

fn cache() -> &'static Mutex<HashMap<Key, Arc<Rule>>> {
    static CACHE: OnceLock<Mutex<HashMap<Key, Arc<Rule>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

fn cached(key: Key, build: impl FnOnce() -> Result<Rule>) -> Result<Arc<Rule>> {
    if let Some(r) = cache().lock().expect("rule cache poisoned").get(&key) {
        return Ok(r.clone());
    }
    // build outside the lock; a racing thread may build the same rule, harmless
    let rule = Arc::new(build()?);
    cache()
        .lock()
        .expect("rule cache poisoned")
        .entry(key)
        .or_insert_with(|| rule.clone());
    Ok(rule)
}

/// n-point Gauss-Legendre rule.
pub fn gauss_legendre(n: usize) -> Arc<Rule> {
    assert!(n > 0, "gauss_legendre needs n > 0");
    // NaN bits as the tag: never collides with a Jacobi key
    cached((f64::NAN.to_bits(), 0, n), || Ok(build_legendre(n))).expect("legendre build is infallible")
}

fn build_legendre(n: usize) -> Rule {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        // Tricomi's initial guess, then Newton
        let mut x = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_pd(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_pd(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Rule { nodes, weights }
}

fn legendre_pd(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// n-point Gauss-Jacobi rule for the weight (1-x)^a (1+x)^b on [-1, 1].
pub fn gauss_jacobi(n: usize, a: f64, b: f64) -> Result<Arc<Rule>> {
    if n == 0 {
        return Err(Error::arg("gauss_jacobi needs n > 0"));
    }
    if !(a > -1.0) || !(b > -1.0) {
        return Err(Error::Domain {
            func: "gauss_jacobi",
            arg: a.min(b),
            domain: "exponents > -1",
        });
    }
    cached((a.to_bits(), b.to_bits(), n), || build_jacobi(n, a, b))
}

fn build_jacobi(n: usize, a: f64, b: f64) -> Result<Rule> {
    let ab = a + b;
    let mut diag = vec![0.0; n];
    let mut off = vec![0.0; n];
    diag[0] = (b - a) / (ab + 2.0);
    for k in 1..n {
        let kf = k as f64;
        let s = 2.0 * kf + ab;
        diag[k] = (b * b - a * a) / (s * (s + 2.0));
        let beta = if k == 1 {
            4.0 * (1.0 + a) * (1.0 + b) / ((2.0 + ab).powi(2) * (3.0 + ab))
        } else {
            4.0 * kf * (kf + a) * (kf + b) * (kf + ab) / (s * s * (s + 1.0) * (s - 1.0))
        };
        off[k - 1] = beta.sqrt();
    }
    let mu0 = 2f64.powf(ab + 1.0) * beta_fn(a + 1.0, b + 1.0)?;
    let first = tridiagonal_ql(&mut diag, &mut off)?;
    let mut pairs: Vec<(f64, f64)> = diag
        .into_iter()
        .zip(first)
        .map(|(x, v)| (x, mu0 * v * v))
        .collect();
    pairs.sort_by(|p, q| p.0.total_cmp(&q.0));
    Ok(Rule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    })
}

/// Implicit QL with Wilkinson shifts on a symmetric tridiagonal matrix.
/// `d` is overwritten with eigenvalues; returns the first component of each
/// normalized eigenvector. `e[i]` couples rows i and i+1; `e[n-1]` is scratch.
fn tridiagonal_ql(d: &mut [f64], e: &mut [f64]) -> Result<Vec<f64>> {
    let n = d.len();
    let mut z = vec![0.0; n];
    z[0] = 1.0;
    if n == 1 {
        return Ok(z);
    }
    e[n - 1] = 0.0;
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m < n - 1 {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                return Err(Error::Numeric(format!(
                    "tridiagonal QL did not converge for eigenvalue {l} of {n}"
                )));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let mut s = 1.0;
            let mut c = 1.0;
            let mut p = 0.0;
            let mut i = m;
            let mut underflow = false;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                let zf = z[i + 1];
                z[i + 1] = s * z[i] + c * zf;
                z[i] = c * z[i] - s * zf;
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(z)
}

/// Tolerances for the adaptive drivers.
#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub rel: f64,
    pub abs: f64,
}

impl Tolerance {
    pub const fn new(rel: f64, abs: f64) -> Self {
        Tolerance { rel, abs }
    }

    fn met(&self, cur: f64, prev: f64) -> bool {
        (cur - prev).abs() <= self.abs.max(self.rel * cur.abs())
    }

    fn bound(&self, cur: f64) -> f64 {
        self.abs.max(self.rel * cur.abs())
    }
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance::new(1e-12, 1e-15)
    }
}

pub const MAX_GAUSS_ORDER: usize = 1024;

/// Gauss-Legendre with order doubling from 8 points until two successive
/// orders agree.
pub fn gauss_legendre_adaptive<F: FnMut(f64) -> f64>(
    a: f64,
    b: f64,
    tol: Tolerance,
    mut f: F,
) -> Result<f64> {
    let mut n = 8;
    let mut prev = gauss_legendre(n).integrate_on(a, b, &mut f);
    while n < MAX_GAUSS_ORDER {
        n *= 2;
        let cur = gauss_legendre(n).integrate_on(a, b, &mut f);
        if tol.met(cur, prev) {
            return Ok(cur);
        }
        prev = cur;
    }
    let last = gauss_legendre(n).integrate_on(a, b, &mut f);
    Err(Error::Quadrature(QuadratureDiagnostics {
        method: "gauss-legendre",
        estimate: last,
        previous: prev,
        tolerance: tol.bound(last),
        resolution: n,
    }))
}

/// ∫_{-1}^{1} (1-v)^a (1+v)^b f(v) dv with order doubling from 8 points.
pub fn gauss_jacobi_adaptive<F: FnMut(f64) -> f64>(
    a: f64,
    b: f64,
    tol: Tolerance,
    mut f: F,
) -> Result<f64> {
    let mut n = 8;
    let mut prev = gauss_jacobi(n, a, b)?.integrate(&mut f);
    while n < MAX_GAUSS_ORDER {
        n *= 2;
        let cur = gauss_jacobi(n, a, b)?.integrate(&mut f);
        if tol.met(cur, prev) {
            return Ok(cur);
        }
        prev = cur;
    }
    Err(Error::Quadrature(QuadratureDiagnostics {
        method: "gauss-jacobi",
        estimate: prev,
        previous: prev,
        tolerance: tol.bound(prev),
        resolution: n,
    }))
}

/// Largest |t| in the tanh-sinh parameterization. At t = 6 the node sits
/// about 1e-275 (relative) from the endpoint, which is enough for endpoint
/// singularities as strong as s^-0.95.
const TS_TMAX: f64 = 6.0;
const TS_MAX_LEVEL: usize = 11;
const TS_MIN_LEVEL: usize = 3;

/// ∫_a^b f. The integrand is called as `f(x, x - a, b - x)`; the two
/// distances are exact to rounding even when x itself rounds to an endpoint.
pub fn tanh_sinh<F: FnMut(f64, f64, f64) -> f64>(
    a: f64,
    b: f64,
    tol: Tolerance,
    mut f: F,
) -> Result<f64> {
    tanh_sinh_dyn(a, b, tol, &mut f)
}

fn tanh_sinh_dyn(a: f64, b: f64, tol: Tolerance, f: &mut dyn FnMut(f64, f64, f64) -> f64) -> Result<f64> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::arg(format!("tanh_sinh on non-finite interval [{a}, {b}]")));
    }
    if a == b {
        return Ok(0.0);
    }
    if a > b {
        return Ok(-tanh_sinh_dyn(b, a, tol, &mut |x, dl, dr| f(x, dr, dl))?);
    }
    let half = 0.5 * (b - a);
    let mut eval = |t: f64| -> Result<f64> {
        let u = 0.5 * PI * t.sinh();
        let e = (-2.0 * u.abs()).exp();
        // 1 - tanh|u| and 1 + tanh|u|, both without cancellation
        let small = 2.0 * e / (1.0 + e);
        let large = 2.0 / (1.0 + e);
        let (dl, dr) = if u < 0.0 {
            (half * small, half * large)
        } else {
            (half * large, half * small)
        };
        // sech^2 u = 4e / (1+e)^2
        let w = half * 0.5 * PI * t.cosh() * 4.0 * e / ((1.0 + e) * (1.0 + e));
        // subnormal offsets carry no usable information and only overflow
        // power-law singularities; their weight is negligible anyway
        if w == 0.0 || dl < f64::MIN_POSITIVE || dr < f64::MIN_POSITIVE {
            return Ok(0.0);
        }
        let x = if u < 0.0 { a + dl } else { b - dr };
        let v = f(x, dl, dr);
        // Products of endpoint singularities can overflow in the far tail,
        // where the weight is comparable to the offset and the true
        // contribution of an integrable singularity is negligible.
        if !v.is_finite() && v != f64::NEG_INFINITY && !v.is_nan() && dl.min(dr) < half * 1e-60 {
            return Ok(0.0);
        }
        if !v.is_finite() {
            return Err(Error::Numeric(format!(
                "tanh-sinh integrand not finite at x = {x} (offsets {dl:e}, {dr:e})"
            )));
        }
        Ok(w * v)
    };

    let mut h = 0.5;
    let mut sum = eval(0.0)?;
    let mut k = 1;
    while k as f64 * h <= TS_TMAX {
        let t = k as f64 * h;
        sum += eval(t)? + eval(-t)?;
        k += 1;
    }
    let mut prev = h * sum;
    for level in 1..=TS_MAX_LEVEL {
        h *= 0.5;
        let mut k = 1;
        while k as f64 * h <= TS_TMAX {
            let t = k as f64 * h;
            sum += eval(t)? + eval(-t)?;
            k += 2;
        }
        let cur = h * sum;
        if level >= TS_MIN_LEVEL && tol.met(cur, prev) {
            return Ok(cur);
        }
        if level == TS_MAX_LEVEL {
            return Err(Error::Quadrature(QuadratureDiagnostics {
                method: "tanh-sinh",
                estimate: cur,
                previous: prev,
                tolerance: tol.bound(cur),
                resolution: level,
            }));
        }
        prev = cur;
    }
    unreachable!()
}

/// `tanh_sinh` for a fallible integrand; the first error aborts the result.
pub fn tanh_sinh_try<F: FnMut(f64, f64, f64) -> Result<f64>>(
    a: f64,
    b: f64,
    tol: Tolerance,
    mut f: F,
) -> Result<f64> {
    let mut err = None;
    let v = tanh_sinh(a, b, tol, |x, dl, dr| match f(x, dl, dr) {
        Ok(v) => v,
        Err(e) => {
            err.get_or_insert(e);
            0.0
        }
    });
    match err {
        Some(e) => Err(e),
        None => v,
    }
}

/// `gauss_legendre_adaptive` for a fallible integrand.
pub fn gauss_legendre_try<F: FnMut(f64) -> Result<f64>>(a: f64, b: f64, tol: Tolerance, mut f: F) -> Result<f64> {
    let mut err = None;
    let v = gauss_legendre_adaptive(a, b, tol, |x| match f(x) {
        Ok(v) => v,
        Err(e) => {
            err.get_or_insert(e);
            0.0
        }
    });
    match err {
        Some(e) => Err(e),
        None => v,
    }
}

/// Sum of `tanh_sinh` over consecutive pieces of a sorted breakpoint list.
/// The integrand receives `(x, x - p_i, p_{i+1} - x)` on piece i.
pub fn tanh_sinh_pieces<F: FnMut(f64, f64, f64) -> f64>(
    points: &[f64],
    tol: Tolerance,
    mut f: F,
) -> Result<f64> {
    let mut total = 0.0;
    for w in points.windows(2) {
        if w[1] > w[0] {
            total += tanh_sinh(w[0], w[1], tol, &mut f)?;
        }
    }
    Ok(total)
}

/// Sum with a fixed-shape pairwise tree; the result depends only on the
/// order of `xs`, never on how the caller chunked or parallelized the work.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        n if n <= 8 => xs.iter().sum(),
        n => {
            let mid = n / 2;
            pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
        }
    }
}
