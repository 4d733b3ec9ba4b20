//! Noise paths, mollifiers and variance calculators.
//!
//! Variances of Wiener integrals are computed through kernel
//! autocorrelations rather than by squaring convolved kernels:
//!
//! ```text
//! A(s) = ∫ K(y) K(y+s) dy,      P = ρ * ρ,
//! ‖K * ρ‖²           = ∫ P(w) A(w) dw,
//! ‖K * ρ - K‖²       = ∫ P (A - A(0)) - 2 ∫ ρ (A - A(0))      (∫P = ∫ρ = 1)
//! ```
//!
//! and for fractional noise the same with A replaced by
//! G(w) = ∫ A(s) k(s+w) ds, k(u) = H(2H-1)|u|^{2H-2}.
//! The singular points of K, A and k all sit at quadrature breakpoints, and
//! the integrands are evaluated from exact endpoint offsets.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::quadrature::{gauss_legendre_try, tanh_sinh_try, Tolerance};
use crate::specialfn::{beta_fn, gamma_fn};
use crate::tricomi::{KernelSpec, KernelVariant};

/// A variance that may be infinite. Never encoded as a float infinity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Variance {
    Finite(f64),
    Infinite,
}

impl Variance {
    pub fn finite(&self) -> Option<f64> {
        match self {
            Variance::Finite(v) => Some(*v),
            Variance::Infinite => None,
        }
    }
}

pub const MAX_CELLS: usize = 100_000_000;
pub const MAX_CHOLESKY: usize = 4096;

/// Increments of a two-sided path on [-R, R], one per cell of width dx.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePath {
    pub x_min: f64,
    pub dx: f64,
    pub increments: Vec<f64>,
    pub hurst: f64,
    pub seed: u64,
}

impl NoisePath {
    pub fn cells(&self) -> usize {
        self.increments.len()
    }

    pub fn node(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.dx
    }

    pub fn midpoint(&self, i: usize) -> f64 {
        self.x_min + (i as f64 + 0.5) * self.dx
    }

    /// Index of the node at x = 0.
    pub fn origin(&self) -> usize {
        self.cells() / 2
    }

    /// B at grid node k, anchored so that B(0) = 0.
    pub fn value_at_node(&self, k: usize) -> f64 {
        let o = self.origin();
        if k >= o {
            self.increments[o..k].iter().sum()
        } else {
            -self.increments[k..o].iter().sum::<f64>()
        }
    }
}

fn grid_cells(r: f64, dx: f64) -> Result<usize> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::Domain {
            func: "noise grid",
            arg: r,
            domain: "R in (0, inf)",
        });
    }
    if !(dx > 0.0) || !dx.is_finite() {
        return Err(Error::Domain {
            func: "noise grid",
            arg: dx,
            domain: "dx in (0, inf)",
        });
    }
    let q = r / dx;
    let k = q.round();
    if k < 1.0 || (q - k).abs() > 1e-9 * q {
        return Err(Error::arg(format!("R/dx = {q} must be a positive integer")));
    }
    let cells = 2.0 * k;
    if cells > MAX_CELLS as f64 {
        return Err(Error::Resource(format!(
            "{cells} cells exceed the limit of {MAX_CELLS}"
        )));
    }
    Ok(cells as usize)
}

/// Independent N(0, dx) increments.
pub fn sample_brownian(r: f64, dx: f64, seed: u64) -> Result<NoisePath> {
    let cells = grid_cells(r, dx)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sd = dx.sqrt();
    let increments = (0..cells)
        .map(|_| sd * Distribution::<f64>::sample(&StandardNormal, &mut rng))
        .collect::<Vec<f64>>();
    Ok(NoisePath {
        x_min: -r,
        dx,
        increments,
        hurst: 0.5,
        seed,
    })
}

/// Standard normals for one path, from the stream seeded with `seed`.
pub fn standard_normals(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Covariance of fractional Gaussian noise at lag k on cells of width dx.
pub fn fgn_covariance(k: usize, dx: f64, hurst: f64) -> f64 {
    let h2 = 2.0 * hurst;
    let k = k as f64;
    0.5 * dx.powf(h2) * ((k + 1.0).powf(h2) - 2.0 * k.powf(h2) + (k - 1.0).abs().powf(h2))
}

/// Lower Cholesky factor of the fGn covariance matrix, packed by rows.
#[derive(Debug)]
pub struct FbmFactor {
    pub n: usize,
    pub dx: f64,
    pub hurst: f64,
    packed: Vec<f64>,
}

fn check_hurst(func: &'static str, hurst: f64, allow_half: bool) -> Result<()> {
    let ok = if allow_half {
        (0.5..1.0).contains(&hurst)
    } else {
        hurst > 0.5 && hurst < 1.0
    };
    if !ok {
        return Err(Error::Domain {
            func,
            arg: hurst,
            domain: if allow_half { "H in [0.5, 1)" } else { "H in (0.5, 1)" },
        });
    }
    Ok(())
}

impl FbmFactor {
    /// Cached per (n, dx, H); the factor is immutable and shared read-only.
    pub fn new(n: usize, dx: f64, hurst: f64) -> Result<Arc<FbmFactor>> {
        check_hurst("FbmFactor::new", hurst, true)?;
        if n == 0 {
            return Err(Error::arg("fBm factor needs at least one cell"));
        }
        if n > MAX_CHOLESKY {
            return Err(Error::Resource(format!(
                "Cholesky fBm is limited to {MAX_CHOLESKY} cells, requested {n}"
            )));
        }
        type Key = (usize, u64, u64);
        static CACHE: OnceLock<Mutex<HashMap<Key, Arc<FbmFactor>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let key = (n, dx.to_bits(), hurst.to_bits());
        if let Some(f) = cache.lock().expect("fbm cache poisoned").get(&key) {
            return Ok(f.clone());
        }
        let f = Arc::new(Self::build(n, dx, hurst)?);
        cache.lock().expect("fbm cache poisoned").insert(key, f.clone());
        Ok(f)
    }

    fn build(n: usize, dx: f64, hurst: f64) -> Result<FbmFactor> {
        let cov: Vec<f64> = (0..n).map(|k| fgn_covariance(k, dx, hurst)).collect();
        let mut packed = vec![0.0; n * (n + 1) / 2];
        for i in 0..n {
            let start = i * (i + 1) / 2;
            let (prev, cur) = packed.split_at_mut(start);
            for j in 0..=i {
                let dot: f64 = if j == i {
                    cur[..j].iter().map(|v| v * v).sum()
                } else {
                    let rj = &prev[j * (j + 1) / 2..j * (j + 1) / 2 + j];
                    cur[..j].iter().zip(rj).map(|(a, b)| a * b).sum()
                };
                let s = cov[i - j] - dot;
                if j == i {
                    if !(s > 0.0) {
                        return Err(Error::Numeric(format!(
                            "fGn covariance not numerically positive definite at row {i} of {n}; use a smaller grid"
                        )));
                    }
                    cur[i] = s.sqrt();
                } else {
                    let ljj = prev[j * (j + 1) / 2 + j];
                    cur[j] = s / ljj;
                }
            }
        }
        Ok(FbmFactor { n, dx, hurst, packed })
    }

    fn row(&self, i: usize) -> &[f64] {
        let s = i * (i + 1) / 2;
        &self.packed[s..s + i + 1]
    }

    /// L z: correlated increments from standard normals.
    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).iter().zip(z).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Lᵀ f. Then Σ f_i (Lz)_i = (Lᵀf)·z, so many integrals against one
    /// path cost a single dot product each.
    pub fn apply_transpose(&self, f: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (i, &fi) in f.iter().enumerate().take(self.n) {
            if fi != 0.0 {
                for (o, l) in out.iter_mut().zip(self.row(i)) {
                    *o += l * fi;
                }
            }
        }
        out
    }
}

/// Fractional Brownian increments via Cholesky. H = 1/2 is accepted and
/// reproduces white increments.
pub fn sample_fbm(r: f64, dx: f64, hurst: f64, seed: u64) -> Result<NoisePath> {
    check_hurst("sample_fbm", hurst, true)?;
    let cells = grid_cells(r, dx)?;
    let factor = FbmFactor::new(cells, dx, hurst)?;
    let z = standard_normals(cells, seed);
    Ok(NoisePath {
        x_min: -r,
        dx,
        increments: factor.apply(&z),
        hurst,
        seed,
    })
}

/// Σ f(midpoint_i) ΔB_i.
pub fn wiener_integral(path: &NoisePath, f: impl Fn(f64) -> f64) -> Result<f64> {
    let mut acc = 0.0;
    for (i, inc) in path.increments.iter().enumerate() {
        let m = path.midpoint(i);
        let v = f(m);
        if !v.is_finite() {
            return Err(Error::Numeric(format!("integrand not finite at midpoint {m}")));
        }
        acc += v * inc;
    }
    Ok(acc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MollifierFamily {
    /// C exp(-1/(1-u²)), C^∞.
    Bump,
    /// c (1-u²)^4, C³ at the edge of the support.
    PolyBump,
}

impl MollifierFamily {
    pub fn label(&self) -> &'static str {
        match self {
            MollifierFamily::Bump => "bump",
            MollifierFamily::PolyBump => "poly-bump",
        }
    }
}

/// ∫_{-1}^{1} exp(-1/(1-u²)) du.
pub const BUMP_MASS: f64 = 0.443_993_816_168_079_437_823_048_9;
/// 1 / ∫_{-1}^{1} (1-u²)^4 du.
pub const POLY_BUMP_CONST: f64 = 315.0 / 256.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MollifierSpec {
    pub family: MollifierFamily,
    pub n: u64,
    pub radius: f64,
}

impl MollifierSpec {
    /// ρ_n with radius 1/n.
    pub fn new(family: MollifierFamily, n: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::arg("mollifier index n must be >= 1"));
        }
        Self::with_radius(family, n, 1.0 / n as f64)
    }

    pub fn with_radius(family: MollifierFamily, n: u64, radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::Domain {
                func: "MollifierSpec",
                arg: radius,
                domain: "radius in (0, inf)",
            });
        }
        Ok(MollifierSpec { family, n, radius })
    }

    pub fn eval(&self, x: f64) -> f64 {
        let u = x / self.radius;
        if u.abs() >= 1.0 {
            return 0.0;
        }
        let q = (1.0 - u) * (1.0 + u);
        match self.family {
            MollifierFamily::Bump => (-1.0 / q).exp() / (BUMP_MASS * self.radius),
            MollifierFamily::PolyBump => POLY_BUMP_CONST * q.powi(4) / self.radius,
        }
    }

    /// P(w) = ∫ ρ(p) ρ(p - w) dp, supported on [-2r, 2r].
    pub fn autocorrelation(&self, w: f64) -> Result<f64> {
        let w = w.abs();
        let r = self.radius;
        if w >= 2.0 * r {
            return Ok(0.0);
        }
        let tol = Tolerance::new(1e-13, 1e-16 / r);
        gauss_legendre_try(w - r, r, tol, |p| Ok(self.eval(p) * self.eval(p - w)))
    }
}

pub fn mollifier_eval(spec: &MollifierSpec, x: f64) -> f64 {
    spec.eval(x)
}

fn inner_tol() -> Tolerance {
    Tolerance::new(1e-12, 1e-15)
}

fn outer_tol() -> Tolerance {
    Tolerance::new(1e-10, 1e-14)
}

/// (K * ρ̌)(z) = ∫ K(y) ρ(y - z) dy.
pub fn mollified_kernel(kernel: &KernelSpec, spec: &MollifierSpec, z: f64) -> Result<f64> {
    let s = kernel.support();
    let r = spec.radius;
    let a = s.lo.max(z - r);
    let b = s.hi.min(z + r);
    if s.is_empty() || a >= b {
        return Ok(0.0);
    }
    let left_is_lo = a == s.lo;
    let right_is_hi = b == s.hi;
    tanh_sinh_try(a, b, inner_tol(), |y, dl, dr| {
        let d = if left_is_lo { dl } else { y - s.lo };
        let e = if right_is_hi { dr } else { s.hi - y };
        Ok(kernel.eval_at_offsets(d, e)? * spec.eval(y - z))
    })
}

/// ‖K‖²_{L²}.
pub fn l2_variance(kernel: &KernelSpec) -> Result<Variance> {
    let t = kernel.t;
    if t == 0.0 {
        return Ok(Variance::Finite(0.0));
    }
    match kernel.variant {
        KernelVariant::TricomiAlpha(p) => {
            let g = p.gamma;
            let xi = kernel.radius();
            let beta_int = std::f64::consts::PI.sqrt() * gamma_fn(1.0 - 2.0 * g)? / gamma_fn(1.5 - 2.0 * g)?;
            Ok(Variance::Finite(t * t / (4.0 * xi) * p.c_hat * p.c_hat * beta_int))
        }
        KernelVariant::Wave => Ok(Variance::Finite(0.5 * t)),
        KernelVariant::TricomiLower => Ok(Variance::Infinite),
        KernelVariant::WaveLower => l2_variance_quadrature(kernel),
    }
}

/// ∫ K² by quadrature, used to cross-check the closed forms.
pub fn l2_variance_quadrature(kernel: &KernelSpec) -> Result<Variance> {
    if matches!(kernel.variant, KernelVariant::TricomiLower) && kernel.t > 0.0 {
        return Ok(Variance::Infinite);
    }
    let s = kernel.support();
    if s.is_empty() {
        return Ok(Variance::Finite(0.0));
    }
    let v = tanh_sinh_try(s.lo, s.hi, inner_tol(), |_, d, e| {
        let k = kernel.eval_at_offsets(d, e)?;
        Ok(k * k)
    })?;
    Ok(Variance::Finite(v))
}

/// ∫ K_p K_q: the white-noise covariance of the solutions at two points.
pub fn overlap_integral(p: &KernelSpec, q: &KernelSpec) -> Result<Variance> {
    let (sp, sq) = (p.support(), q.support());
    let a = sp.lo.max(sq.lo);
    let b = sp.hi.min(sq.hi);
    if sp.is_empty() || sq.is_empty() || a >= b {
        return Ok(Variance::Finite(0.0));
    }
    if p == q {
        return l2_variance(p);
    }
    // two inverse square roots meeting at a common left edge
    let lower = |k: &KernelSpec| matches!(k.variant, KernelVariant::TricomiLower);
    if lower(p) && lower(q) && sp.lo == sq.lo {
        return Ok(Variance::Infinite);
    }
    let v = tanh_sinh_try(a, b, inner_tol(), |y, dl, dr| {
        let offsets = |s: &crate::tricomi::Support| {
            let d = if a == s.lo { dl } else { y - s.lo };
            let e = if b == s.hi { dr } else { s.hi - y };
            (d, e)
        };
        let (dp, ep) = offsets(&sp);
        let (dq, eq) = offsets(&sq);
        Ok(p.eval_at_offsets(dp, ep)? * q.eval_at_offsets(dq, eq)?)
    })?;
    Ok(Variance::Finite(v))
}

/// ∫ K over each cell [x_min + i dx, x_min + (i+1) dx], as (index, value)
/// for the cells that meet the support.
pub fn cell_integrals(kernel: &KernelSpec, x_min: f64, dx: f64, cells: usize) -> Result<Vec<(usize, f64)>> {
    let s = kernel.support();
    if s.is_empty() {
        return Ok(Vec::new());
    }
    let first = ((s.lo - x_min) / dx).floor().max(0.0) as usize;
    let last = (((s.hi - x_min) / dx).ceil().max(0.0) as usize).min(cells);
    let mut out = Vec::with_capacity(last.saturating_sub(first));
    for i in first..last {
        let c0 = x_min + i as f64 * dx;
        let a = s.lo.max(c0);
        let b = s.hi.min(c0 + dx);
        if a >= b {
            continue;
        }
        let v = tanh_sinh_try(a, b, inner_tol(), |y, dl, dr| {
            let d = if a == s.lo { dl } else { y - s.lo };
            let e = if b == s.hi { dr } else { s.hi - y };
            kernel.eval_at_offsets(d, e)
        })?;
        out.push((i, v));
    }
    Ok(out)
}

/// L² mass of the lower-order kernel on [x - t²/2 + eps, x + t²/2]: ¼ ln(t²/eps).
pub fn truncated_lower_variance(t: f64, eps: f64) -> Result<f64> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::Domain {
            func: "truncated_lower_variance",
            arg: t,
            domain: "t in (0, inf)",
        });
    }
    if !(eps > 0.0) || eps >= t * t {
        return Err(Error::arg(format!("need 0 < eps < t² = {}, got {eps}", t * t)));
    }
    Ok(0.25 * (t * t / eps).ln())
}

/// A(s) = ∫ K(y) K(y+s) dy. Closed forms for Wave and TricomiLower.
/// Infinite at s = 0 for TricomiLower, reported as `Singular`.
pub fn autocorrelation(kernel: &KernelSpec, s: f64) -> Result<f64> {
    let s = s.abs();
    let sup = kernel.support();
    let len = sup.len();
    if sup.is_empty() || s >= len {
        return Ok(0.0);
    }
    match kernel.variant {
        KernelVariant::Wave => Ok(0.25 * (len - s)),
        KernelVariant::TricomiLower => {
            if s == 0.0 {
                return Err(Error::Singular { y: sup.lo });
            }
            Ok(0.5 * ((len.sqrt() + (len - s).sqrt()) / s.sqrt()).ln())
        }
        KernelVariant::TricomiAlpha(_) if s == 0.0 => Ok(l2_variance(kernel)?.finite().unwrap_or(f64::NAN)),
        _ => autocorrelation_numeric(kernel, s),
    }
}

/// A(s) by direct quadrature for any variant (s > 0 for TricomiLower).
pub fn autocorrelation_numeric(kernel: &KernelSpec, s: f64) -> Result<f64> {
    let s = s.abs();
    let sup = kernel.support();
    let len = sup.len();
    if sup.is_empty() || s >= len {
        return Ok(0.0);
    }
    // y = lo + u, u in (0, len - s); K(y) has offsets (u, s + dr), K(y+s) has (u + s, dr)
    tanh_sinh_try(0.0, len - s, inner_tol(), |_, dl, dr| {
        Ok(kernel.eval_at_offsets(dl, s + dr)? * kernel.eval_at_offsets(dl + s, dr)?)
    })
}

fn h_weight(hurst: f64, u: f64) -> f64 {
    hurst * (2.0 * hurst - 1.0) * u.abs().powf(2.0 * hurst - 2.0)
}

/// (H/2) B(1/2, 2H-1) t^{4H-2}: the 𝓗-norm of the lower-order kernel.
pub fn h_norm_closed_form_lower(t: f64, hurst: f64) -> Result<f64> {
    check_hurst("h_norm_closed_form_lower", hurst, false)?;
    Ok(0.5 * hurst * beta_fn(0.5, 2.0 * hurst - 1.0)? * t.powf(4.0 * hurst - 2.0))
}

/// H(2H-1) ∫∫ K(y) K(z) |y-z|^{2H-2} dy dz over the triangle z < y, doubled.
///
/// With q = 1/(2H-1), y - z = (y - lo)·s^q turns the diagonal weight into
/// the constant H ds, and y - lo = len·w^q tames the edge singularity the
/// same way; both maps keep the integrands bounded even as H → 1/2.
pub fn h_norm_variance(kernel: &KernelSpec, hurst: f64) -> Result<f64> {
    check_hurst("h_norm_variance", hurst, false)?;
    let sup = kernel.support();
    if sup.is_empty() {
        return Ok(0.0);
    }
    let len = sup.len();
    let q = 1.0 / (2.0 * hurst - 1.0);
    // 1 - x^q from the offset 1 - x, without cancellation
    let one_minus_pow = |off: f64| -(q * (-off).ln_1p()).exp_m1();
    // Below y - lo = 1e-280·len the inner offsets would underflow. The
    // mass left out is a relative (1e-280)^{2H-1} at worst (edge singularity
    // y^{-1/2}); starting the range there keeps the integrand smooth.
    let w_min = 1e-280f64.powf(1.0 / q);
    let outer = tanh_sinh_try(w_min, 1.0, outer_tol(), |w, _, w_hi| {
        let dl = len * w.powf(q);
        let dr = len * one_minus_pow(w_hi);
        let ky = kernel.eval_at_offsets(dl, dr)?;
        let inner = tanh_sinh_try(0.0, 1.0, inner_tol(), |s, _, s_hi| {
            // z - lo = dl·(1 - s^q), y - z = dl·s^q
            let v = s.powf(q);
            let a = dl * one_minus_pow(s_hi);
            if a < f64::MIN_POSITIVE {
                return Ok(0.0);
            }
            Ok(kernel.eval_at_offsets(a, dl * v + dr)?)
        })?;
        // dl^{2H-1} · d(dl)/dw = len^{2H} q w^q
        Ok(hurst * len.powf(2.0 * hurst) * q * w.powf(q) * ky * inner)
    })?;
    Ok(2.0 * outer)
}

/// G(w) = ∫ A(s) k(s + w) ds; G(0) is the 𝓗-norm of K.
pub fn h_autocorrelation(kernel: &KernelSpec, hurst: f64, w: f64) -> Result<f64> {
    check_hurst("h_autocorrelation", hurst, false)?;
    let len = kernel.support().len();
    if len <= 0.0 {
        return Ok(0.0);
    }
    let w = w.abs();
    let mut pts = vec![-len, 0.0, len];
    if w < len {
        pts.push(-w);
    }
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let mut total = 0.0;
    for p in pts.windows(2) {
        let (a, b) = (p[0], p[1]);
        total += tanh_sinh_try(a, b, inner_tol(), |s, dl, dr| {
            let shift = if a == -w {
                dl
            } else if b == -w {
                dr
            } else {
                (s + w).abs()
            };
            let abs_s = if a == 0.0 {
                dl
            } else if b == 0.0 {
                dr
            } else {
                s.abs()
            };
            Ok(autocorrelation(kernel, abs_s)? * h_weight(hurst, shift))
        })?;
    }
    Ok(total)
}

/// Analytic variance and gap for one mollifier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MollifiedVariance {
    /// ‖K * ρ_n‖² in the relevant norm.
    pub variance: f64,
    /// ‖K * ρ_n - K‖², when ‖K‖ is finite.
    pub gap: Option<f64>,
}

/// ∫_{-2r}^{2r} P(w) c(w) dw - 2 ∫_{-r}^{r} ρ(w) c(w) dw for even c, with
/// c = corr - corr(0) when the limit is finite.
fn mollified_pair<C>(kernel: &KernelSpec, spec: &MollifierSpec, corr: C, at_zero: Option<f64>) -> Result<MollifiedVariance>
where
    C: Fn(f64) -> Result<f64>,
{
    let r = spec.radius;
    let len = kernel.support().len();
    let mut pts = vec![0.0, 2.0 * r];
    if len > 0.0 && len < 2.0 * r {
        pts.push(len);
    }
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let piece_sum = |f: &dyn Fn(f64) -> Result<f64>, pts: &[f64]| -> Result<f64> {
        let mut total = 0.0;
        for p in pts.windows(2) {
            let a = p[0];
            total += tanh_sinh_try(p[0], p[1], outer_tol(), |w, dl, _| f(if a == 0.0 { dl } else { w }))?;
        }
        Ok(total)
    };
    let variance = 2.0 * piece_sum(&|w| Ok(spec.autocorrelation(w)? * corr(w)?), &pts)?;
    let gap = match at_zero {
        None => None,
        Some(c0) => {
            let p_part = 2.0 * piece_sum(&|w| Ok(spec.autocorrelation(w)? * (corr(w)? - c0)), &pts)?;
            let mut rho_pts = vec![0.0, r];
            if len > 0.0 && len < r {
                rho_pts.push(len);
            }
            rho_pts.sort_by(f64::total_cmp);
            let rho_part = 2.0 * piece_sum(&|w| Ok(spec.eval(w) * (corr(w)? - c0)), &rho_pts)?;
            Some(p_part - 2.0 * rho_part)
        }
    };
    Ok(MollifiedVariance { variance, gap })
}

/// White-noise variance ‖K*ρ_n‖²_{L²} and gap ‖K*ρ_n - K‖²_{L²}.
pub fn mollified_l2(kernel: &KernelSpec, spec: &MollifierSpec) -> Result<MollifiedVariance> {
    let a0 = l2_variance(kernel)?.finite();
    mollified_pair(kernel, spec, |w| autocorrelation(kernel, w), a0)
}

/// Fractional-noise variance and gap in the 𝓗 norm.
pub fn mollified_h(kernel: &KernelSpec, spec: &MollifierSpec, hurst: f64) -> Result<MollifiedVariance> {
    check_hurst("mollified_h", hurst, false)?;
    let g0 = h_autocorrelation(kernel, hurst, 0.0)?;
    mollified_pair(kernel, spec, |w| h_autocorrelation(kernel, hurst, w), Some(g0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceCurve {
    pub n_values: Vec<u64>,
    pub r_values: Vec<f64>,
    pub variances: Vec<f64>,
    pub closed_form_limit: Variance,
    /// Slope of variance against ln(1/r_n), when fitted.
    pub fitted_log_slope: Option<f64>,
}
