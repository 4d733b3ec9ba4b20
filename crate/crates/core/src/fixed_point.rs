//! The self-similar profile ξ as a fixed point.
//!
//! ξ(t) = t^β/β solves the ODE pair
//!
//! ```text
//! (2ξ' + tξ'') ξ / (2(1-γ)) = t^{α+1},     t ξ'² = (2ξ' + tξ'') ξ / (2(1-γ))
//! ```
//!
//! and, after integrating the second equation, the fixed-point problem
//! g = 𝒯(g) with
//!
//! ```text
//! 𝒯(g)(t) = √( (2L/t) ∫_0^t (t-s) s g'(s)² ds ),   L = 3 - 2γ,
//! ```
//!
//! measured in the norm sup|g'|.
//!
//! Discretization: with f = g'², J(t) = ∫ s f and K(t) = ∫ s² f are
//! accumulated cell by cell, each cell integrating s^m times the cubic
//! Lagrange interpolant of f through four neighbouring nodes (product
//! integration). Then I = tJ - K, 𝒯 = √(2L I/t) and, exactly,
//! 𝒯' = L K/(t² 𝒯). A plain trapezoid rule gives I(t_1) = 0 and an
//! unbounded derivative at the first node, so it is not used.
//!
//! 𝒯 is positively homogeneous of degree one (𝒯(cg) = c𝒯(g) for c >= 0), so
//! fixed points are never isolated: every cξ is one, and so is a
//! one-parameter family ξ(t)(1 + dt + ...). The iteration therefore converges
//! to *a* fixed point that depends on the seed.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::quadrature::gauss_legendre;
use crate::tricomi::TricomiParams;

/// Values and derivatives on the uniform grid t_i = i T/(n-1), i = 0..n.
#[derive(Debug, Clone, PartialEq)]
pub struct C1Function {
    pub t_max: f64,
    pub values: Vec<f64>,
    pub derivatives: Vec<f64>,
}

pub const MIN_GRID: usize = 5;
pub const DEFAULT_GRID: usize = 2048;
pub const DEFAULT_TOL: f64 = 1e-8;

impl C1Function {
    pub fn new(t_max: f64, values: Vec<f64>, derivatives: Vec<f64>) -> Result<Self> {
        if !(t_max > 0.0) || !t_max.is_finite() {
            return Err(Error::Domain {
                func: "C1Function::new",
                arg: t_max,
                domain: "T in (0, inf)",
            });
        }
        if values.len() != derivatives.len() {
            return Err(Error::arg("values and derivatives differ in length"));
        }
        if values.len() < MIN_GRID {
            return Err(Error::arg(format!(
                "need at least {MIN_GRID} grid points, got {}",
                values.len()
            )));
        }
        if values.iter().chain(&derivatives).any(|v| !v.is_finite()) {
            return Err(Error::arg("non-finite value or derivative"));
        }
        Ok(C1Function {
            t_max,
            values,
            derivatives,
        })
    }

    pub fn from_fn(t_max: f64, n: usize, f: impl Fn(f64) -> f64, df: impl Fn(f64) -> f64) -> Result<Self> {
        if n < MIN_GRID {
            return Err(Error::arg(format!("need at least {MIN_GRID} grid points, got {n}")));
        }
        let h = t_max / (n - 1) as f64;
        let ts: Vec<f64> = (0..n).map(|i| i as f64 * h).collect();
        Self::new(t_max, ts.iter().map(|&t| f(t)).collect(), ts.iter().map(|&t| df(t)).collect())
    }

    /// ξ(t) = t^β/β sampled on n points.
    pub fn xi(params: &TricomiParams, t_max: f64, n: usize) -> Result<Self> {
        let b = params.beta();
        Self::from_fn(t_max, n, |t| t.powf(b) / b, |t| t.powf(b - 1.0))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dt(&self) -> f64 {
        self.t_max / (self.len() - 1) as f64
    }

    pub fn t(&self, i: usize) -> f64 {
        i as f64 * self.dt()
    }

    pub fn scaled(&self, c: f64) -> Self {
        C1Function {
            t_max: self.t_max,
            values: self.values.iter().map(|v| c * v).collect(),
            derivatives: self.derivatives.iter().map(|v| c * v).collect(),
        }
    }

    /// sup_i |g'_i - h'_i|: the norm of the fixed-point argument.
    pub fn derivative_gap(&self, other: &C1Function) -> f64 {
        self.derivatives
            .iter()
            .zip(&other.derivatives)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// max |g'_i - (g_{i+1} - g_{i-1})/(2dt)| over interior nodes.
    pub fn derivative_consistency(&self) -> f64 {
        let h = self.dt();
        (1..self.len() - 1)
            .map(|i| (self.derivatives[i] - (self.values[i + 1] - self.values[i - 1]) / (2.0 * h)).abs())
            .fold(0.0, f64::max)
    }

    fn prefix(&self, m: usize) -> C1Function {
        C1Function {
            t_max: self.t(m),
            values: self.values[..=m].to_vec(),
            derivatives: self.derivatives[..=m].to_vec(),
        }
    }
}

/// Max interior residuals of the two ODEs (second derivative by centered
/// differences of the stored derivative).
pub fn ode_residuals(params: &TricomiParams, g: &C1Function) -> Result<(f64, f64)> {
    if g.len() < MIN_GRID {
        return Err(Error::arg(format!("need at least {MIN_GRID} grid points")));
    }
    let h = g.dt();
    let denom = 2.0 * (1.0 - params.gamma);
    let mut r1: f64 = 0.0;
    let mut r2: f64 = 0.0;
    for i in 1..g.len() - 1 {
        let t = g.t(i);
        let d1 = g.derivatives[i];
        let d2 = (g.derivatives[i + 1] - g.derivatives[i - 1]) / (2.0 * h);
        let common = (2.0 * d1 + t * d2) * g.values[i] / denom;
        r1 = r1.max((common - t.powf(params.alpha + 1.0)).abs());
        r2 = r2.max((t * d1 * d1 - common).abs());
    }
    Ok((r1, r2))
}

/// Weights turning f at four nodes into ∫_cell s f and ∫_cell s² f.
struct CellWeights {
    nodes: [usize; 4],
    j: [f64; 4],
    k: [f64; 4],
}

fn cell_weights(n: usize, h: f64) -> Vec<CellWeights> {
    let gl = gauss_legendre(4);
    (0..n - 1)
        .map(|c| {
            let first = c.saturating_sub(1).min(n - 4);
            let nodes = [first, first + 1, first + 2, first + 3];
            let mut j = [0.0; 4];
            let mut k = [0.0; 4];
            for (&xq, &wq) in gl.nodes.iter().zip(&gl.weights) {
                // local coordinate τ in [c, c+1], in units of h
                let tau = c as f64 + 0.5 * (xq + 1.0);
                let w = 0.5 * wq;
                for a in 0..4 {
                    let mut la = 1.0;
                    for b in 0..4 {
                        if a != b {
                            la *= (tau - nodes[b] as f64) / (nodes[a] as f64 - nodes[b] as f64);
                        }
                    }
                    j[a] += w * tau * la;
                    k[a] += w * tau * tau * la;
                }
            }
            let (h2, h3) = (h * h, h * h * h);
            CellWeights {
                nodes,
                j: j.map(|v| v * h2),
                k: k.map(|v| v * h3),
            }
        })
        .collect()
}

/// Cumulative J_i = ∫_0^{t_i} s g'² and K_i = ∫_0^{t_i} s² g'².
fn moments(g: &C1Function) -> (Vec<f64>, Vec<f64>) {
    let n = g.len();
    let f: Vec<f64> = g.derivatives.iter().map(|d| d * d).collect();
    let mut jm = vec![0.0; n];
    let mut km = vec![0.0; n];
    for (c, w) in cell_weights(n, g.dt()).iter().enumerate() {
        let mut dj = 0.0;
        let mut dk = 0.0;
        for a in 0..4 {
            dj += w.j[a] * f[w.nodes[a]];
            dk += w.k[a] * f[w.nodes[a]];
        }
        jm[c + 1] = jm[c] + dj;
        km[c + 1] = km[c] + dk;
    }
    (jm, km)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TImage {
    pub function: C1Function,
    /// Grid points where the discrete radicand came out negative and was clamped to 0.
    pub clamped_points: usize,
}

pub fn apply_t(params: &TricomiParams, g: &C1Function) -> Result<TImage> {
    if g.values[0] != 0.0 {
        return Err(Error::arg(format!("g(0) = {} but the space requires g(0) = 0", g.values[0])));
    }
    let n = g.len();
    let l = params.l_const;
    let (jm, km) = moments(g);
    let mut values = vec![0.0; n];
    let mut derivs = vec![0.0; n];
    derivs[0] = g.derivatives[0].abs() * (l / 3.0).sqrt();
    let mut clamped = 0;
    for i in 1..n {
        let t = g.t(i);
        let mut integral = t * jm[i] - km[i];
        if integral < 0.0 {
            clamped += 1;
            integral = 0.0;
        }
        let v = (2.0 * l * integral / t).sqrt();
        values[i] = v;
        derivs[i] = if v > 0.0 { l * km[i] / (t * t * v) } else { 0.0 };
    }
    Ok(TImage {
        function: C1Function::new(g.t_max, values, derivs)?,
        clamped_points: clamped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractionReport {
    pub t_horizon: f64,
    /// Number of updates performed before the gap fell below tolerance
    /// (0 when the seed is already a fixed point).
    pub iterations: usize,
    /// sup|g_{k+1}' - g_k'| for every application of 𝒯.
    pub gaps: Vec<f64>,
    /// Geometric mean of successive gap ratios over the tail.
    pub fitted_ratio: Option<f64>,
    pub converged: bool,
    pub clamped_points: usize,
}

/// Gaps increasing this many times in a row (after burn-in) abort the run.
pub const DIVERGENCE_RUN: usize = 5;
const BURN_IN: usize = 3;

fn fitted_ratio(gaps: &[f64], floor: f64) -> Option<f64> {
    let usable: Vec<f64> = gaps.iter().skip(1).copied().take_while(|&g| g > floor).collect();
    if usable.len() < 2 {
        return None;
    }
    let logs: Vec<f64> = usable.windows(2).map(|w| (w[1] / w[0]).ln()).collect();
    Some((logs.iter().sum::<f64>() / logs.len() as f64).exp())
}

pub fn iterate_to_fixed_point(
    params: &TricomiParams,
    g0: &C1Function,
    t_horizon: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(C1Function, ContractionReport)> {
    check_horizon(g0, t_horizon)?;
    if !(tol > 0.0) {
        return Err(Error::arg(format!("tolerance must be positive, got {tol}")));
    }
    iterate_frozen(params, g0, t_horizon, tol, max_iter, 0)
}

fn check_horizon(g0: &C1Function, t_horizon: f64) -> Result<()> {
    if !(t_horizon > 0.0) || !t_horizon.is_finite() {
        return Err(Error::Domain {
            func: "iterate_to_fixed_point",
            arg: t_horizon,
            domain: "T in (0, inf)",
        });
    }
    if (g0.t_max - t_horizon).abs() > 1e-12 * t_horizon {
        return Err(Error::arg(format!(
            "seed is defined on [0, {}] but T = {t_horizon}",
            g0.t_max
        )));
    }
    Ok(())
}

/// Iterates 𝒯 while holding nodes 0..=frozen at their seed values.
fn iterate_frozen(
    params: &TricomiParams,
    g0: &C1Function,
    t_horizon: f64,
    tol: f64,
    max_iter: usize,
    frozen: usize,
) -> Result<(C1Function, ContractionReport)> {
    let scale = g0.derivatives.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let floor = 1e3 * f64::EPSILON * scale;
    let mut g = g0.clone();
    let mut gaps = Vec::new();
    let mut clamped = 0;
    let mut rising = 0;
    let report = |gaps: Vec<f64>, converged: bool, clamped: usize| ContractionReport {
        t_horizon,
        iterations: gaps.len().saturating_sub(1),
        fitted_ratio: fitted_ratio(&gaps, floor),
        gaps,
        converged,
        clamped_points: clamped,
    };
    for _ in 0..max_iter.max(1) {
        let mut next = apply_t(params, &g)?;
        clamped += next.clamped_points;
        if frozen > 0 {
            next.function.values[..=frozen].copy_from_slice(&g0.values[..=frozen]);
            next.function.derivatives[..=frozen].copy_from_slice(&g0.derivatives[..=frozen]);
        }
        let gap = next.function.derivative_gap(&g);
        if let Some(&last) = gaps.last() {
            if gaps.len() >= BURN_IN && gap > last {
                rising += 1;
            } else {
                rising = 0;
            }
        }
        gaps.push(gap);
        g = next.function;
        if gap < tol {
            return Ok((g, report(gaps, true, clamped)));
        }
        if rising >= DIVERGENCE_RUN {
            return Err(Error::NonContraction {
                t_horizon,
                report: Box::new(report(gaps, false, clamped)),
            });
        }
    }
    Ok((g, report(gaps, false, clamped)))
}

/// Solves on [0, jT/pieces] for j = 1..pieces, freezing the part already
/// solved. Requires (n-1) divisible by `pieces`.
pub fn iterate_with_continuation(
    params: &TricomiParams,
    g0: &C1Function,
    t_horizon: f64,
    pieces: usize,
    tol: f64,
    max_iter: usize,
) -> Result<(C1Function, Vec<ContractionReport>)> {
    check_horizon(g0, t_horizon)?;
    let cells = g0.len() - 1;
    if pieces == 0 || cells % pieces != 0 || cells / pieces < MIN_GRID {
        return Err(Error::arg(format!(
            "{cells} cells cannot be split into {pieces} pieces of at least {MIN_GRID}"
        )));
    }
    let step = cells / pieces;
    let mut current = g0.clone();
    let mut reports = Vec::with_capacity(pieces);
    for j in 1..=pieces {
        let m = j * step;
        let seed = current.prefix(m);
        let frozen = (j - 1) * step;
        let (solved, rep) = iterate_frozen(params, &seed, seed.t_max, tol, max_iter, frozen)?;
        current.values[..=m].copy_from_slice(&solved.values);
        current.derivatives[..=m].copy_from_slice(&solved.derivatives);
        reports.push(rep);
    }
    Ok((current, reports))
}

/// |2L ∫_0^T (T-s) s g'(s)² ds - T g(T)²| with the same product integration
/// used by 𝒯.
pub fn integral_identity_check(params: &TricomiParams, g: &C1Function, t_horizon: f64) -> Result<f64> {
    check_horizon(g, t_horizon)?;
    let (jm, km) = moments(g);
    let n = g.len() - 1;
    let lhs = 2.0 * params.l_const * (t_horizon * jm[n] - km[n]);
    let rhs = t_horizon * g.values[n] * g.values[n];
    Ok((lhs - rhs).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tricomi::make_params;

    #[test]
    fn ode_residuals_on_xi() {
        for alpha in [0.0, 2.0] {
            let p = make_params(alpha).unwrap();
            let g = C1Function::xi(&p, 1.0, 257).unwrap();
            let (r1, r2) = ode_residuals(&p, &g).unwrap();
            assert!(r1 < 1e-13 && r2 < 1e-13, "alpha={alpha} {r1} {r2}");
        }
        let p = make_params(5.0).unwrap();
        let dt2 = |n: usize| (1.0 / (n - 1) as f64).powi(2);
        let g = C1Function::xi(&p, 1.0, 257).unwrap();
        let (r1, r2) = ode_residuals(&p, &g).unwrap();
        assert!(r1 < 10.0 * dt2(257) && r2 < 10.0 * dt2(257));
    }

    #[test]
    fn ode_detects_non_solution() {
        let p = make_params(0.0).unwrap();
        let g = C1Function::from_fn(1.0, 101, |t| t * t, |t| 2.0 * t).unwrap();
        let (r1, r2) = ode_residuals(&p, &g).unwrap();
        assert!(r1 > 0.5 && r2 > 0.1);
    }

    #[test]
    fn grid_too_small() {
        assert!(C1Function::from_fn(1.0, 4, |t| t, |_| 1.0).is_err());
    }

    #[test]
    fn fixed_points_closed_form() {
        for (alpha, tol) in [(0.0, 1e-12), (1.0, 1e-12), (2.0, 1e-12)] {
            let p = make_params(alpha).unwrap();
            let g = C1Function::xi(&p, 1.0, 513).unwrap();
            let tg = apply_t(&p, &g).unwrap();
            assert_eq!(tg.clamped_points, 0);
            assert!(tg.function.derivative_gap(&g) < tol, "alpha={alpha}");
            assert_eq!(tg.function.values[0], 0.0);
        }
    }

    #[test]
    fn fixed_point_second_order_for_fractional_powers() {
        for alpha in [5.0, 7.3] {
            let p = make_params(alpha).unwrap();
            let gap = |n: usize| {
                let g = C1Function::xi(&p, 1.0, n).unwrap();
                apply_t(&p, &g).unwrap().function.derivative_gap(&g)
            };
            let (a, b) = (gap(257), gap(513));
            let dt2 = (1.0f64 / 512.0).powi(2);
            assert!(b < dt2, "alpha={alpha} gap={b}");
            assert!(a / b > 3.5, "alpha={alpha} ratio={}", a / b);
        }
    }

    #[test]
    fn origin_derivative_limit() {
        let p = make_params(0.0).unwrap();
        let g = C1Function::from_fn(1.0, 65, |t| 2.0 * t, |_| 2.0).unwrap();
        let tg = apply_t(&p, &g).unwrap().function;
        // 𝒯(2t) = 2t for α = 0
        assert!((tg.derivatives[0] - 2.0).abs() < 1e-15);
        assert!(tg.derivative_gap(&g) < 1e-12);
    }

    #[test]
    fn rejects_nonzero_origin() {
        let p = make_params(0.0).unwrap();
        let g = C1Function::from_fn(1.0, 9, |t| 1.0 + t, |_| 1.0).unwrap();
        assert!(apply_t(&p, &g).is_err());
    }

    #[test]
    fn exact_seed_converges_immediately() {
        let p = make_params(2.0).unwrap();
        let g = C1Function::xi(&p, 0.5, 513).unwrap();
        let (_, rep) = iterate_to_fixed_point(&p, &g, 0.5, 1e-8, 50).unwrap();
        assert!(rep.converged);
        assert_eq!(rep.iterations, 0);
    }

    #[test]
    fn horizon_must_match_seed() {
        let p = make_params(2.0).unwrap();
        let g = C1Function::xi(&p, 0.5, 65).unwrap();
        assert!(iterate_to_fixed_point(&p, &g, 1.0, 1e-8, 5).is_err());
        assert!(iterate_to_fixed_point(&p, &g, -1.0, 1e-8, 5).is_err());
    }

    #[test]
    fn homogeneity() {
        let p = make_params(2.0).unwrap();
        let g = C1Function::from_fn(0.5, 129, |t| t * t / 2.0 + t.powi(3), |t| t + 3.0 * t * t).unwrap();
        let a = apply_t(&p, &g.scaled(1.5)).unwrap().function;
        let b = apply_t(&p, &g).unwrap().function.scaled(1.5);
        assert!(a.derivative_gap(&b) < 1e-13);
    }

    #[test]
    fn integral_identity() {
        let p0 = make_params(0.0).unwrap();
        let g = C1Function::xi(&p0, 1.0, 257).unwrap();
        assert!(integral_identity_check(&p0, &g, 1.0).unwrap() < 1e-13);
        let p2 = make_params(2.0).unwrap();
        let g = C1Function::xi(&p2, 1.0, 257).unwrap();
        assert!(integral_identity_check(&p2, &g, 1.0).unwrap() < 1e-13);
        let cube = C1Function::from_fn(1.0, 257, |t| t.powi(3), |t| 3.0 * t * t).unwrap();
        let dt2 = (1.0f64 / 256.0).powi(2);
        assert!(integral_identity_check(&p0, &cube, 1.0).unwrap() > 10.0 * dt2);
    }

    #[test]
    fn derivative_consistency_of_image() {
        let p = make_params(2.0).unwrap();
        let g = C1Function::from_fn(1.0, 513, |t| t * t / 2.0 * (1.0 + 0.2 * t.sin()), |t| {
            t * (1.0 + 0.2 * t.sin()) + 0.1 * t * t * t.cos()
        })
        .unwrap();
        let tg = apply_t(&p, &g).unwrap().function;
        assert!(tg.derivative_consistency() < 1e-4);
    }

    mod props {
        use super::super::*;
        use crate::tricomi::make_params;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            // 𝒯 maps X into X: zero at the origin, finite derivatives
            #[test]
            fn maps_into_space(alpha in 0.0f64..8.0, a in 0.1f64..3.0, b in -1.0f64..1.0, c in -2.0f64..2.0) {
                let p = make_params(alpha).unwrap();
                let g = C1Function::from_fn(1.0, 65, |t| a * t + b * t * t + c * (t * t * t), |t| a + 2.0 * b * t + 3.0 * c * t * t).unwrap();
                let tg = apply_t(&p, &g).unwrap();
                prop_assert_eq!(tg.function.values[0], 0.0);
                prop_assert!(tg.function.derivatives.iter().all(|d| d.is_finite()));
                prop_assert!(tg.function.values.iter().all(|v| *v >= 0.0));
            }

            #[test]
            fn scales_linearly(alpha in 0.0f64..6.0, c in 0.0f64..4.0) {
                let p = make_params(alpha).unwrap();
                let g = C1Function::xi(&p, 0.7, 33).unwrap();
                let lhs = apply_t(&p, &g.scaled(c)).unwrap().function;
                let rhs = apply_t(&p, &g).unwrap().function.scaled(c);
                prop_assert!(lhs.derivative_gap(&rhs) < 1e-12 * (1.0 + c));
            }
        }
    }
}
