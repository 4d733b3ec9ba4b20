//! Convergence studies: one pipeline, four configurations.
//!
//! For each n the analytic variance of the mollified solution and its L²(Ω)
//! distance to the limit come from `noise`; a few n values are also checked
//! against Monte Carlo over shared noise paths.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::noise::{
    h_norm_variance, l2_variance, mollified_h, mollified_kernel, mollified_l2, sample_brownian,
    standard_normals, wiener_integral, FbmFactor, MollifierFamily, MollifierSpec, Variance,
    VarianceCurve,
};
use crate::quadrature::pairwise_sum;
use crate::tricomi::{make_params, KernelSpec, KernelVariant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudyVariant {
    Tricomi,
    TricomiLower,
    Wave,
    WaveLower,
}

impl StudyVariant {
    pub fn label(&self) -> &'static str {
        match self {
            StudyVariant::Tricomi => "tricomi",
            StudyVariant::TricomiLower => "tricomi-lower",
            StudyVariant::Wave => "wave",
            StudyVariant::WaveLower => "wave-lower",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyConfig {
    pub variant: StudyVariant,
    pub alpha: f64,
    pub t: f64,
    pub x: f64,
    pub family: MollifierFamily,
    pub n_values: Vec<u64>,
    /// `None` for white noise.
    pub hurst: Option<f64>,
    pub paths: usize,
    pub seed: u64,
    /// Relative gap at the last n below which the curve counts as converged.
    pub tolerance: f64,
    /// Run the Monte Carlo cross-check.
    pub empirical: bool,
}

pub const DEFAULT_MAX_K: u32 = 14;
pub const DEFAULT_PATHS: usize = 10_000;
pub const DEFAULT_TOLERANCE: f64 = 0.01;
pub const MIN_PATHS: usize = 100;
/// Grid budget for shared white-noise paths (cells per path).
pub const WHITE_CELLS: usize = 1 << 16;
/// Grid budget for the Cholesky fBm factor.
pub const FRACTIONAL_CELLS: usize = 2048;
/// Cells per mollifier radius required before a radius counts as resolved.
pub const CELLS_PER_RADIUS: f64 = 8.0;
pub const EMPIRICAL_POINTS: usize = 3;

/// n = 2^k, k = 0..=max_k.
pub fn dyadic_schedule(max_k: u32) -> Vec<u64> {
    (0..=max_k).map(|k| 1u64 << k).collect()
}

impl StudyConfig {
    pub fn new(variant: StudyVariant) -> Self {
        StudyConfig {
            variant,
            alpha: 2.0,
            t: 1.0,
            x: 0.0,
            family: MollifierFamily::Bump,
            n_values: dyadic_schedule(DEFAULT_MAX_K),
            hurst: None,
            paths: DEFAULT_PATHS,
            seed: 42,
            tolerance: DEFAULT_TOLERANCE,
            empirical: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_values.is_empty() {
            return Err(Error::arg("n schedule is empty"));
        }
        if self.n_values[0] == 0 {
            return Err(Error::arg("n schedule must start at n >= 1"));
        }
        if self.n_values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::arg("n schedule must be strictly increasing"));
        }
        if self.paths < MIN_PATHS {
            return Err(Error::arg(format!("paths = {} is below the minimum {MIN_PATHS}", self.paths)));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::arg("tolerance must be positive"));
        }
        if let Some(h) = self.hurst {
            if !(h > 0.5 && h < 1.0) {
                return Err(Error::Domain {
                    func: "study",
                    arg: h,
                    domain: "H in (0.5, 1)",
                });
            }
        }
        self.kernel().map(|_| ())
    }

    pub fn kernel(&self) -> Result<KernelSpec> {
        let v = match self.variant {
            StudyVariant::Tricomi => KernelVariant::TricomiAlpha(make_params(self.alpha)?),
            StudyVariant::TricomiLower => KernelVariant::TricomiLower,
            StudyVariant::Wave => KernelVariant::Wave,
            StudyVariant::WaveLower => KernelVariant::WaveLower,
        };
        KernelSpec::new(v, self.t, self.x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Converges,
    Diverges,
    Inconclusive,
    /// Fewer than two schedule points.
    NoVerdict,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least squares y = slope·x + intercept.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<LogFit> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some(LogFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
    })
}

/// Aitken Δ² on the last three terms. A limit is reported only when the
/// increments contract geometrically (ratio in (-1, 0.95)); a curve growing
/// by equal steps per doubling of n has ratio ≈ 1 and no finite asymptote.
pub fn aitken_limit(values: &[f64]) -> Option<f64> {
    if values.len() < 3 {
        return None;
    }
    let k = values.len();
    let (a, b, c) = (values[k - 3], values[k - 2], values[k - 1]);
    let d1 = b - a;
    let d2 = c - b;
    if d1 == 0.0 {
        return (d2 == 0.0).then_some(c);
    }
    let q = d2 / d1;
    if !(q > -1.0 && q < 0.95) {
        return None;
    }
    Some(c - d2 * d2 / (d2 - d1))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalCheck {
    pub n: u64,
    pub r_n: f64,
    pub paths: usize,
    pub dx: f64,
    pub empirical_variance: f64,
    pub std_error: f64,
    pub analytic_variance: f64,
    pub z_score: f64,
    pub within_4_sigma: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub study: &'static str,
    pub variant: StudyVariant,
    pub alpha: Option<f64>,
    pub t: f64,
    pub x: f64,
    pub noise: &'static str,
    pub hurst: Option<f64>,
    pub family: MollifierFamily,
    pub curve: VarianceCurve,
    /// E[(U_n - U)²] per n; absent when the limit is infinite.
    pub gaps: Vec<Option<f64>>,
    pub final_relative_gap: Option<f64>,
    pub gap_monotone: Option<bool>,
    pub strictly_increasing: bool,
    pub log_fit: Option<LogFit>,
    pub aitken_limit: Option<f64>,
    pub empirical: Vec<EmpiricalCheck>,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Noise {
    White,
    Fractional(f64),
}

/// Analytic solution variance ‖K * ρ_n‖² and the limit/gap pair, in the norm
/// selected by the noise.
pub fn study_tricomi_convergence(cfg: &StudyConfig) -> Result<ConvergenceReport> {
    if cfg.variant != StudyVariant::Tricomi {
        return Err(Error::arg("the convergence study needs the tricomi variant"));
    }
    if cfg.hurst.is_some() {
        return Err(Error::arg("the convergence study uses white noise"));
    }
    pipeline(cfg, "tricomi-convergence", Noise::White)
}

/// Any variant under white noise; for the lower-order Tricomi kernel the
/// limit is infinite and the verdict decides between growth and saturation.
pub fn study_lower_order_divergence(cfg: &StudyConfig) -> Result<ConvergenceReport> {
    if cfg.hurst.is_some() {
        return Err(Error::arg("the divergence study uses white noise"));
    }
    pipeline(cfg, "lower-order-divergence", Noise::White)
}

pub fn study_fractional_restoration(cfg: &StudyConfig) -> Result<ConvergenceReport> {
    let h = cfg.hurst.ok_or(Error::Domain {
        func: "study_fractional_restoration",
        arg: 0.5,
        domain: "H in (0.5, 1)",
    })?;
    pipeline(cfg, "fractional-restoration", Noise::Fractional(h))
}

pub fn study_wave_comparison(cfg: &StudyConfig) -> Result<ConvergenceReport> {
    if !matches!(cfg.variant, StudyVariant::Wave | StudyVariant::WaveLower) {
        return Err(Error::arg("the wave comparison needs the wave or wave-lower variant"));
    }
    if cfg.hurst.is_some() {
        return Err(Error::arg("the wave comparison uses white noise"));
    }
    pipeline(cfg, "wave-comparison", Noise::White)
}

/// Dispatch on (variant, noise).
pub fn run_study(cfg: &StudyConfig) -> Result<ConvergenceReport> {
    match (cfg.variant, cfg.hurst) {
        (_, Some(_)) => study_fractional_restoration(cfg),
        (StudyVariant::Tricomi, None) => study_tricomi_convergence(cfg),
        (StudyVariant::TricomiLower, None) => study_lower_order_divergence(cfg),
        (StudyVariant::Wave | StudyVariant::WaveLower, None) => study_wave_comparison(cfg),
    }
}

fn pipeline(cfg: &StudyConfig, study: &'static str, noise: Noise) -> Result<ConvergenceReport> {
    cfg.validate()?;
    let kernel = cfg.kernel()?;
    let specs = cfg
        .n_values
        .iter()
        .map(|&n| MollifierSpec::new(cfg.family, n))
        .collect::<Result<Vec<_>>>()?;

    let limit = match noise {
        Noise::White => l2_variance(&kernel)?,
        Noise::Fractional(h) => Variance::Finite(h_norm_variance(&kernel, h)?),
    };
    let points = specs
        .par_iter()
        .map(|spec| match noise {
            Noise::White => mollified_l2(&kernel, spec),
            Noise::Fractional(h) => mollified_h(&kernel, spec, h),
        })
        .collect::<Result<Vec<_>>>()?;
    let variances: Vec<f64> = points.iter().map(|p| p.variance).collect();
    let gaps: Vec<Option<f64>> = points.iter().map(|p| p.gap).collect();
    let r_values: Vec<f64> = specs.iter().map(|s| s.radius).collect();

    let xs: Vec<f64> = r_values.iter().map(|r| (1.0 / r).ln()).collect();
    let log_fit = linear_fit(&xs, &variances);
    let strictly_increasing = variances.len() >= 2 && variances.windows(2).all(|w| w[1] > w[0]);
    let aitken = aitken_limit(&variances);
    let final_relative_gap = match (limit, gaps.last().copied().flatten()) {
        (Variance::Finite(l), Some(g)) if l > 0.0 => Some(g.max(0.0) / l),
        (Variance::Finite(_), Some(g)) => Some(g.abs()),
        _ => None,
    };
    let gap_monotone = if gaps.iter().all(Option::is_some) && gaps.len() >= 2 {
        Some(gaps.windows(2).all(|w| w[1].unwrap() <= w[0].unwrap()))
    } else {
        None
    };

    let verdict = if cfg.n_values.len() < 2 {
        Verdict::NoVerdict
    } else {
        match limit {
            Variance::Finite(_) => match final_relative_gap {
                Some(g) if g < cfg.tolerance => Verdict::Converges,
                _ => Verdict::Inconclusive,
            },
            Variance::Infinite => {
                let fit_ok = log_fit.is_some_and(|f| f.r_squared > 0.99 && f.slope > 0.0);
                if strictly_increasing && fit_ok && aitken.is_none() {
                    Verdict::Diverges
                } else {
                    Verdict::Inconclusive
                }
            }
        }
    };

    let empirical = if cfg.empirical {
        match noise {
            Noise::White => white_checks(cfg, &kernel, &specs, &variances)?,
            Noise::Fractional(h) => fractional_checks(cfg, &kernel, &specs, &variances, h)?,
        }
    } else {
        Vec::new()
    };

    Ok(ConvergenceReport {
        study,
        variant: cfg.variant,
        alpha: (cfg.variant == StudyVariant::Tricomi).then_some(cfg.alpha),
        t: cfg.t,
        x: cfg.x,
        noise: match noise {
            Noise::White => "white",
            Noise::Fractional(_) => "fractional",
        },
        hurst: cfg.hurst,
        family: cfg.family,
        curve: VarianceCurve {
            n_values: cfg.n_values.clone(),
            r_values,
            variances,
            closed_form_limit: limit,
            fitted_log_slope: log_fit.map(|f| f.slope),
        },
        gaps,
        final_relative_gap,
        gap_monotone,
        strictly_increasing,
        log_fit,
        aitken_limit: aitken,
        empirical,
        verdict,
    })
}

/// Indices of up to three schedule points whose radius the grid resolves:
/// the coarsest, the finest and one in between.
fn pick_checks(specs: &[MollifierSpec], min_radius: f64) -> Vec<usize> {
    let ok: Vec<usize> = (0..specs.len()).filter(|&i| specs[i].radius >= min_radius).collect();
    let mut picks = match ok.len() {
        0 => vec![],
        n if n <= EMPIRICAL_POINTS => ok.clone(),
        n => vec![ok[0], ok[n / 2], ok[n - 1]],
    };
    picks.dedup();
    picks
}

/// Smallest symmetric window [-R, R] holding every mollified kernel of the
/// schedule; the kernels vanish outside it, so the truncation is exact.
fn noise_window(kernel: &KernelSpec, max_radius: f64) -> f64 {
    kernel.x.abs() + kernel.radius() + max_radius
}

fn summarize(n: u64, r_n: f64, dx: f64, squares: &[f64], analytic: f64) -> EmpiricalCheck {
    let m = squares.len() as f64;
    let mean = pairwise_sum(squares) / m;
    let var = squares.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (m - 1.0);
    let se = (var / m).sqrt();
    let z = if se > 0.0 { (mean - analytic) / se } else if mean == analytic { 0.0 } else { f64::INFINITY };
    EmpiricalCheck {
        n,
        r_n,
        paths: squares.len(),
        dx,
        empirical_variance: mean,
        std_error: se,
        analytic_variance: analytic,
        z_score: z,
        within_4_sigma: z.abs() <= 4.0,
    }
}

/// Midpoint tabulation of K * ρ_n over the cells of the path grid.
fn tabulate(kernel: &KernelSpec, spec: &MollifierSpec, x_min: f64, dx: f64, cells: usize) -> Result<Vec<f64>> {
    (0..cells)
        .into_par_iter()
        .map(|i| mollified_kernel(kernel, spec, x_min + (i as f64 + 0.5) * dx))
        .collect()
}

fn white_checks(cfg: &StudyConfig, kernel: &KernelSpec, specs: &[MollifierSpec], variances: &[f64]) -> Result<Vec<EmpiricalCheck>> {
    if kernel.support().is_empty() {
        return Ok(Vec::new());
    }
    let r_window = noise_window(kernel, specs[0].radius);
    let half_cells = WHITE_CELLS / 2;
    let dx = r_window / half_cells as f64;
    let picks = pick_checks(specs, CELLS_PER_RADIUS * dx);
    if picks.is_empty() {
        return Ok(Vec::new());
    }
    let tables = picks
        .iter()
        .map(|&i| tabulate(kernel, &specs[i], -r_window, dx, WHITE_CELLS))
        .collect::<Result<Vec<_>>>()?;
    // one path per seed, shared by every n
    let per_path = (0..cfg.paths)
        .into_par_iter()
        .map(|p| {
            let path = sample_brownian(r_window, dx, cfg.seed.wrapping_add(p as u64))?;
            tables
                .iter()
                .map(|tab| wiener_integral(&path, |m| tab[((m - path.x_min) / dx) as usize]).map(|u| u * u))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(picks
        .iter()
        .enumerate()
        .map(|(k, &i)| {
            let sq: Vec<f64> = per_path.iter().map(|v| v[k]).collect();
            summarize(specs[i].n, specs[i].radius, dx, &sq, variances[i])
        })
        .collect())
}

/// fBm cross-check with one Cholesky factor shared by all paths. Each
/// integral is (Lᵀf)·z for the path's standard normals z, identical to
/// f·(Lz) but one dot product per n.
fn fractional_checks(
    cfg: &StudyConfig,
    kernel: &KernelSpec,
    specs: &[MollifierSpec],
    variances: &[f64],
    hurst: f64,
) -> Result<Vec<EmpiricalCheck>> {
    if kernel.support().is_empty() {
        return Ok(Vec::new());
    }
    // window sized for the finest resolvable radius; coarser ones may not fit
    let cells = FRACTIONAL_CELLS;
    let fits = |r: f64| {
        let dx = 2.0 * noise_window(kernel, r) / cells as f64;
        r >= CELLS_PER_RADIUS * dx
    };
    let candidates: Vec<usize> = (0..specs.len()).filter(|&i| fits(specs[i].radius)).collect();
    let Some(&coarsest) = candidates.first() else {
        return Ok(Vec::new());
    };
    let r_window = noise_window(kernel, specs[coarsest].radius);
    let dx = 2.0 * r_window / cells as f64;
    let picks = pick_checks(specs, CELLS_PER_RADIUS * dx)
        .into_iter()
        .filter(|&i| specs[i].radius <= specs[coarsest].radius)
        .collect::<Vec<_>>();
    let factor = FbmFactor::new(cells, dx, hurst)?;
    let projections = picks
        .iter()
        .map(|&i| tabulate(kernel, &specs[i], -r_window, dx, cells).map(|f| factor.apply_transpose(&f)))
        .collect::<Result<Vec<_>>>()?;
    let per_path: Vec<Vec<f64>> = (0..cfg.paths)
        .into_par_iter()
        .map(|p| {
            let z = standard_normals(cells, cfg.seed.wrapping_add(p as u64));
            projections
                .iter()
                .map(|w| {
                    let u: f64 = w.iter().zip(&z).map(|(a, b)| a * b).sum();
                    u * u
                })
                .collect()
        })
        .collect();
    Ok(picks
        .iter()
        .enumerate()
        .map(|(k, &i)| {
            let sq: Vec<f64> = per_path.iter().map(|v| v[k]).collect();
            summarize(specs[i].n, specs[i].radius, dx, &sq, variances[i])
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(variant: StudyVariant) -> StudyConfig {
        StudyConfig {
            n_values: dyadic_schedule(8),
            paths: 400,
            ..StudyConfig::new(variant)
        }
    }

    #[test]
    fn aitken_detects_geometric_limits_only() {
        let geo: Vec<f64> = (0..6).map(|k| 2.0 - 0.5f64.powi(k)).collect();
        assert!((aitken_limit(&geo).unwrap() - 2.0).abs() < 1e-12);
        let log: Vec<f64> = (0..6).map(|k| 0.25 * k as f64 * 2f64.ln() + 1.0).collect();
        assert_eq!(aitken_limit(&log), None);
        assert_eq!(aitken_limit(&[1.0, 2.0]), None);
    }

    #[test]
    fn fit_recovers_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys: Vec<f64> = xs.iter().map(|x| 0.25 * x + 1.0).collect();
        let f = linear_fit(&xs, &ys).unwrap();
        assert!((f.slope - 0.25).abs() < 1e-15 && (f.intercept - 1.0).abs() < 1e-15);
        assert!((f.r_squared - 1.0).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        let mut c = quick(StudyVariant::Tricomi);
        c.n_values = vec![1, 4, 2];
        assert!(matches!(c.validate(), Err(Error::Argument(_))));
        c.n_values = vec![];
        assert!(c.validate().is_err());
        c = quick(StudyVariant::Tricomi);
        c.paths = 99;
        assert!(c.validate().is_err());
        c = quick(StudyVariant::TricomiLower);
        c.hurst = Some(0.4);
        assert!(matches!(run_study(&c), Err(Error::Domain { .. })));
        c.hurst = Some(0.5);
        assert!(matches!(run_study(&c), Err(Error::Domain { .. })));
        assert!(study_wave_comparison(&quick(StudyVariant::Tricomi)).is_err());
    }

    #[test]
    fn single_point_schedule_has_no_verdict() {
        let mut c = quick(StudyVariant::Tricomi);
        c.n_values = vec![64];
        c.empirical = false;
        let r = run_study(&c).unwrap();
        assert_eq!(r.verdict, Verdict::NoVerdict);
        assert_eq!(r.curve.variances.len(), 1);
    }

    #[test]
    fn alpha_zero_matches_wave() {
        let mut c = quick(StudyVariant::Tricomi);
        c.alpha = 0.0;
        c.n_values = vec![1, 10, 100];
        c.empirical = false;
        let a = run_study(&c).unwrap();
        assert!((a.curve.closed_form_limit.finite().unwrap() - 0.5).abs() < 1e-14);
        assert!(a.final_relative_gap.unwrap() < 0.01);
        assert_eq!(a.verdict, Verdict::Converges);
        let mut w = c.clone();
        w.variant = StudyVariant::Wave;
        let b = run_study(&w).unwrap();
        for (x, y) in a.curve.variances.iter().zip(&b.curve.variances) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn wave_lower_at_zero_time() {
        let mut c = quick(StudyVariant::WaveLower);
        c.t = 0.0;
        c.empirical = false;
        let r = run_study(&c).unwrap();
        assert_eq!(r.curve.closed_form_limit, Variance::Finite(0.0));
        assert!(r.curve.variances.iter().all(|&v| v == 0.0));
        assert_eq!(r.verdict, Verdict::Converges);
    }

    #[test]
    fn white_checks_agree_and_reproduce() {
        let c = quick(StudyVariant::Tricomi);
        let a = run_study(&c).unwrap();
        assert!(!a.empirical.is_empty());
        for e in &a.empirical {
            assert!(e.within_4_sigma, "{e:?}");
        }
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| run_study(&c)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fractional_checks_agree() {
        let mut c = quick(StudyVariant::TricomiLower);
        c.hurst = Some(0.75);
        c.n_values = vec![4, 8, 16, 32, 64];
        let r = run_study(&c).unwrap();
        assert!(!r.empirical.is_empty());
        for e in &r.empirical {
            assert!(e.within_4_sigma, "{e:?}");
        }
        assert!((r.curve.closed_form_limit.finite().unwrap() - 1.178_097_245_096_172_5).abs() < 1e-6);
    }

    #[test]
    fn lower_order_grows() {
        let mut c = quick(StudyVariant::TricomiLower);
        c.empirical = false;
        let r = run_study(&c).unwrap();
        assert!(r.strictly_increasing);
        assert_eq!(r.curve.closed_form_limit, Variance::Infinite);
        assert!(r.gaps.iter().all(Option::is_none));
        assert_eq!(r.verdict, Verdict::Diverges);
    }
}
