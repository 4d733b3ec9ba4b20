//! Scalar constants, the four solution kernels, and samplers for Y and Z.
//!
//! For `u_tt = t^α u_xx`, with γ = α/(2(α+2)) and ξ(t) = t^β/β, β = α/2 + 1,
//!
//! ```text
//! u(t,x) = t E[φ(x + ξ(t) Z Y)]
//!        = t/(2ξ) ĉ ∫_{x-ξ}^{x+ξ} φ(y) (1 - ((x-y)/ξ)²)^{-γ} dy
//! ```
//!
//! where Z is a fair sign and Y has density ĉ (1-y²)^{-γ} on (0,1).
//!
//! The normalization used here is ĉ = 2Γ(3/2-γ)/(√π Γ(1-γ)). The constant
//! without the factor 2 (see [`TricomiParams::half_normalization`]) integrates
//! the density to 1/2 and breaks the α = 0 reduction to d'Alembert.

use std::f64::consts::PI;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::specialfn::{bessel_j0, gamma_fn};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TricomiParams {
    pub alpha: f64,
    pub gamma: f64,
    pub c_hat: f64,
    /// 3 - 2γ = 1/E[Y²]; the constant in the self-similar integral equation for ξ.
    pub l_const: f64,
    /// 1/β with β = α/2 + 1.
    pub xi_coeff: f64,
}

pub fn make_params(alpha: f64) -> Result<TricomiParams> {
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::Domain {
            func: "make_params",
            arg: alpha,
            domain: "[0, inf)",
        });
    }
    let gamma = alpha / (2.0 * (alpha + 2.0));
    let c_hat = 2.0 * gamma_fn(1.5 - gamma)? / (PI.sqrt() * gamma_fn(1.0 - gamma)?);
    Ok(TricomiParams {
        alpha,
        gamma,
        c_hat,
        l_const: 3.0 - 2.0 * gamma,
        xi_coeff: 1.0 / (0.5 * alpha + 1.0),
    })
}

impl TricomiParams {
    /// β = α/2 + 1, the exponent of ξ.
    pub fn beta(&self) -> f64 {
        0.5 * self.alpha + 1.0
    }

    /// Γ(3/2-γ)/(√π Γ(1-γ)): half of `c_hat`. Kept only so that the factor-2
    /// discrepancy stays visible in tests.
    pub fn half_normalization(&self) -> f64 {
        0.5 * self.c_hat
    }

    /// Density of Y on (0,1); 0 outside.
    pub fn density(&self, y: f64) -> f64 {
        if y <= 0.0 || y >= 1.0 {
            return 0.0;
        }
        self.c_hat * ((1.0 - y) * (1.0 + y)).powf(-self.gamma)
    }

    /// E[Y²] = 1/(3 - 2γ).
    pub fn second_moment(&self) -> f64 {
        1.0 / self.l_const
    }
}

/// ξ(t) = t^β/β.
pub fn xi(params: &TricomiParams, t: f64) -> Result<f64> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Domain {
            func: "xi",
            arg: t,
            domain: "[0, inf)",
        });
    }
    Ok(params.xi_coeff * t.powf(params.beta()))
}

/// Largest time accepted by the WaveLower kernel (J0 argument stays <= 30).
pub const WAVE_LOWER_T_MAX: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelVariant {
    /// Kernel of the representation formula for `u_tt = t^α u_xx`.
    TricomiAlpha(TricomiParams),
    /// Kernel of `v_tt = t² v_xx - v_x`: 1/(2√(y - x + t²/2)).
    TricomiLower,
    /// d'Alembert kernel, 1/2 on [x-t, x+t].
    Wave,
    /// Kernel of `V_tt = V_xx + V_x`: ½ e^{(y-x)/2} J0(½√(t² - (x-y)²)).
    WaveLower,
}

impl KernelVariant {
    pub fn label(&self) -> &'static str {
        match self {
            KernelVariant::TricomiAlpha(_) => "tricomi",
            KernelVariant::TricomiLower => "tricomi-lower",
            KernelVariant::Wave => "wave",
            KernelVariant::WaveLower => "wave-lower",
        }
    }
}

impl fmt::Display for KernelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelVariant::TricomiAlpha(p) => write!(f, "tricomi(alpha={})", p.alpha),
            other => f.write_str(other.label()),
        }
    }
}

/// Support [lo, hi] of a kernel; `lo_singular`/`hi_singular` mark endpoints
/// where the kernel blows up.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Support {
    pub lo: f64,
    pub hi: f64,
    pub lo_singular: bool,
    pub hi_singular: bool,
}

impl Support {
    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn is_empty(&self) -> bool {
        self.hi <= self.lo
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub variant: KernelVariant,
    pub t: f64,
    pub x: f64,
}

impl KernelSpec {
    pub fn new(variant: KernelVariant, t: f64, x: f64) -> Result<Self> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::Domain {
                func: "KernelSpec::new",
                arg: t,
                domain: "t in [0, inf)",
            });
        }
        if !x.is_finite() {
            return Err(Error::Domain {
                func: "KernelSpec::new",
                arg: x,
                domain: "finite x",
            });
        }
        if matches!(variant, KernelVariant::WaveLower) && t > WAVE_LOWER_T_MAX {
            return Err(Error::Domain {
                func: "KernelSpec::new",
                arg: t,
                domain: "t <= 60 for the wave-lower kernel",
            });
        }
        Ok(KernelSpec { variant, t, x })
    }

    /// Half-width of the support measured from x (ξ, t²/2 or t).
    pub fn radius(&self) -> f64 {
        match self.variant {
            KernelVariant::TricomiAlpha(p) => p.xi_coeff * self.t.powf(p.beta()),
            KernelVariant::TricomiLower => 0.5 * self.t * self.t,
            KernelVariant::Wave | KernelVariant::WaveLower => self.t,
        }
    }

    pub fn support(&self) -> Support {
        let r = self.radius();
        let (lo_singular, hi_singular) = match self.variant {
            KernelVariant::TricomiAlpha(p) => (p.gamma > 0.0, p.gamma > 0.0),
            KernelVariant::TricomiLower => (true, false),
            _ => (false, false),
        };
        Support {
            lo: self.x - r,
            hi: self.x + r,
            lo_singular: lo_singular && r > 0.0,
            hi_singular: hi_singular && r > 0.0,
        }
    }

    /// K(y). Zero outside the support; a `Singular` error exactly at a
    /// singular endpoint.
    pub fn eval(&self, y: f64) -> Result<f64> {
        let s = self.support();
        if s.is_empty() || y < s.lo || y > s.hi {
            return Ok(0.0);
        }
        if (y == s.lo && s.lo_singular) || (y == s.hi && s.hi_singular) {
            return Err(Error::Singular { y });
        }
        let d = y - s.lo;
        let e = s.hi - y;
        self.eval_at_offsets(d, e)
    }

    /// K(lo + d) for 0 < d <= len, accurate when d is tiny.
    pub fn eval_from_lo(&self, d: f64) -> Result<f64> {
        let s = self.support();
        if s.is_empty() || d < 0.0 || d > s.len() {
            return Ok(0.0);
        }
        if d == 0.0 && s.lo_singular {
            return Err(Error::Singular { y: s.lo });
        }
        self.eval_at_offsets(d, s.len() - d)
    }

    /// K(hi - e) for 0 < e <= len, accurate when e is tiny.
    pub fn eval_from_hi(&self, e: f64) -> Result<f64> {
        let s = self.support();
        if s.is_empty() || e < 0.0 || e > s.len() {
            return Ok(0.0);
        }
        if e == 0.0 && s.hi_singular {
            return Err(Error::Singular { y: s.hi });
        }
        self.eval_at_offsets(s.len() - e, e)
    }

    /// Kernel at the interior point whose distances to lo and hi are d and e
    /// (d + e = support length). Lets quadratures keep full relative
    /// precision next to singular endpoints.
    pub fn eval_at_offsets(&self, d: f64, e: f64) -> Result<f64> {
        match self.variant {
            KernelVariant::TricomiAlpha(p) => {
                let xi = self.radius();
                if p.gamma == 0.0 {
                    return Ok(0.5 * p.c_hat * self.t / xi);
                }
                // 1 - v² = (1+v)(1-v) with 1+v = d/ξ, 1-v = e/ξ
                let q = (d / xi) * (e / xi);
                Ok(self.t / (2.0 * xi) * p.c_hat * q.powf(-p.gamma))
            }
            KernelVariant::TricomiLower => Ok(0.5 / d.sqrt()),
            KernelVariant::Wave => Ok(0.5),
            KernelVariant::WaveLower => {
                // t² - (x-y)² = (t + (y-x))(t - (y-x)) = d e
                let y_minus_x = d - self.t;
                let arg = 0.5 * (d * e).sqrt();
                Ok(0.5 * (0.5 * y_minus_x).exp() * bessel_j0(arg)?)
            }
        }
    }
}

/// Rejection sampler for Y: envelope (1-γ)(1-y)^{-γ}, drawn by inversion as
/// y = 1 - u^{1/(1-γ)}, accepted with probability (1+y)^{-γ} >= 2^{-γ}.
pub struct YSampler {
    params: TricomiParams,
    rng: ChaCha8Rng,
}

impl YSampler {
    pub fn new(params: TricomiParams, seed: u64) -> Self {
        YSampler {
            params,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn params(&self) -> &TricomiParams {
        &self.params
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn sample(&mut self) -> f64 {
        sample_y(&self.params, &mut self.rng)
    }
}

/// One draw of Y from `rng`.
pub fn sample_y<R: Rng + ?Sized>(params: &TricomiParams, rng: &mut R) -> f64 {
    let g = params.gamma;
    loop {
        let u: f64 = rng.random();
        if u <= 0.0 {
            continue;
        }
        let y = 1.0 - u.powf(1.0 / (1.0 - g));
        if y <= 0.0 || y >= 1.0 {
            continue;
        }
        if g == 0.0 {
            return y;
        }
        let a: f64 = rng.random();
        if a < (1.0 + y).powf(-g) {
            return y;
        }
    }
}

/// Fair sign.
pub fn sample_z<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    if rng.random::<bool>() {
        1.0
    } else {
        -1.0
    }
}
