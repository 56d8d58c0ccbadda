//! Laws attached to the inverse stable subordinator: the generalized beta
//! prime aging kernel `GB2(1-alpha, alpha, t0)`, the remaining lifetime and
//! age at a fixed time, overshoot and undershoot, and Mittag-Leffler waiting
//! times. Samplers take an explicit stream.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{check_range, Error, Result};
use crate::special_fn::{beta, gamma, kanter_log_a, ln_beta, reg_incomplete_beta, scaled_upper_gamma};

/// Generalized beta prime law with density
/// `(x/h)^(mu-1) (1 + x/h)^(-mu-nu) / (h B[mu, nu])`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GB2Params {
    pub mu: f64,
    pub nu: f64,
    pub h: f64,
}

impl GB2Params {
    pub fn new(mu: f64, nu: f64, h: f64) -> Result<Self> {
        check_range("mu", mu, mu > 0.0, "(0, inf)")?;
        check_range("nu", nu, nu > 0.0, "(0, inf)")?;
        check_range("h", h, h > 0.0, "(0, inf)")?;
        Ok(Self { mu, nu, h })
    }
}

pub fn gb2_pdf(p: GB2Params, x: f64) -> Result<f64> {
    check_range("x", x, x > 0.0, "(0, inf)")?;
    let y = x / p.h;
    let log = (p.mu - 1.0) * y.ln() - (p.mu + p.nu) * y.ln_1p() - p.h.ln() - ln_beta(p.mu, p.nu);
    Ok(log.exp())
}

pub fn gb2_cdf(p: GB2Params, x: f64) -> Result<f64> {
    check_range("x", x, x >= 0.0, "[0, inf]")?;
    if x == f64::INFINITY {
        return Ok(1.0);
    }
    reg_incomplete_beta(x / (p.h + x), p.mu, p.nu)
}

/// Survival function, computed through the reflected incomplete beta so the
/// heavy tail keeps relative accuracy.
pub fn gb2_sf(p: GB2Params, x: f64) -> Result<f64> {
    check_range("x", x, x >= 0.0, "[0, inf)")?;
    reg_incomplete_beta(p.h / (p.h + x), p.nu, p.mu)
}

/// The aging kernel `p_{t0} = GB2(1-alpha, alpha, t0)`: the law of the
/// remaining time to the next regeneration after `t0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgingKernel {
    params: GB2Params,
    alpha: f64,
    t0: f64,
}

impl AgingKernel {
    pub fn new(alpha: f64, t0: f64) -> Result<Self> {
        check_range("alpha", alpha, alpha > 0.0 && alpha < 1.0, "(0, 1)")?;
        check_range("t0", t0, t0 > 0.0, "(0, inf)")?;
        Ok(Self {
            params: GB2Params::new(1.0 - alpha, alpha, t0)?,
            alpha,
            t0,
        })
    }

    pub fn params(&self) -> GB2Params {
        self.params
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn pdf(&self, r: f64) -> Result<f64> {
        gb2_pdf(self.params, r)
    }

    pub fn cdf(&self, x: f64) -> Result<f64> {
        gb2_cdf(self.params, x)
    }

    pub fn sf(&self, x: f64) -> Result<f64> {
        gb2_sf(self.params, x)
    }

    /// `t0 G_{1-alpha} / G_alpha` with independent unit gammas, which is
    /// `t0 B / (1 - B)` for `B ~ Beta(1-alpha, alpha)`. The ratio is formed in
    /// log space so tiny shapes do not underflow.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let la = gamma_log_sample(1.0 - self.alpha, rng);
        let lb = gamma_log_sample(self.alpha, rng);
        self.t0 * (la - lb).exp()
    }

    pub fn laplace(&self, s: f64) -> Result<f64> {
        check_range("s", s, s > 0.0, "(0, inf)")?;
        kernel_laplace(self.alpha, s * self.t0)
    }
}

pub fn aging_kernel_cdf(k: &AgingKernel, x: f64) -> Result<f64> {
    k.cdf(x)
}

pub fn aging_kernel_sample<R: Rng + ?Sized>(k: &AgingKernel, rng: &mut R) -> f64 {
    k.sample(rng)
}

pub fn aging_kernel_laplace(k: &AgingKernel, s: f64) -> Result<f64> {
    k.laplace(s)
}

/// `E[exp(-s R)]` for the kernel as a function of `x = s t0`:
/// `exp(x) Gamma(alpha, x) / Gamma(alpha)`. Accepts `alpha = 1`, where it is 1.
pub fn kernel_laplace(alpha: f64, x: f64) -> Result<f64> {
    check_range("alpha", alpha, alpha > 0.0 && alpha <= 1.0, "(0, 1]")?;
    check_range("s t0", x, x >= 0.0, "[0, inf)")?;
    Ok((scaled_upper_gamma(alpha, x)? / gamma(alpha)).min(1.0))
}

/// `ln G` for `G ~ Gamma(shape, 1)`. Shapes below one are boosted,
/// `G_a = G_{a+1} U^(1/a)`, so the logarithm stays finite.
pub fn gamma_log_sample<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape >= 1.0 {
        let g = Gamma::new(shape, 1.0).expect("positive shape");
        return g.sample(rng).ln();
    }
    let g = Gamma::new(shape + 1.0, 1.0).expect("positive shape");
    let u: f64 = 1.0 - rng.random::<f64>();
    g.sample(rng).ln() + u.ln() / shape
}

fn check_alpha(alpha: f64) -> Result<()> {
    check_range("alpha", alpha, alpha > 0.0 && alpha < 1.0, "(0, 1)")
}

/// Density of the remaining lifetime `R_t = D_{E_t} - t`, which is
/// `GB2(1-alpha, alpha, t)`.
pub fn remaining_life_pdf(alpha: f64, t: f64, r: f64) -> Result<f64> {
    check_alpha(alpha)?;
    check_range("t", t, t > 0.0, "(0, inf)")?;
    check_range("r", r, r > 0.0, "(0, inf)")?;
    let y = r / t;
    Ok(y.powf(-alpha) / (1.0 + y) / (t * beta(alpha, 1.0 - alpha)))
}

pub fn remaining_life_cdf(alpha: f64, t: f64, r: f64) -> Result<f64> {
    check_alpha(alpha)?;
    check_range("t", t, t > 0.0, "(0, inf)")?;
    check_range("r", r, r >= 0.0, "[0, inf)")?;
    reg_incomplete_beta(r / (t + r), 1.0 - alpha, alpha)
}

/// Density of the age `V_t = t - D_{E_t-}` on `(0, t)`: `V_t / t ~ Beta(1-alpha, alpha)`.
pub fn age_pdf_gb1(alpha: f64, t: f64, v: f64) -> Result<f64> {
    check_alpha(alpha)?;
    check_range("t", t, t > 0.0, "(0, inf)")?;
    check_range("v", v, v > 0.0 && v < t, "(0, t)")?;
    let y = v / t;
    Ok(y.powf(-alpha) * (1.0 - y).powf(alpha - 1.0) / (t * beta(alpha, 1.0 - alpha)))
}

pub fn age_cdf(alpha: f64, t: f64, v: f64) -> Result<f64> {
    check_alpha(alpha)?;
    check_range("t", t, t > 0.0, "(0, inf)")?;
    check_range("v", v, (0.0..=t).contains(&v), "[0, t]")?;
    reg_incomplete_beta(v / t, 1.0 - alpha, alpha)
}

/// Density of the overshoot `D_{E_t}` on `(t, inf)`.
pub fn overshoot_pdf(alpha: f64, t: f64, r: f64) -> Result<f64> {
    check_alpha(alpha)?;
    check_range("r", r, r > t, "(t, inf)")?;
    Ok((t / (r - t)).powf(alpha) / r / beta(alpha, 1.0 - alpha))
}

pub fn overshoot_cdf(alpha: f64, t: f64, r: f64) -> Result<f64> {
    check_range("r", r, r >= t, "[t, inf)")?;
    remaining_life_cdf(alpha, t, r - t)
}

/// Density of the undershoot `D_{E_t-}` on `(0, t)`.
pub fn undershoot_pdf(alpha: f64, t: f64, v: f64) -> Result<f64> {
    check_alpha(alpha)?;
    check_range("v", v, v > 0.0 && v < t, "(0, t)")?;
    Ok(v.powf(alpha - 1.0) * (t - v).powf(-alpha) / beta(alpha, 1.0 - alpha))
}

pub fn undershoot_cdf(alpha: f64, t: f64, v: f64) -> Result<f64> {
    check_alpha(alpha)?;
    check_range("v", v, (0.0..=t).contains(&v), "[0, t]")?;
    reg_incomplete_beta(v / t, alpha, 1.0 - alpha)
}

/// Standard one-sided stable draw, `E[exp(-s S)] = exp(-s^alpha)`, by the
/// Chambers-Mallows-Stuck transform at total skewness in Kanter's form
/// `S = (A(U) / W)^((1-alpha)/alpha)`, `U ~ U(0, pi)`, `W ~ Exp(1)`.
/// Returns 1 at `alpha = 1`.
pub fn stable_onesided_sample<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    if alpha >= 1.0 {
        return 1.0;
    }
    let u = PI * (1.0 - rng.random::<f64>());
    let w = -(1.0 - rng.random::<f64>()).ln();
    let la = if u < 1e-6 {
        alpha / (1.0 - alpha) * alpha.ln() + (1.0 - alpha).ln()
    } else {
        kanter_log_a(alpha, u)
    };
    ((1.0 - alpha) / alpha * (la - w.ln())).exp()
}

/// Mittag-Leffler waiting time with `P(T > t) = E_alpha(-lambda t^alpha)`, drawn as
/// `lambda^(-1/alpha) X^(1/alpha) S` with `X ~ Exp(1)` and `S` one-sided stable.
pub fn ml_waiting_sample<R: Rng + ?Sized>(alpha: f64, lambda: f64, rng: &mut R) -> Result<f64> {
    check_range("alpha", alpha, alpha > 0.0 && alpha <= 1.0, "(0, 1]")?;
    check_range("lambda", lambda, lambda > 0.0, "(0, inf)")?;
    let x = -(1.0 - rng.random::<f64>()).ln();
    let s = stable_onesided_sample(alpha, rng);
    Ok((x / lambda).powf(1.0 / alpha) * s)
}

/// A named law with parameters, as it appears in a scenario file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum LawSpec {
    Gb2 { mu: f64, nu: f64, h: f64 },
    AgingKernel { alpha: f64, t0: f64 },
    RemainingLife { alpha: f64, t: f64 },
    Age { alpha: f64, t: f64 },
    Overshoot { alpha: f64, t: f64 },
    Undershoot { alpha: f64, t: f64 },
    MittagLefflerWaiting { alpha: f64, lambda: f64 },
}

impl LawSpec {
    pub fn pdf(&self, x: f64) -> Result<f64> {
        match *self {
            LawSpec::Gb2 { mu, nu, h } => gb2_pdf(GB2Params::new(mu, nu, h)?, x),
            LawSpec::AgingKernel { alpha, t0 } => AgingKernel::new(alpha, t0)?.pdf(x),
            LawSpec::RemainingLife { alpha, t } => remaining_life_pdf(alpha, t, x),
            LawSpec::Age { alpha, t } => age_pdf_gb1(alpha, t, x),
            LawSpec::Overshoot { alpha, t } => overshoot_pdf(alpha, t, x),
            LawSpec::Undershoot { alpha, t } => undershoot_pdf(alpha, t, x),
            LawSpec::MittagLefflerWaiting { .. } => Err(Error::UnsupportedFamily(
                "Mittag-Leffler waiting density is not tabulated; use the survival function".into(),
            )),
        }
    }

    pub fn cdf(&self, x: f64) -> Result<f64> {
        match *self {
            LawSpec::Gb2 { mu, nu, h } => gb2_cdf(GB2Params::new(mu, nu, h)?, x),
            LawSpec::AgingKernel { alpha, t0 } => AgingKernel::new(alpha, t0)?.cdf(x),
            LawSpec::RemainingLife { alpha, t } => remaining_life_cdf(alpha, t, x),
            LawSpec::Age { alpha, t } => age_cdf(alpha, t, x),
            LawSpec::Overshoot { alpha, t } => overshoot_cdf(alpha, t, x),
            LawSpec::Undershoot { alpha, t } => undershoot_cdf(alpha, t, x),
            LawSpec::MittagLefflerWaiting { alpha, lambda } => {
                check_range("x", x, x >= 0.0, "[0, inf)")?;
                Ok(1.0 - crate::special_fn::mittag_leffler(alpha, -lambda * x.powf(alpha))?)
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        match *self {
            LawSpec::Gb2 { mu, nu, h } => {
                GB2Params::new(mu, nu, h)?;
                Ok(h * (gamma_log_sample(mu, rng) - gamma_log_sample(nu, rng)).exp())
            }
            LawSpec::AgingKernel { alpha, t0 } => Ok(AgingKernel::new(alpha, t0)?.sample(rng)),
            LawSpec::RemainingLife { alpha, t } => Ok(AgingKernel::new(alpha, t)?.sample(rng)),
            LawSpec::Overshoot { alpha, t } => Ok(t + AgingKernel::new(alpha, t)?.sample(rng)),
            LawSpec::Age { alpha, t } => {
                check_alpha(alpha)?;
                let a = gamma_log_sample(1.0 - alpha, rng);
                let b = gamma_log_sample(alpha, rng);
                Ok(t / (1.0 + (b - a).exp()))
            }
            LawSpec::Undershoot { alpha, t } => {
                check_alpha(alpha)?;
                let a = gamma_log_sample(alpha, rng);
                let b = gamma_log_sample(1.0 - alpha, rng);
                Ok(t / (1.0 + (b - a).exp()))
            }
            LawSpec::MittagLefflerWaiting { alpha, lambda } => ml_waiting_sample(alpha, lambda, rng),
        }
    }
}
