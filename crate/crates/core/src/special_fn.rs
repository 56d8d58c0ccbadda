//! Scalar special functions: Mittag-Leffler, incomplete beta and gamma,
//! and the density of the standard one-sided stable law together with the
//! density of the inverse stable subordinator.
//!
//! The one-sided stable variable `S` is normalised by `E[exp(-s S)] = exp(-s^alpha)`.

use serde::{Deserialize, Serialize};
use statrs::function::{beta as sbeta, erf, gamma as sgamma};
use std::f64::consts::PI;

use crate::error::{check_range, Error, Result};
use crate::quad::{adaptive_with_breaks, AdaptiveOptions};
use crate::tol::TOL;

pub use statrs::function::gamma::{gamma, ln_gamma};

/// Temporal index and scale of a stable subordinator, `E[exp(-s D_u)] = exp(-u c s^alpha)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaScale {
    alpha: f64,
    c: f64,
}

impl AlphaScale {
    pub fn new(alpha: f64, c: f64) -> Result<Self> {
        check_range("alpha", alpha, alpha > 0.0 && alpha < 1.0, "(0, 1)")?;
        check_range("c", c, c > 0.0, "(0, inf)")?;
        Ok(Self { alpha, c })
    }

    /// The standard subordinator, `c = 1`.
    pub fn standard(alpha: f64) -> Result<Self> {
        Self::new(alpha, 1.0)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn c(&self) -> f64 {
        self.c
    }
}

pub fn erfc(x: f64) -> f64 {
    erf::erfc(x)
}

pub fn beta(a: f64, b: f64) -> f64 {
    sbeta::beta(a, b)
}

pub fn ln_beta(a: f64, b: f64) -> f64 {
    sbeta::ln_beta(a, b)
}

/// Kahan-Babuska-Neumaier compensated sum.
#[derive(Debug, Default, Clone, Copy)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for NeumaierSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = NeumaierSum::default();
        for x in iter {
            s.add(x);
        }
        s
    }
}

// ---------------------------------------------------------------------------
// Mittag-Leffler

/// `E_alpha(z) = sum_k z^k / Gamma(alpha k + 1)` for real `z`.
///
/// Negative arguments switch from the power series to the integral
/// representation once `|z|` exceeds [`ml_switch_point`].
pub fn mittag_leffler(alpha: f64, z: f64) -> Result<f64> {
    check_range("alpha", alpha, alpha > 0.0 && alpha <= 1.0, "(0, 1]")?;
    check_range("z", z, true, "finite reals")?;
    if z == 0.0 {
        return Ok(1.0);
    }
    if alpha == 1.0 {
        return Ok(z.exp());
    }
    if z > 0.0 || -z <= ml_switch_point(alpha) {
        return Ok(ml_series(alpha, z));
    }
    ml_integral(alpha, -z)
}

/// Largest `|z|` handled by the series for negative `z`. Below `5`, the
/// series is also cut back for small alpha: the sum of its absolute terms is
/// `E_alpha(|z|) ~ exp(|z|^(1/alpha)) / alpha`, and cancellation costs that
/// many ulps.
pub fn ml_switch_point(alpha: f64) -> f64 {
    let budget = (TOL.ml_series_max_term * alpha).ln().max(0.0);
    TOL.ml_switch.min(budget.powf(alpha))
}

pub(crate) fn ml_series(alpha: f64, z: f64) -> f64 {
    let lz = z.abs().ln();
    let negative = z < 0.0;
    let mut sum = NeumaierSum::default();
    sum.add(1.0);
    let mut past_peak = false;
    let mut prev = 0.0_f64;
    for k in 1..5000 {
        let kf = k as f64;
        let mag = (kf * lz - ln_gamma(alpha * kf + 1.0)).exp();
        let term = if negative && k % 2 == 1 { -mag } else { mag };
        sum.add(term);
        if mag < prev {
            past_peak = true;
        }
        prev = mag;
        if past_peak && mag < TOL.series_term * sum.value().abs().max(1e-300) {
            break;
        }
    }
    sum.value()
}

/// `E_alpha(-x) = sin(alpha pi)/(alpha pi) int_0^inf exp(-(u x)^(1/alpha)) / (u^2 + 2u cos(alpha pi) + 1) du`.
pub(crate) fn ml_integral(alpha: f64, x: f64) -> Result<f64> {
    let cos_a = (alpha * PI).cos();
    let inv = 1.0 / alpha;
    let decay = 1.0 / x;
    // Beyond this the exponential factor is below exp(-60).
    let upper = decay * 60f64.powf(alpha);
    let mut points = vec![0.0, decay, upper];
    let peak = -cos_a;
    if peak > 0.0 && peak < upper {
        points.push(peak);
    }
    points.sort_by(f64::total_cmp);
    points.dedup();
    let q = adaptive_with_breaks(
        |u| (-(u * x).powf(inv)).exp() / (u * u + 2.0 * u * cos_a + 1.0),
        &points,
        AdaptiveOptions::new(1e-16, 1e-13),
    )?;
    Ok((alpha * PI).sin() / (alpha * PI) * q.value)
}

// ---------------------------------------------------------------------------
// Incomplete beta and gamma

/// Regularised incomplete beta `I_x[a, b]`.
pub fn reg_incomplete_beta(x: f64, a: f64, b: f64) -> Result<f64> {
    check_range("x", x, (0.0..=1.0).contains(&x), "[0, 1]")?;
    check_range("a", a, a > 0.0, "(0, inf)")?;
    check_range("b", b, b > 0.0, "(0, inf)")?;
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == 1.0 {
        return Ok(1.0);
    }
    Ok(sbeta::beta_reg(a, b, x).clamp(0.0, 1.0))
}

/// Upper incomplete gamma `Gamma(a, x) = int_x^inf t^(a-1) e^-t dt`.
pub fn upper_incomplete_gamma(a: f64, x: f64) -> Result<f64> {
    Ok(scaled_upper_gamma(a, x)? * (-x).exp())
}

/// `exp(x) Gamma(a, x)`, evaluated without forming either factor when `x` is large.
pub fn scaled_upper_gamma(a: f64, x: f64) -> Result<f64> {
    check_range("a", a, a > 0.0, "(0, inf)")?;
    check_range("x", x, x >= 0.0, "[0, inf)")?;
    if x == 0.0 {
        return Ok(gamma(a));
    }
    if x < 1.0 + a {
        // Complement of the regularised lower function is accurate here.
        let q = sgamma::gamma_ur(a, x);
        return Ok(q * gamma(a) * x.exp());
    }
    // Modified Lentz on the continued fraction
    // Gamma(a,x) e^x x^-a = 1/(x+1-a- 1(1-a)/(x+3-a- 2(2-a)/(x+5-a- ...))).
    let tiny = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..10_000 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    Ok((a * x.ln()).exp() * h)
}

// ---------------------------------------------------------------------------
// One-sided stable law

/// Which representation evaluates the one-sided stable density.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StableMethod {
    /// Convergent expansion in powers of `x^-alpha`; well conditioned away from the origin.
    Series,
    /// Kanter-Zolotarev integral over `(0, pi)`; accurate near the origin and in the bulk.
    Integral,
}

/// Explicit control over the one-sided stable density evaluation.
#[derive(Debug, Clone, Copy)]
pub struct StablePdfEval {
    pub alpha: f64,
    pub method: StableMethod,
    pub abs_tol: f64,
}

impl StablePdfEval {
    pub fn new(alpha: f64, method: StableMethod) -> Result<Self> {
        check_range("alpha", alpha, alpha > 0.0 && alpha < 1.0, "(0, 1)")?;
        Ok(Self {
            alpha,
            method,
            abs_tol: TOL.quad_abs,
        })
    }

    pub fn pdf(&self, x: f64) -> Result<f64> {
        check_range("x", x, x > 0.0, "(0, inf)")?;
        match self.method {
            StableMethod::Series => stable_pdf_series(self.alpha, x),
            StableMethod::Integral => stable_pdf_integral(self.alpha, x, self.abs_tol),
        }
    }
}

/// `log A(phi)` of the Kanter representation,
/// `A(phi) = (sin(alpha phi) / sin phi)^(1/(1-alpha)) sin((1-alpha) phi) / sin(alpha phi)`.
pub fn kanter_log_a(alpha: f64, phi: f64) -> f64 {
    let sa = (alpha * phi).sin().ln();
    let s = phi.sin().ln();
    let sb = ((1.0 - alpha) * phi).sin().ln();
    (sa - s) / (1.0 - alpha) + sb - sa
}

fn kanter_log_a0(alpha: f64) -> f64 {
    // phi -> 0 limit: alpha^(alpha/(1-alpha)) (1-alpha).
    alpha / (1.0 - alpha) * alpha.ln() + (1.0 - alpha).ln()
}

fn kanter_log_a_safe(alpha: f64, phi: f64) -> f64 {
    if phi < 1e-6 {
        kanter_log_a0(alpha)
    } else {
        kanter_log_a(alpha, phi)
    }
}

/// Point in `(0, pi)` where `A(phi) = target`, if `A(0) < target`.
fn kanter_crossing(alpha: f64, log_target: f64) -> Option<f64> {
    if kanter_log_a0(alpha) >= log_target {
        return None;
    }
    let (mut lo, mut hi) = (0.0, PI);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if kanter_log_a_safe(alpha, mid) < log_target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

fn stable_pdf_integral(alpha: f64, x: f64, abs_tol: f64) -> Result<f64> {
    let ly = -alpha / (1.0 - alpha) * x.ln();
    let y = ly.exp();
    let mut points = vec![0.0, PI];
    if let Some(p) = kanter_crossing(alpha, -ly) {
        points.push(p);
    }
    points.sort_by(f64::total_cmp);
    let q = adaptive_with_breaks(
        |phi| {
            let la = kanter_log_a_safe(alpha, phi);
            let a = la.exp();
            if !a.is_finite() {
                return 0.0;
            }
            (la - a * y).exp()
        },
        &points,
        AdaptiveOptions::new(abs_tol, TOL.quad_rel),
    )?;
    let pref = alpha / (1.0 - alpha) / PI * (-x.ln() / (1.0 - alpha)).exp();
    Ok((pref * q.value).max(0.0))
}

fn stable_pdf_series(alpha: f64, x: f64) -> Result<f64> {
    let lx = x.ln();
    let mut sum = NeumaierSum::default();
    let mut max_term = 0.0_f64;
    let mut prev = f64::INFINITY;
    for k in 1..4000 {
        let kf = k as f64;
        let mag = (ln_gamma(alpha * kf + 1.0) - ln_gamma(kf + 1.0) - (alpha * kf + 1.0) * lx).exp();
        max_term = max_term.max(mag);
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        sum.add(sign * mag * (PI * alpha * kf).sin());
        if mag < prev && mag <= TOL.series_term * max_term {
            if max_term > 1e6 * sum.value().abs().max(1e-300) {
                break;
            }
            return Ok((sum.value() / PI).max(0.0));
        }
        prev = mag;
    }
    Err(Error::Domain {
        name: "x",
        value: x,
        expected: "the region where the stable series converges without cancellation",
    })
}

/// Density of the standard one-sided stable law, `E[exp(-s S)] = exp(-s^alpha)`.
pub fn stable_pdf_onesided(alpha: f64, x: f64) -> Result<f64> {
    check_range("alpha", alpha, alpha > 0.0 && alpha < 1.0, "(0, 1)")?;
    check_range("x", x, x > 0.0, "(0, inf)")?;
    if x.powf(-alpha) <= TOL.stable_series_ratio {
        if let Ok(v) = stable_pdf_series(alpha, x) {
            return Ok(v);
        }
    }
    stable_pdf_integral(alpha, x, TOL.quad_abs)
}

/// Distribution function of the standard one-sided stable law,
/// `P(S <= x) = (1/pi) int_0^pi exp(-A(phi) x^(-alpha/(1-alpha))) dphi`.
pub fn stable_cdf_onesided(alpha: f64, x: f64) -> Result<f64> {
    check_range("alpha", alpha, alpha > 0.0 && alpha < 1.0, "(0, 1)")?;
    check_range("x", x, x >= 0.0, "[0, inf)")?;
    if x == 0.0 {
        return Ok(0.0);
    }
    let ly = -alpha / (1.0 - alpha) * x.ln();
    let y = ly.exp();
    let mut points = vec![0.0, PI];
    if let Some(p) = kanter_crossing(alpha, -ly) {
        points.push(p);
    }
    points.sort_by(f64::total_cmp);
    let q = adaptive_with_breaks(
        |phi| {
            let a = kanter_log_a_safe(alpha, phi).exp();
            (-a * y).exp()
        },
        &points,
        AdaptiveOptions::new(1e-15, 1e-12),
    )?;
    Ok((q.value / PI).clamp(0.0, 1.0))
}

/// Quantile of the standard one-sided stable law by bisection in `log x`.
pub fn stable_quantile_onesided(alpha: f64, p: f64) -> Result<f64> {
    check_range("p", p, p > 0.0 && p < 1.0, "(0, 1)")?;
    let (mut lo, mut hi) = (-60.0_f64, 60.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if stable_cdf_onesided(alpha, mid.exp())? < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}

/// Density of the inverse subordinator `E_t` at `x`:
/// `h(x, t) = (t/alpha) x^(-1-1/alpha) g(t x^(-1/alpha))` for `c = 1`, and
/// `c h_1(c x, t)` in general since `E_t` scales as `1/c`.
pub fn inverse_subordinator_pdf(params: AlphaScale, x: f64, t: f64) -> Result<f64> {
    check_range("x", x, x > 0.0, "(0, inf)")?;
    check_range("t", t, t > 0.0, "(0, inf)")?;
    let alpha = params.alpha();
    let xc = x * params.c();
    let arg = t * xc.powf(-1.0 / alpha);
    if !(arg.is_finite() && arg > 0.0) {
        return Ok(0.0);
    }
    let g = stable_pdf_onesided(alpha, arg)?;
    Ok(params.c() * t / alpha * xc.powf(-1.0 - 1.0 / alpha) * g)
}
