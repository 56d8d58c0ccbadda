//! Caputo and Riemann-Liouville derivatives of order `alpha in (0, 1)` on
//! uniform time grids, Grünwald weights and the Lévy symbols `psi(-k)`.
//!
//! `riemann_liouville` differentiates the fractional integral of the
//! piecewise-linear interpolant exactly, so constants and linear functions
//! come out exact. `caputo` is the same operator applied to `f - f(0+)`.

use num_complex::Complex64;

use crate::error::{check_range, Error, Result};
use crate::process::{JumpLaw, LevyFamily};
use crate::special_fn::gamma;

/// Samples `values[j] = f(j dt)` on `[0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGridFn {
    pub dt: f64,
    pub values: Vec<f64>,
    /// `f(0+)`.
    pub f0: f64,
}

impl TimeGridFn {
    pub fn new(dt: f64, values: Vec<f64>) -> Result<Self> {
        check_range("dt", dt, dt > 0.0, "(0, inf)")?;
        if values.len() < 2 {
            return Err(Error::Empty("a time grid needs at least two nodes"));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain {
                name: "grid value",
                value: *v,
                expected: "finite reals",
            });
        }
        let f0 = values[0];
        Ok(Self { dt, values, f0 })
    }

    /// Tabulates `f` on `n + 1` nodes `0, dt, ..., n dt`.
    pub fn from_fn(dt: f64, n: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(dt, (0..=n).map(|j| f(j as f64 * dt)).collect())
    }

    pub fn t(&self, j: usize) -> f64 {
        j as f64 * self.dt
    }

    pub fn t_grid(&self) -> Vec<f64> {
        (0..self.values.len()).map(|j| self.t(j)).collect()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `w_j` of `(1 - z)^order`: `w_0 = 1`, `w_j = w_{j-1} (j - 1 - order) / j`.
pub(crate) fn grunwald_coefficients(order: f64, n: usize) -> Vec<f64> {
    let mut w = Vec::with_capacity(n + 1);
    w.push(1.0);
    for j in 1..=n {
        let prev = w[j - 1];
        w.push(prev * (j as f64 - 1.0 - order) / j as f64);
    }
    w
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrunwaldWeights {
    pub alpha: f64,
    pub w: Vec<f64>,
}

impl GrunwaldWeights {
    pub fn new(alpha: f64, n: usize) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(Self {
            alpha,
            w: grunwald_coefficients(alpha, n.max(1)),
        })
    }
}

pub fn grunwald_weights(alpha: f64, n: usize) -> Result<GrunwaldWeights> {
    GrunwaldWeights::new(alpha, n)
}

fn check_alpha(alpha: f64) -> Result<()> {
    check_range("alpha", alpha, alpha > 0.0 && alpha < 1.0, "(0, 1)")
}

/// First-order Grünwald-Letnikov estimate `dt^-alpha sum_j w_j f_{n-j}` of the
/// Riemann-Liouville derivative.
pub fn grunwald_derivative(f: &TimeGridFn, alpha: f64) -> Result<TimeGridFn> {
    check_alpha(alpha)?;
    let n = f.len();
    let w = grunwald_coefficients(alpha, n - 1);
    let scale = f.dt.powf(-alpha);
    let values = (0..n)
        .map(|i| scale * (0..=i).map(|j| w[j] * f.values[i - j]).sum::<f64>())
        .collect();
    Ok(TimeGridFn { dt: f.dt, values, f0: f64::NAN })
}

/// Exact Riemann-Liouville derivative of the piecewise-linear interpolant,
/// with `f0` taken as the value at the left end.
fn rl_piecewise_linear(dt: f64, values: &[f64], alpha: f64) -> Vec<f64> {
    let n = values.len();
    // (t_n - t_k)^(1-alpha) = dt^(1-alpha) b[n-k].
    let b: Vec<f64> = (0..n).map(|m| (m as f64).powf(1.0 - alpha)).collect();
    let slope_scale = dt.powf(-alpha) / gamma(2.0 - alpha);
    let g1 = gamma(1.0 - alpha);
    let slopes: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).collect();
    let f0 = values[0];
    let mut out = Vec::with_capacity(n);
    out.push(if f0 == 0.0 { 0.0 } else { f64::INFINITY.copysign(f0) });
    for i in 1..n {
        let mut acc = 0.0;
        for (k, s) in slopes[..i].iter().enumerate() {
            acc += s * (b[i - k] - b[i - k - 1]);
        }
        let singular = if f0 == 0.0 { 0.0 } else { f0 * (i as f64 * dt).powf(-alpha) / g1 };
        out.push(singular + slope_scale * acc);
    }
    out
}

pub fn riemann_liouville(f: &TimeGridFn, alpha: f64) -> Result<TimeGridFn> {
    check_alpha(alpha)?;
    Ok(TimeGridFn {
        dt: f.dt,
        values: rl_piecewise_linear(f.dt, &f.values, alpha),
        f0: f64::NAN,
    })
}

pub fn caputo(f: &TimeGridFn, alpha: f64) -> Result<TimeGridFn> {
    check_alpha(alpha)?;
    let shifted: Vec<f64> = f.values.iter().map(|v| v - f.f0).collect();
    Ok(TimeGridFn {
        dt: f.dt,
        values: rl_piecewise_linear(f.dt, &shifted, alpha),
        f0: 0.0,
    })
}

/// Nodes near `t = 0` left out of residual norms.
pub const SINGULAR_NODES: usize = 5;

/// `max |caputo f - (RL f - f(0+) t^-alpha / Gamma(1-alpha))|` past the first
/// [`SINGULAR_NODES`] nodes.
pub fn rl_caputo_relation_residual(f: &TimeGridFn, alpha: f64) -> Result<f64> {
    let c = caputo(f, alpha)?;
    let r = riemann_liouville(f, alpha)?;
    let g1 = gamma(1.0 - alpha);
    Ok((SINGULAR_NODES..f.len())
        .map(|j| (c.values[j] - (r.values[j] - f.f0 * f.t(j).powf(-alpha) / g1)).abs())
        .fold(0.0, f64::max))
}

/// `psi(-k)` with `E[exp(-i k A_u)] = exp(u psi(-k))`.
pub fn levy_symbol(fam: &LevyFamily, k: f64) -> Result<Complex64> {
    fam.validate()?;
    let i = Complex64::i();
    Ok(match *fam {
        LevyFamily::Brownian { mu, a } => Complex64::new(-0.5 * a * k * k, -mu * k),
        LevyFamily::SymmetricStable { beta, scale } => Complex64::new(-scale * k.abs().powf(beta), 0.0),
        LevyFamily::Poisson { lambda } => lambda * ((-i * k).exp() - 1.0),
        LevyFamily::CompoundPoisson { lambda, jump } => {
            let cf = match jump {
                JumpLaw::Normal { mean, sd } => (Complex64::new(-0.5 * sd * sd * k * k, -mean * k)).exp(),
                JumpLaw::Exponential { rate } => rate / Complex64::new(rate, k),
                JumpLaw::Constant { size } => (-i * k * size).exp(),
            };
            lambda * (cf - 1.0)
        }
    })
}
