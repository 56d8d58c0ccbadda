//! Laws of the aged increment `Y^{t0}_t = Y_{t0+t} - Y_{t0}`.
//!
//! Away from the origin the aged law is the un-aged one convolved in time
//! with the kernel `p_{t0}`:
//! `P(Y^{t0}_t in B) = int_0^t P(Y_{t-r} in B) p_{t0}(r) dr` for `0 notin B`.
//! The rest of the mass sits at 0. Every quantity here has a Monte Carlo
//! counterpart drawn from subordinator paths.

use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::sync::Arc;

use crate::dist::{AgingKernel, ml_waiting_sample};
use crate::error::{check_range, Error, Result};
use crate::mc_stats::{
    binomial_sigma, chi_square_two_sample, derive_seed, ks_two_sample, replicate, EmpiricalDist, TestResult,
};
use crate::process::{
    ctrwl_sample, default_du, inverse_levels, AgingSampler, IncrementSampler, JumpLaw, LevyFamily,
    DEFAULT_REL_DU,
};
use crate::quad::{GaussLegendre, Quadrature};
use crate::special_fn::{erfc, gamma, inverse_subordinator_pdf, ln_gamma, mittag_leffler, AlphaScale};
use crate::tol::TOL;

// ---------------------------------------------------------------------------
// Borel sets

/// Finite union of disjoint half-open intervals `(lo, hi]`, sorted.
/// An infinite `hi` means the interval is open on the right.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct BorelSet {
    intervals: Vec<(f64, f64)>,
}

impl BorelSet {
    pub fn new(mut intervals: Vec<(f64, f64)>) -> Result<Self> {
        if intervals.is_empty() {
            return Err(Error::InvalidSet("no intervals".into()));
        }
        for &(lo, hi) in &intervals {
            if lo.is_nan() || hi.is_nan() || !(lo < hi) || lo == f64::INFINITY || hi == f64::NEG_INFINITY {
                return Err(Error::InvalidSet(format!("interval ({lo}, {hi}] is empty or malformed")));
            }
        }
        intervals.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in intervals.windows(2) {
            if w[1].0 < w[0].1 {
                return Err(Error::InvalidSet(format!(
                    "intervals ({}, {}] and ({}, {}] overlap",
                    w[0].0, w[0].1, w[1].0, w[1].1
                )));
            }
        }
        Ok(Self { intervals })
    }

    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![(lo, hi)])
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    pub fn contains(&self, x: f64) -> bool {
        self.intervals.iter().any(|&(lo, hi)| lo < x && x <= hi)
    }

    pub fn contains_zero(&self) -> bool {
        self.contains(0.0)
    }

    /// `B / k` for `k > 0`.
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            intervals: self.intervals.iter().map(|&(lo, hi)| (lo / k, hi / k)).collect(),
        }
    }
}

impl TryFrom<Vec<[f64; 2]>> for BorelSet {
    type Error = Error;
    fn try_from(v: Vec<[f64; 2]>) -> Result<Self> {
        Self::new(v.into_iter().map(|[a, b]| (a, b)).collect())
    }
}

impl From<BorelSet> for Vec<[f64; 2]> {
    fn from(b: BorelSet) -> Self {
        b.intervals.into_iter().map(|(a, b)| [a, b]).collect()
    }
}

impl fmt::Display for BorelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, &(lo, hi)) in self.intervals.iter().enumerate() {
            if i > 0 {
                f.write_str(" U ")?;
            }
            let close = if hi.is_infinite() { ')' } else { ']' };
            write!(f, "({lo}, {hi}{close}")?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// P(A_u in B)

fn normal_sf(z: f64) -> f64 {
    if z == f64::INFINITY {
        0.0
    } else if z == f64::NEG_INFINITY {
        1.0
    } else {
        0.5 * erfc(z / SQRT_2)
    }
}

fn normal_mass(b: &BorelSet, mean: f64, sd: f64) -> f64 {
    b.intervals
        .iter()
        .map(|&(lo, hi)| {
            let (zl, zh) = ((lo - mean) / sd, (hi - mean) / sd);
            if zl >= 0.0 {
                normal_sf(zl) - normal_sf(zh)
            } else {
                normal_sf(-zh) - normal_sf(-zl)
            }
        })
        .sum()
}

fn poisson_ln_pmf(k: u64, mean: f64) -> f64 {
    -mean + k as f64 * mean.ln() - ln_gamma(k as f64 + 1.0)
}

fn poisson_kmax(mean: f64) -> u64 {
    (mean + 40.0 * mean.sqrt() + 40.0).ceil() as u64
}

/// `P(A_u in B)` in closed form or as a rapidly converging series; `None`
/// where no such form is implemented.
pub fn levy_set_prob(fam: &LevyFamily, b: &BorelSet, u: f64) -> Option<f64> {
    if u <= 0.0 {
        return Some(if b.contains_zero() { 1.0 } else { 0.0 });
    }
    match *fam {
        LevyFamily::Brownian { mu, a } => Some(normal_mass(b, mu * u, (a * u).sqrt())),
        LevyFamily::SymmetricStable { beta, scale } if beta == 2.0 => Some(normal_mass(b, 0.0, (2.0 * scale * u).sqrt())),
        LevyFamily::SymmetricStable { beta, scale } if beta == 1.0 => {
            let g = scale * u;
            Some(b.intervals.iter().map(|&(lo, hi)| ((hi / g).atan() - (lo / g).atan()) / PI).sum())
        }
        LevyFamily::SymmetricStable { .. } => None,
        LevyFamily::Poisson { lambda } => {
            let m = lambda * u;
            let kmax = poisson_kmax(m);
            let mut p = 0.0;
            for &(lo, hi) in &b.intervals {
                if hi < 0.0 {
                    continue;
                }
                let k0 = if lo < 0.0 { 0 } else { lo.floor() as u64 + 1 };
                let k1 = if hi.is_infinite() { kmax } else { (hi.floor() as u64).min(kmax) };
                for k in k0..=k1 {
                    p += poisson_ln_pmf(k, m).exp();
                }
            }
            Some(p)
        }
        LevyFamily::CompoundPoisson { lambda, jump } => {
            let m = lambda * u;
            let mut p = if b.contains_zero() { (-m).exp() } else { 0.0 };
            for k in 1..=poisson_kmax(m) {
                let w = poisson_ln_pmf(k, m).exp();
                let kf = k as f64;
                let inside = match jump {
                    JumpLaw::Normal { mean, sd } => normal_mass(b, kf * mean, sd * kf.sqrt()),
                    JumpLaw::Exponential { rate } => b
                        .intervals
                        .iter()
                        .map(|&(lo, hi)| {
                            let cdf = |x: f64| {
                                if x <= 0.0 {
                                    0.0
                                } else if x.is_infinite() {
                                    1.0
                                } else {
                                    statrs::function::gamma::gamma_lr(kf, rate * x)
                                }
                            };
                            cdf(hi) - cdf(lo)
                        })
                        .sum(),
                    JumpLaw::Constant { size } => {
                        if b.contains(kf * size) {
                            1.0
                        } else {
                            0.0
                        }
                    }
                };
                p += w * inside;
            }
            Some(p)
        }
    }
}

// ---------------------------------------------------------------------------
// Marginal law of Y_s

/// Quadrature rule for the law of `E_1`: `E[f(E_1)] ~ sum_i w_i f(v_i)`.
/// Since `E_s` has the law of `s^alpha E_1`, one rule serves every `s`.
#[derive(Debug, Clone)]
pub struct SubordinationRule {
    alpha: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl SubordinationRule {
    pub fn new(params: AlphaScale) -> Result<Self> {
        let alpha = params.alpha();
        // P(E_1 > v) ~ exp(-A(0) (c v)^(1/(1-alpha))); stop where that is e^-40.
        let ln_a0 = alpha / (1.0 - alpha) * alpha.ln() + (1.0 - alpha).ln();
        let v_max = (40.0 / ln_a0.exp()).powf(1.0 - alpha) / params.c();
        let panels = ((8.0 / (1.0 - alpha)).ceil() as usize).clamp(16, 400);
        let gl = GaussLegendre::new(16);
        let width = v_max / panels as f64;
        let mut nodes = Vec::with_capacity(panels * gl.len());
        let mut weights = Vec::with_capacity(panels * gl.len());
        for p in 0..panels {
            let a = p as f64 * width;
            for (x, w) in gl.mapped(a, a + width) {
                nodes.push(x);
                weights.push(w * inverse_subordinator_pdf(params, x, 1.0)?);
            }
        }
        Ok(Self { alpha, nodes, weights })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `E[f(E_s)]`.
    pub fn expect(&self, s: f64, f: impl Fn(f64) -> f64) -> f64 {
        let k = s.powf(self.alpha);
        self.nodes.iter().zip(&self.weights).map(|(v, w)| w * f(k * v)).sum()
    }
}

/// Default size and seed of the Monte Carlo table used where `P(A_u in B)`
/// has no closed form.
pub const TABLE_SIZE: usize = 1_000_000;
pub const TABLE_SEED: u64 = 0x5eed_7ab1e;

/// The one-time law of `Y_s = A(E_s)`.
#[derive(Debug, Clone)]
pub struct MarginalLaw {
    family: LevyFamily,
    params: AlphaScale,
    rule: Arc<SubordinationRule>,
    /// Sorted draws of `Y_1` for strictly stable families without a closed form.
    table: Option<Arc<EmpiricalDist>>,
}

impl MarginalLaw {
    pub fn new(family: LevyFamily, params: AlphaScale) -> Result<Self> {
        Self::with_table(family, params, TABLE_SIZE, TABLE_SEED)
    }

    /// Like [`MarginalLaw::new`] with an explicit table size and seed; the
    /// table is only built for families that need it.
    pub fn with_table(family: LevyFamily, params: AlphaScale, n: usize, seed: u64) -> Result<Self> {
        family.validate()?;
        let probe = BorelSet::interval(0.0, 1.0)?;
        let table = if levy_set_prob(&family, &probe, 1.0).is_some() {
            None
        } else {
            if family.stable_index().is_none() {
                return Err(Error::UnsupportedFamily(family.label().into()));
            }
            let y = replicate(n, seed, |rng| ctrwl_sample(&family, params, 1.0, rng).unwrap_or(f64::NAN));
            Some(Arc::new(EmpiricalDist::new(y)?))
        };
        Ok(Self {
            family,
            params,
            rule: Arc::new(SubordinationRule::new(params)?),
            table,
        })
    }

    pub fn family(&self) -> &LevyFamily {
        &self.family
    }

    pub fn params(&self) -> AlphaScale {
        self.params
    }

    pub fn rule(&self) -> &SubordinationRule {
        &self.rule
    }

    pub fn is_analytic(&self) -> bool {
        self.table.is_none()
    }

    /// `P(Y_s in B)`.
    pub fn eval(&self, b: &BorelSet, s: f64) -> Result<f64> {
        check_range("s", s, s >= 0.0, "[0, inf)")?;
        if s == 0.0 {
            return Ok(if b.contains_zero() { 1.0 } else { 0.0 });
        }
        if let Some(table) = &self.table {
            // Y_s has the law of s^(alpha/beta) Y_1.
            let beta = self.family.stable_index().expect("table only for stable families");
            let bk = b.scaled(s.powf(self.params.alpha() / beta));
            return Ok(bk.intervals.iter().map(|&(lo, hi)| table.cdf(hi) - table.cdf(lo)).sum());
        }
        let fam = self.family;
        let p = self.rule.expect(s, |u| levy_set_prob(&fam, b, u).unwrap_or(f64::NAN));
        if !p.is_finite() {
            return Err(Error::UnsupportedFamily(fam.label().into()));
        }
        Ok(p.clamp(0.0, 1.0))
    }

    /// `P(Y_s = 0) = E[P(A_{E_s} = 0)]`.
    pub fn zero_prob(&self, s: f64) -> Result<f64> {
        check_range("s", s, s >= 0.0, "[0, inf)")?;
        if s == 0.0 {
            return Ok(1.0);
        }
        match self.family {
            LevyFamily::Poisson { lambda } | LevyFamily::CompoundPoisson { lambda, .. } => {
                mittag_leffler(self.params.alpha(), -lambda * s.powf(self.params.alpha()) / self.params.c())
            }
            _ => Ok(0.0),
        }
    }
}

// ---------------------------------------------------------------------------
// Singular convolution quadrature

/// `int_0^t weight(r) g(t - r) dr` with `weight(r) ~ r^-alpha` at 0 and `g`
/// a smooth function of `s^alpha`. The left half uses
/// `r = (t/2) u^(2/(1-alpha))`, the right half `t - r = (t/2) w^(2/alpha)`,
/// each followed by composite Gauss-Legendre.
fn convolution_panels(
    alpha: f64,
    t: f64,
    panels: usize,
    gl: &GaussLegendre,
    weight: &dyn Fn(f64) -> Result<f64>,
    g: &dyn Fn(f64) -> Result<f64>,
) -> Result<f64> {
    let half = 0.5 * t;
    let width = 1.0 / panels as f64;
    let p_left = GRADING / (1.0 - alpha);
    let p_right = GRADING / alpha;
    let mut acc = 0.0;
    for p in 0..panels {
        let a = p as f64 * width;
        for (u, w) in gl.mapped(a, a + width) {
            let r = half * u.powf(p_left);
            let jac = half * p_left * u.powf(p_left - 1.0);
            acc += w * jac * weight(r)? * g(t - r)?;
            let s = half * u.powf(p_right);
            let jac = half * p_right * u.powf(p_right - 1.0);
            acc += w * jac * weight(t - s)? * g(s)?;
        }
    }
    Ok(acc)
}

const GL_ORDER: usize = 16;
/// Extra power in both substitutions; makes the integrands vanish smoothly at the ends.
const GRADING: f64 = 2.0;
const MAX_PANELS: usize = 256;

/// Refines by doubling the panel count until two levels agree to the aging
/// quadrature tolerance.
fn convolution(
    alpha: f64,
    t: f64,
    weight: &dyn Fn(f64) -> Result<f64>,
    g: &dyn Fn(f64) -> Result<f64>,
) -> Result<Quadrature> {
    let gl = GaussLegendre::new(GL_ORDER);
    let mut panels = 2;
    let mut prev = convolution_panels(alpha, t, panels, &gl, weight, g)?;
    let mut evaluations = 2 * panels * GL_ORDER;
    while panels < MAX_PANELS {
        panels *= 2;
        let cur = convolution_panels(alpha, t, panels, &gl, weight, g)?;
        evaluations += 2 * panels * GL_ORDER;
        let err = (cur - prev).abs();
        if err <= TOL.aging_quad {
            return Ok(Quadrature {
                value: cur,
                error: err,
                evaluations,
            });
        }
        prev = cur;
    }
    Err(Error::Quadrature {
        error: f64::NAN,
        evaluations,
    })
}

fn check_aging_inputs(b: &BorelSet, t: f64, t0: f64) -> Result<()> {
    if b.contains_zero() {
        return Err(Error::SetContainsZero);
    }
    check_range("t", t, t > 0.0, "(0, inf)")?;
    check_range("t0", t0, t0 >= 0.0, "[0, inf)")
}

/// `P(Y^{t0}_t in B)` with its refinement error estimate. `t0 = 0` returns
/// the un-aged `P(Y_t in B)`.
pub fn aging_prob_quad(law: &MarginalLaw, b: &BorelSet, t: f64, t0: f64) -> Result<Quadrature> {
    check_aging_inputs(b, t, t0)?;
    if t0 == 0.0 {
        return Ok(Quadrature {
            value: law.eval(b, t)?,
            error: 0.0,
            evaluations: 1,
        });
    }
    let kernel = AgingKernel::new(law.params().alpha(), t0)?;
    // P(Y_0 in B) = 0 since 0 notin B: the endpoint r = t contributes nothing.
    let g = |s: f64| if s <= 0.0 { Ok(0.0) } else { law.eval(b, s) };
    convolution(law.params().alpha(), t, &|r| kernel.pdf(r), &g)
}

pub fn aging_prob(law: &MarginalLaw, b: &BorelSet, t: f64, t0: f64) -> Result<f64> {
    Ok(aging_prob_quad(law, b, t, t0)?.value.clamp(0.0, 1.0))
}

/// `P(Y^{t0}_t = 0)`: no regeneration in `(t0, t0 + t]`, plus, for families
/// that can stand still, the chance `A` has not moved since the first one.
pub fn zero_atom(fam: &LevyFamily, params: AlphaScale, t: f64, t0: f64) -> Result<f64> {
    fam.validate()?;
    check_range("t", t, t > 0.0, "(0, inf)")?;
    check_range("t0", t0, t0 > 0.0, "(0, inf)")?;
    let alpha = params.alpha();
    let kernel = AgingKernel::new(alpha, t0)?;
    let mut p = kernel.sf(t)?;
    if let LevyFamily::Poisson { lambda } | LevyFamily::CompoundPoisson { lambda, .. } = *fam {
        let g = |s: f64| mittag_leffler(alpha, -lambda * s.max(0.0).powf(alpha) / params.c());
        p += convolution(alpha, t, &|r| kernel.pdf(r), &g)?.value;
    }
    Ok(p.clamp(0.0, 1.0))
}

/// `C = (sin(pi alpha)/pi) int_0^t P(Y_{t-r} in B) r^-alpha dr`, so that
/// `P(Y^{t0}_t in B) ~ C t0^(alpha-1)` for large `t0`.
pub fn asymptotic_constant(law: &MarginalLaw, b: &BorelSet, t: f64) -> Result<f64> {
    check_aging_inputs(b, t, 0.0)?;
    let alpha = law.params().alpha();
    let g = |s: f64| if s <= 0.0 { Ok(0.0) } else { law.eval(b, s) };
    let q = convolution(alpha, t, &|r| Ok(r.powf(-alpha)), &g)?;
    let c = (PI * alpha).sin() / PI * q.value;
    if c <= 0.0 {
        return Err(Error::VacuousAsymptotic);
    }
    Ok(c)
}

pub fn asymptotic_prob(law: &MarginalLaw, b: &BorelSet, t: f64, t0: f64) -> Result<f64> {
    check_range("t0", t0, t0 > 0.0, "(0, inf)")?;
    Ok(asymptotic_constant(law, b, t)? * t0.powf(law.params().alpha() - 1.0))
}

/// `int_0^t (t-r)^alpha r^-alpha dr` by the aging quadrature; equals
/// `Gamma(1-alpha) Gamma(1+alpha) t`.
pub fn power_convolution(alpha: f64, t: f64) -> Result<f64> {
    check_range("alpha", alpha, alpha > 0.0 && alpha < 1.0, "(0, 1)")?;
    check_range("t", t, t > 0.0, "(0, inf)")?;
    Ok(convolution(alpha, t, &|r| Ok(r.powf(-alpha)), &|s| Ok(s.max(0.0).powf(alpha)))?.value)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Empty("a slope fit needs two or more matched points"));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

// ---------------------------------------------------------------------------
// Fractional Poisson mean

/// Large-`t0` mean of the aged fractional Poisson increment,
/// `t0^(alpha-1) (sin(pi alpha)/pi) lambda t Gamma(1-alpha)`.
pub fn fpp_aging_mean(alpha: f64, lambda: f64, t: f64, t0: f64) -> Result<f64> {
    check_range("alpha", alpha, alpha > 0.0 && alpha < 1.0, "(0, 1)")?;
    check_range("lambda", lambda, lambda > 0.0, "(0, inf)")?;
    check_range("t", t, t > 0.0, "(0, inf)")?;
    check_range("t0", t0, t0 > 0.0, "(0, inf)")?;
    Ok(t0.powf(alpha - 1.0) * (PI * alpha).sin() / PI * lambda * t * gamma(1.0 - alpha))
}

/// Exact mean `lambda ((t0+t)^alpha - t0^alpha) / Gamma(1+alpha)`.
pub fn fpp_aging_mean_exact(alpha: f64, lambda: f64, t: f64, t0: f64) -> f64 {
    lambda * ((t0 + t).powf(alpha) - t0.powf(alpha)) / gamma(1.0 + alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McMean {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
}

impl McMean {
    fn from_values(v: &[f64]) -> Self {
        let n = v.len();
        let mean = v.iter().sum::<f64>() / n as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0).max(1.0);
        Self {
            mean,
            std_error: (var / n as f64).sqrt(),
            n,
        }
    }
}

/// Renewals of the fractional Poisson process in `(t0, t0 + t]`.
pub fn fpp_aging_increment<R: rand::Rng + ?Sized>(alpha: f64, lambda: f64, t: f64, t0: f64, rng: &mut R) -> Result<u64> {
    let end = t0 + t;
    let mut clock = 0.0;
    let mut count = 0;
    loop {
        clock += ml_waiting_sample(alpha, lambda, rng)?;
        if clock > end {
            return Ok(count);
        }
        if clock > t0 {
            count += 1;
        }
    }
}

pub fn fpp_aging_mean_mc(alpha: f64, lambda: f64, t: f64, t0: f64, n: usize, seed: u64) -> Result<McMean> {
    check_range("t", t, t > 0.0, "(0, inf)")?;
    check_range("t0", t0, t0 >= 0.0, "[0, inf)")?;
    if n < 2 {
        return Err(Error::Empty("need at least two replicates"));
    }
    let v: Vec<f64> = crate::mc_stats::try_replicate(n, seed, |rng| Ok(fpp_aging_increment(alpha, lambda, t, t0, rng)? as f64))?;
    Ok(McMean::from_values(&v))
}

// ---------------------------------------------------------------------------
// Monte Carlo counterparts

/// Aged increments `Y^{t0}_t` for several `t0` at once. Each replicate
/// walks one subordinator path through every level; the `A` increments are
/// drawn per `t0`. Returns one vector per entry of `t0s`.
pub fn aged_increment_ensemble(
    fam: &LevyFamily,
    params: AlphaScale,
    t0s: &[f64],
    t: f64,
    n: usize,
    seed: u64,
    rel_du: f64,
) -> Result<Vec<Vec<f64>>> {
    fam.validate()?;
    check_range("t", t, t > 0.0, "(0, inf)")?;
    if t0s.is_empty() {
        return Err(Error::Empty("no t0 values"));
    }
    for &t0 in t0s {
        check_range("t0", t0, t0 >= 0.0, "[0, inf)")?;
    }
    let mut levels: Vec<f64> = t0s.iter().flat_map(|&t0| [t0, t0 + t]).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let index = |x: f64| levels.partition_point(|&l| l < x);
    let slots: Vec<(usize, usize)> = t0s.iter().map(|&t0| (index(t0), index(t0 + t))).collect();
    let du = default_du(params, *levels.last().unwrap(), rel_du)?;
    let inc = IncrementSampler::new(params, du);
    let fam = *fam;
    let rows = replicate(n, seed, |rng| {
        let es = inverse_levels(&inc, du, &levels, rng);
        slots.iter().map(|&(a, b)| fam.sample(es[b] - es[a], rng)).collect::<Vec<f64>>()
    });
    Ok((0..t0s.len()).map(|k| rows.iter().map(|r| r[k]).collect()).collect())
}

/// Quadrature against Monte Carlo for one `(t0, B)` pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TheoremCell {
    pub alpha: f64,
    pub t: f64,
    pub t0: f64,
    pub set: String,
    pub quadrature: f64,
    pub quadrature_error: f64,
    pub mc_frequency: f64,
    pub sigma: f64,
    pub z: f64,
    pub pass: bool,
}

/// Checks the kernel convolution against path Monte Carlo on every
/// `(t0, B)` pair, passing a cell when the two differ by at most 3 binomial
/// standard deviations.
pub fn theorem_check(
    law: &MarginalLaw,
    sets: &[BorelSet],
    t: f64,
    t0s: &[f64],
    n: usize,
    seed: u64,
    rel_du: f64,
) -> Result<Vec<TheoremCell>> {
    let samples = aged_increment_ensemble(law.family(), law.params(), t0s, t, n, seed, rel_du)?;
    let mut cells = Vec::with_capacity(t0s.len() * sets.len());
    for (&t0, ys) in t0s.iter().zip(&samples) {
        for b in sets {
            let q = aging_prob_quad(law, b, t, t0)?;
            let p = q.value.clamp(0.0, 1.0);
            let freq = ys.iter().filter(|&&y| b.contains(y)).count() as f64 / n as f64;
            let sigma = binomial_sigma(p, n);
            let z = if sigma > 0.0 { (freq - p) / sigma } else { 0.0 };
            cells.push(TheoremCell {
                alpha: law.params().alpha(),
                t,
                t0,
                set: b.to_string(),
                quadrature: q.value,
                quadrature_error: q.error,
                mc_frequency: freq,
                sigma,
                z,
                pass: z.abs() <= 3.0,
            });
        }
    }
    Ok(cells)
}

/// Estimate with Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointEstimate {
    pub value: f64,
    pub std_error: f64,
}

const JOINT_PANELS: usize = 2;
const JOINT_ORDER: usize = 8;

/// `P(Y^{t0}_{t_1} in B_1, ..., Y^{t0}_{t_k} in B_k)` for `0 notin B_1`, as the
/// kernel convolution of the joint un-aged probability. For `k = 1` this is
/// [`aging_prob`]. For `k >= 2` the joint probability at each quadrature
/// node is estimated from `n` subordinator paths shared by all nodes.
pub fn aging_joint_prob(
    law: &MarginalLaw,
    sets: &[BorelSet],
    times: &[f64],
    t0: f64,
    n: usize,
    seed: u64,
) -> Result<JointEstimate> {
    if sets.len() != times.len() || sets.is_empty() {
        return Err(Error::Empty("sets and times must be nonempty and of equal length"));
    }
    check_aging_inputs(&sets[0], times[0], t0)?;
    check_range("t0", t0, t0 > 0.0, "(0, inf)")?;
    for w in times.windows(2) {
        check_range("t", w[1], w[1] > w[0], "an increasing sequence")?;
    }
    if sets.len() == 1 {
        let q = aging_prob_quad(law, &sets[0], times[0], t0)?;
        return Ok(JointEstimate {
            value: q.value,
            std_error: 0.0,
        });
    }
    let alpha = law.params().alpha();
    let kernel = AgingKernel::new(alpha, t0)?;
    let t1 = times[0];
    let half = 0.5 * t1;
    let gl = GaussLegendre::new(JOINT_ORDER);
    // Quadrature nodes r_j and weights, same substitution as the one-set case.
    let mut nodes: Vec<(f64, f64)> = Vec::new();
    let width = 1.0 / JOINT_PANELS as f64;
    for p in 0..JOINT_PANELS {
        let a = p as f64 * width;
        for (u, w) in gl.mapped(a, a + width) {
            let pl = GRADING / (1.0 - alpha);
            let r = half * u.powf(pl);
            nodes.push((r, w * half * pl * u.powf(pl - 1.0) * kernel.pdf(r)?));
            let pr = GRADING / alpha;
            let s = half * u.powf(pr);
            nodes.push((t1 - s, w * half * pr * u.powf(pr - 1.0) * kernel.pdf(t1 - s)?));
        }
    }
    // Every (node, time) pair is a level of the un-aged walk.
    let mut levels: Vec<(f64, usize, usize)> = Vec::new();
    for (j, &(r, _)) in nodes.iter().enumerate() {
        for (i, &ti) in times.iter().enumerate() {
            levels.push((ti - r, j, i));
        }
    }
    levels.sort_by(|a, b| a.0.total_cmp(&b.0));
    let sorted: Vec<f64> = levels.iter().map(|l| l.0).collect();
    let du = default_du(law.params(), *times.last().unwrap(), DEFAULT_REL_DU)?;
    let inc = IncrementSampler::new(law.params(), du);
    let fam = *law.family();
    let scores = replicate(n, seed, |rng| {
        let es = inverse_levels(&inc, du, &sorted, rng);
        let mut inside = vec![true; nodes.len()];
        let mut a = 0.0;
        let mut prev_e = 0.0;
        for (l, &e) in levels.iter().zip(&es) {
            a += fam.sample(e - prev_e, rng);
            prev_e = e;
            if !sets[l.2].contains(a) {
                inside[l.1] = false;
            }
        }
        nodes.iter().zip(&inside).filter(|(_, &ok)| ok).map(|(nd, _)| nd.1).sum::<f64>()
    });
    let m = McMean::from_values(&scores);
    Ok(JointEstimate {
        value: m.mean,
        std_error: m.std_error,
    })
}

/// `P(Y^{t0}_t in B)` for a list of `t0`, with the indices where it rises.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonotoneReport {
    pub t0s: Vec<f64>,
    pub values: Vec<f64>,
    pub violations: Vec<usize>,
}

/// Flags, rather than assumes, decay of the aged probability in `t0`.
/// Increases below the quadrature tolerance are ignored.
pub fn monotone_in_t0(law: &MarginalLaw, b: &BorelSet, t: f64, t0s: &[f64]) -> Result<MonotoneReport> {
    let values = t0s.iter().map(|&t0| aging_prob(law, b, t, t0)).collect::<Result<Vec<_>>>()?;
    let violations = values
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[1] > w[0] + 10.0 * TOL.aging_quad)
        .map(|(i, _)| i + 1)
        .collect();
    Ok(MonotoneReport {
        t0s: t0s.to_vec(),
        values,
        violations,
    })
}

// ---------------------------------------------------------------------------
// Scaling and the alpha -> 1 limit

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoordinateTest {
    pub time: f64,
    pub ks: TestResult,
    pub zero_freq_lhs: f64,
    pub zero_freq_rhs: f64,
    pub zero_z: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelfSimilarityReport {
    pub family: LevyFamily,
    pub alpha: f64,
    pub c: f64,
    pub beta: f64,
    pub t0: f64,
    pub a: f64,
    pub n: usize,
    pub seed: u64,
    pub level: f64,
    pub coordinates: Vec<CoordinateTest>,
    /// Two-sample chi-square on the joint sign pattern of the coordinates.
    pub joint: TestResult,
    pub pass: bool,
}

/// Two-sample z-score of two frequencies under a pooled binomial null.
fn frequency_z(p1: f64, p2: f64, n: usize) -> f64 {
    let p = 0.5 * (p1 + p2);
    let s = binomial_sigma(p, n) * SQRT_2;
    if s > 0.0 {
        (p1 - p2) / s
    } else {
        0.0
    }
}

fn sign_pattern(y: &[f64]) -> usize {
    y.iter().fold(0, |acc, &v| 3 * acc + if v < 0.0 { 0 } else if v == 0.0 { 1 } else { 2 })
}

/// Compares `(Y^{t0}_{a t_i})_i` with `(a^(alpha/beta) Y^{t0/a}_{t_i})_i` by
/// per-coordinate two-sample KS, exact-zero frequencies and a joint sign test.
pub fn self_similarity_check(
    fam: &LevyFamily,
    params: AlphaScale,
    t0: f64,
    a: f64,
    times: &[f64],
    n: usize,
    seed: u64,
) -> Result<SelfSimilarityReport> {
    let beta = fam
        .stable_index()
        .ok_or_else(|| Error::UnsupportedFamily(format!("{} is not strictly stable", fam.label())))?;
    check_range("a", a, a > 0.0, "(0, inf)")?;
    check_range("t0", t0, t0 > 0.0, "(0, inf)")?;
    let level = 0.01;
    let alpha = params.alpha();
    let scaled: Vec<f64> = times.iter().map(|t| a * t).collect();
    let lhs_sampler = AgingSampler::new(*fam, params, t0, &scaled, DEFAULT_REL_DU)?;
    let rhs_sampler = AgingSampler::new(*fam, params, t0 / a, times, DEFAULT_REL_DU)?;
    let k = a.powf(alpha / beta);
    let lhs_seed = derive_seed(seed, 1);
    let rhs_seed = derive_seed(seed, 2);
    let lhs = replicate(n, lhs_seed, |rng| lhs_sampler.sample(rng));
    let rhs = replicate(n, rhs_seed, |rng| rhs_sampler.sample(rng).into_iter().map(|y| k * y).collect::<Vec<_>>());
    let mut coordinates = Vec::with_capacity(times.len());
    for (i, &time) in times.iter().enumerate() {
        let l = EmpiricalDist::new(lhs.iter().map(|r| r[i]).collect())?;
        let r = EmpiricalDist::new(rhs.iter().map(|r| r[i]).collect())?;
        let ks = ks_two_sample(&l, &r)?;
        let zl = l.zero_count() as f64 / n as f64;
        let zr = r.zero_count() as f64 / n as f64;
        let zero_z = frequency_z(zl, zr, n);
        coordinates.push(CoordinateTest {
            time,
            ks,
            zero_freq_lhs: zl,
            zero_freq_rhs: zr,
            zero_z,
            pass: ks.p_value > level && zero_z.abs() <= 3.0,
        });
    }
    let cells = 3usize.pow(times.len() as u32);
    let mut hl = vec![0u64; cells];
    let mut hr = vec![0u64; cells];
    for r in &lhs {
        hl[sign_pattern(r)] += 1;
    }
    for r in &rhs {
        hr[sign_pattern(r)] += 1;
    }
    let joint = chi_square_two_sample(&hl, &hr)?;
    let pass = coordinates.iter().all(|c| c.pass) && joint.p_value > level;
    Ok(SelfSimilarityReport {
        family: *fam,
        alpha,
        c: params.c(),
        beta,
        t0,
        a,
        n,
        seed,
        level,
        coordinates,
        joint,
        pass,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StationarityRow {
    pub alpha: f64,
    pub ks_distance: f64,
    pub p_value: f64,
    /// `P(R_{t0} <= 0.05 t)`: the kernel's mass near 0.
    pub kernel_mass_near_zero: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StationarityReport {
    pub family: LevyFamily,
    pub c: f64,
    pub t: f64,
    pub t0: f64,
    pub n: usize,
    pub seed: u64,
    pub rows: Vec<StationarityRow>,
    /// Slack allowed between consecutive distances, `1.36 sqrt(2/n)`.
    pub noise: f64,
    pub non_increasing: bool,
    pub threshold: f64,
    pub pass: bool,
}

/// Default bound on the final KS distance.
pub const STATIONARITY_THRESHOLD: f64 = 0.02;

/// Two-sample KS distance between `Y^{t0}_t` and `Y_t` along a grid of
/// `alpha` rising toward 1.
pub fn stationarity_limit_check(
    fam: &LevyFamily,
    c: f64,
    t: f64,
    t0: f64,
    alphas: &[f64],
    n: usize,
    seed: u64,
) -> Result<StationarityReport> {
    fam.validate()?;
    if alphas.is_empty() {
        return Err(Error::Empty("no alpha values"));
    }
    let mut rows = Vec::with_capacity(alphas.len());
    for (i, &alpha) in alphas.iter().enumerate() {
        let params = AlphaScale::new(alpha, c)?;
        let sampler = AgingSampler::new(*fam, params, t0, &[t], DEFAULT_REL_DU)?;
        let aged = replicate(n, derive_seed(seed, 2 * i as u64), |rng| sampler.sample(rng)[0]);
        let fresh = crate::mc_stats::try_replicate(n, derive_seed(seed, 2 * i as u64 + 1), |rng| {
            ctrwl_sample(fam, params, t, rng)
        })?;
        let ks = ks_two_sample(&EmpiricalDist::new(aged)?, &EmpiricalDist::new(fresh)?)?;
        rows.push(StationarityRow {
            alpha,
            ks_distance: ks.statistic,
            p_value: ks.p_value,
            kernel_mass_near_zero: AgingKernel::new(alpha, t0)?.cdf(0.05 * t)?,
        });
    }
    let noise = 1.36 * (2.0 / n as f64).sqrt();
    let non_increasing = rows.windows(2).all(|w| w[1].ks_distance <= w[0].ks_distance + noise);
    let last = rows.last().unwrap().ks_distance;
    Ok(StationarityReport {
        family: *fam,
        c,
        t,
        t0,
        n,
        seed,
        rows,
        noise,
        non_increasing,
        threshold: STATIONARITY_THRESHOLD,
        pass: non_increasing && last < STATIONARITY_THRESHOLD,
    })
}

/// Exact-zero frequency of aged increments from a single `(t0, t)` ensemble.
pub fn zero_frequency_mc(fam: &LevyFamily, params: AlphaScale, t: f64, t0: f64, n: usize, seed: u64, rel_du: f64) -> Result<f64> {
    let y = aged_increment_ensemble(fam, params, &[t0], t, n, seed, rel_du)?;
    Ok(y[0].iter().filter(|&&v| v == 0.0).count() as f64 / n as f64)
}
