//! Samplers for the stable subordinator `D_u`, its inverse `E_t`, the outer
//! Lévy process `A_u`, the walk limit `Y_t = A(E_t)`, aged increments and
//! the fractional Poisson process.
//!
//! Paths of `D` live on a uniform `u`-grid; `E_t` is read off as the first
//! grid point where `D` exceeds `t`. `A` is never discretised: its increments
//! over `E`-increments are drawn exactly.

use rand::Rng;
use rand_distr::{Distribution, Exp1, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use crate::dist::{ml_waiting_sample, stable_onesided_sample};
use crate::error::{check_range, Error, Result};
use crate::special_fn::{stable_quantile_onesided, AlphaScale};
use crate::tol::TOL;

/// Jump-size law of a compound Poisson process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum JumpLaw {
    Normal { mean: f64, sd: f64 },
    Exponential { rate: f64 },
    Constant { size: f64 },
}

impl JumpLaw {
    fn validate(&self) -> Result<()> {
        match *self {
            JumpLaw::Normal { mean, sd } => {
                check_range("jump mean", mean, true, "finite reals")?;
                check_range("jump sd", sd, sd > 0.0, "(0, inf)")
            }
            JumpLaw::Exponential { rate } => check_range("jump rate", rate, rate > 0.0, "(0, inf)"),
            JumpLaw::Constant { size } => check_range("jump size", size, size != 0.0, "nonzero reals"),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            JumpLaw::Normal { mean, sd } => mean + sd * rng.sample::<f64, _>(StandardNormal),
            JumpLaw::Exponential { rate } => rng.sample::<f64, _>(Exp1) / rate,
            JumpLaw::Constant { size } => size,
        }
    }
}

/// Parametric outer process `A_u`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LevyFamily {
    /// `A_u = mu u + sqrt(a) W_u`.
    Brownian { mu: f64, a: f64 },
    /// Symmetric stable with `E[exp(ik A_u)] = exp(-u scale |k|^beta)`.
    SymmetricStable { beta: f64, scale: f64 },
    Poisson { lambda: f64 },
    CompoundPoisson { lambda: f64, jump: JumpLaw },
}

impl LevyFamily {
    pub fn brownian(mu: f64, a: f64) -> Result<Self> {
        let f = LevyFamily::Brownian { mu, a };
        f.validate()?;
        Ok(f)
    }

    pub fn symmetric_stable(beta: f64, scale: f64) -> Result<Self> {
        let f = LevyFamily::SymmetricStable { beta, scale };
        f.validate()?;
        Ok(f)
    }

    pub fn poisson(lambda: f64) -> Result<Self> {
        let f = LevyFamily::Poisson { lambda };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LevyFamily::Brownian { mu, a } => {
                check_range("mu", mu, true, "finite reals")?;
                check_range("A", a, a > 0.0, "(0, inf)")
            }
            LevyFamily::SymmetricStable { beta, scale } => {
                check_range("beta", beta, beta > 0.0 && beta <= 2.0, "(0, 2]")?;
                check_range("scale", scale, scale > 0.0, "(0, inf)")
            }
            LevyFamily::Poisson { lambda } => check_range("lambda", lambda, lambda > 0.0, "(0, inf)"),
            LevyFamily::CompoundPoisson { lambda, jump } => {
                check_range("lambda", lambda, lambda > 0.0, "(0, inf)")?;
                jump.validate()
            }
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            LevyFamily::Brownian { .. } => "brownian",
            LevyFamily::SymmetricStable { .. } => "symmetric_stable",
            LevyFamily::Poisson { .. } => "poisson",
            LevyFamily::CompoundPoisson { .. } => "compound_poisson",
        }
    }

    /// Whether `P(A_u = 0) > 0` for `u > 0`.
    pub fn has_zero_atom(&self) -> bool {
        matches!(self, LevyFamily::Poisson { .. } | LevyFamily::CompoundPoisson { .. })
    }

    /// `P(A_u = 0)`.
    pub fn zero_probability(&self, u: f64) -> f64 {
        match *self {
            LevyFamily::Poisson { lambda } | LevyFamily::CompoundPoisson { lambda, .. } => (-lambda * u).exp(),
            _ => {
                if u == 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Index of strict stability, if `A` is strictly stable.
    pub fn stable_index(&self) -> Option<f64> {
        match *self {
            LevyFamily::Brownian { mu, .. } if mu == 0.0 => Some(2.0),
            LevyFamily::SymmetricStable { beta, .. } => Some(beta),
            _ => None,
        }
    }

    /// Exact draw of `A_u`; returns exactly 0 at `u = 0`.
    pub fn sample<R: Rng + ?Sized>(&self, u: f64, rng: &mut R) -> f64 {
        if u <= 0.0 {
            return 0.0;
        }
        match *self {
            LevyFamily::Brownian { mu, a } => mu * u + (a * u).sqrt() * rng.sample::<f64, _>(StandardNormal),
            LevyFamily::SymmetricStable { beta, scale } => (scale * u).powf(1.0 / beta) * symmetric_stable_standard(beta, rng),
            LevyFamily::Poisson { lambda } => poisson_count(lambda * u, rng) as f64,
            LevyFamily::CompoundPoisson { lambda, jump } => {
                let n = poisson_count(lambda * u, rng);
                (0..n).map(|_| jump.sample(rng)).sum()
            }
        }
    }
}

fn poisson_count<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive mean").sample(rng) as u64
}

/// Standard symmetric stable draw with `E[exp(ikZ)] = exp(-|k|^beta)`
/// (Chambers-Mallows-Stuck). `beta = 2` gives `N(0, 2)`, `beta = 1` Cauchy.
pub fn symmetric_stable_standard<R: Rng + ?Sized>(beta: f64, rng: &mut R) -> f64 {
    let v = FRAC_PI_2 * (2.0 * rng.random::<f64>() - 1.0);
    if beta == 1.0 {
        return v.tan();
    }
    let w: f64 = rng.sample(Exp1);
    if beta == 2.0 {
        return 2.0 * v.sin() * w.sqrt();
    }
    (beta * v).sin() / v.cos().powf(1.0 / beta) * (((1.0 - beta) * v).cos() / w).powf((1.0 - beta) / beta)
}

/// `A` sampled at the points of a nondecreasing grid, starting from `A_0 = 0`.
pub fn levy_path<R: Rng + ?Sized>(fam: &LevyFamily, u_grid: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    fam.validate()?;
    let mut out = Vec::with_capacity(u_grid.len());
    let mut prev_u = 0.0;
    let mut a = 0.0;
    for &u in u_grid {
        if u < prev_u {
            return Err(Error::Domain {
                name: "u_grid",
                value: u,
                expected: "a nondecreasing grid of nonnegative reals",
            });
        }
        a += fam.sample(u - prev_u, rng);
        out.push(a);
        prev_u = u;
    }
    Ok(out)
}

pub fn levy_sample<R: Rng + ?Sized>(fam: &LevyFamily, u: f64, rng: &mut R) -> Result<f64> {
    fam.validate()?;
    check_range("u", u, u >= 0.0, "[0, inf)")?;
    Ok(fam.sample(u, rng))
}

// ---------------------------------------------------------------------------
// Subordinator and its inverse

/// Draws stable subordinator increments over a fixed step `du`.
#[derive(Debug, Clone, Copy)]
pub struct IncrementSampler {
    alpha: f64,
    scale: f64,
}

impl IncrementSampler {
    pub fn new(params: AlphaScale, du: f64) -> Self {
        let alpha = params.alpha();
        Self {
            alpha,
            scale: (params.c() * du).powf(1.0 / alpha),
        }
    }

    /// `(c du)^(1/alpha) S`.
    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.scale * stable_onesided_sample(self.alpha, rng)
    }
}

/// A discretised subordinator path on `u_j = j du`, `d_values[j] = D(u_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubordinatorPath {
    pub params: AlphaScale,
    pub du: f64,
    pub d_values: Vec<f64>,
    pub seed: Option<u64>,
}

impl SubordinatorPath {
    pub fn u(&self, j: usize) -> f64 {
        j as f64 * self.du
    }

    pub fn u_grid(&self) -> Vec<f64> {
        (0..self.d_values.len()).map(|j| self.u(j)).collect()
    }

    pub fn horizon(&self) -> f64 {
        *self.d_values.last().unwrap_or(&0.0)
    }
}

pub fn subordinator_path<R: Rng + ?Sized>(params: AlphaScale, du: f64, u_max: f64, rng: &mut R) -> Result<SubordinatorPath> {
    check_range("du", du, du > 0.0, "(0, inf)")?;
    check_range("u_max", u_max, u_max >= du, "[du, inf)")?;
    let steps = (u_max / du).round() as usize;
    let inc = IncrementSampler::new(params, du);
    let mut d_values = Vec::with_capacity(steps + 1);
    d_values.push(0.0);
    let mut d = 0.0;
    for _ in 0..steps {
        d += inc.sample(rng);
        d_values.push(d);
    }
    Ok(SubordinatorPath {
        params,
        du,
        d_values,
        seed: None,
    })
}

/// First passage read off a grid path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Passage {
    /// `E_t`: first grid `u` with `D_u > t`.
    pub e: f64,
    /// `R_t = D_{E_t} - t`.
    pub r: f64,
    /// `V_t = t - D` at the preceding grid point.
    pub v: f64,
    /// `D_{E_t}`.
    pub d_at_e: f64,
}

pub fn inverse_at(path: &SubordinatorPath, t: f64) -> Result<Passage> {
    check_range("t", t, t >= 0.0, "[0, inf)")?;
    let j = path.d_values.partition_point(|&d| d <= t);
    if j >= path.d_values.len() {
        return Err(Error::Horizon {
            t,
            horizon: path.horizon(),
        });
    }
    let d = path.d_values[j];
    Ok(Passage {
        e: path.u(j),
        r: d - t,
        v: t - path.d_values[j - 1],
        d_at_e: d,
    })
}

/// `u_max` with `P(D_{u_max} < horizon) <= tail`: `(horizon / q)^alpha / c` for the stable `tail`-quantile `q`.
pub fn horizon_u_max(params: AlphaScale, horizon: f64) -> Result<f64> {
    check_range("horizon", horizon, horizon > 0.0, "(0, inf)")?;
    let q = stable_quantile_onesided(params.alpha(), TOL.horizon_tail)?;
    Ok((horizon / q).powf(params.alpha()) / params.c())
}

/// Grid step for a path covering `horizon`: `rel_du * u_max`.
pub fn default_du(params: AlphaScale, horizon: f64, rel_du: f64) -> Result<f64> {
    check_range("rel_du", rel_du, rel_du > 0.0 && rel_du <= 1.0, "(0, 1]")?;
    Ok(rel_du * horizon_u_max(params, horizon)?)
}

/// Default relative grid step, `du = 1e-3 u_max`.
pub const DEFAULT_REL_DU: f64 = 1e-3;

/// Grid first-passage times of sorted `levels` on one freshly simulated
/// path. The path is generated only until it passes the last level, so it
/// extends itself as far as needed. A level of exactly 0 maps to `E = 0`.
pub fn inverse_levels<R: Rng + ?Sized>(inc: &IncrementSampler, du: f64, levels: &[f64], rng: &mut R) -> Vec<f64> {
    let mut out = Vec::with_capacity(levels.len());
    let mut d = 0.0;
    let mut j: u64 = 0;
    for &level in levels {
        if level <= 0.0 {
            out.push(0.0);
            continue;
        }
        while d <= level {
            d += inc.sample(rng);
            j += 1;
        }
        out.push(j as f64 * du);
    }
    out
}

/// Exact single-time draw `E_t = (t / S)^alpha / c`.
pub fn inverse_marginal_sample<R: Rng + ?Sized>(params: AlphaScale, t: f64, rng: &mut R) -> Result<f64> {
    check_range("t", t, t > 0.0, "(0, inf)")?;
    let s = stable_onesided_sample(params.alpha(), rng);
    Ok((t / s).powf(params.alpha()) / params.c())
}

/// `Y_t = A(E_t)` drawn exactly from the single-time law of `E_t`.
pub fn ctrwl_sample<R: Rng + ?Sized>(fam: &LevyFamily, params: AlphaScale, t: f64, rng: &mut R) -> Result<f64> {
    fam.validate()?;
    let u = inverse_marginal_sample(params, t, rng)?;
    Ok(fam.sample(u, rng))
}

/// Draws joint aged increments `(Y^{t0}_{t_1}, ..., Y^{t0}_{t_k})` on shared
/// subordinator paths. Holds the grid so repeated draws skip the setup.
#[derive(Debug, Clone)]
pub struct AgingSampler {
    fam: LevyFamily,
    levels: Vec<f64>,
    du: f64,
    inc: IncrementSampler,
}

impl AgingSampler {
    pub fn new(fam: LevyFamily, params: AlphaScale, t0: f64, times: &[f64], rel_du: f64) -> Result<Self> {
        fam.validate()?;
        check_range("t0", t0, t0 >= 0.0, "[0, inf)")?;
        if times.is_empty() {
            return Err(Error::Empty("aging increments need at least one time"));
        }
        let mut prev = 0.0;
        for &t in times {
            check_range("t", t, t > prev, "an increasing sequence of positive times")?;
            prev = t;
        }
        let mut levels = vec![t0];
        levels.extend(times.iter().map(|t| t0 + t));
        let horizon = *levels.last().unwrap();
        let du = default_du(params, horizon, rel_du)?;
        Ok(Self {
            fam,
            levels,
            du,
            inc: IncrementSampler::new(params, du),
        })
    }

    /// Grid step in use.
    pub fn du(&self) -> f64 {
        self.du
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let es = inverse_levels(&self.inc, self.du, &self.levels, rng);
        let mut y = 0.0;
        es.windows(2)
            .map(|w| {
                y += self.fam.sample(w[1] - w[0], rng);
                y
            })
            .collect()
    }
}

pub fn aging_increment_sample<R: Rng + ?Sized>(
    fam: &LevyFamily,
    params: AlphaScale,
    t0: f64,
    times: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    Ok(AgingSampler::new(*fam, params, t0, times, DEFAULT_REL_DU)?.sample(rng))
}

/// Fractional Poisson count `N_t` built from Mittag-Leffler interarrivals.
pub fn fpp_renewal_sample<R: Rng + ?Sized>(alpha: f64, lambda: f64, t: f64, rng: &mut R) -> Result<u64> {
    check_range("t", t, t > 0.0, "(0, inf)")?;
    let mut clock = 0.0;
    let mut n = 0;
    loop {
        clock += ml_waiting_sample(alpha, lambda, rng)?;
        if clock > t {
            return Ok(n);
        }
        n += 1;
    }
}

// ---------------------------------------------------------------------------
// Sample sets

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub process: String,
    pub alpha: f64,
    pub c: f64,
    pub t0: f64,
    pub t: f64,
    pub seed: u64,
    pub scenario_hash: String,
}

/// I.i.d. draws with their provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    meta: SampleMeta,
    values: Vec<f64>,
}

const CSV_META_HEADER: &str = "process,alpha,c,t0,t,seed,scenario_hash";

impl SampleSet {
    pub fn new(meta: SampleMeta, values: Vec<f64>) -> Self {
        Self { meta, values }
    }

    pub fn meta(&self) -> &SampleMeta {
        &self.meta
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    /// Two header rows of metadata, then a `value` column.
    pub fn to_csv(&self) -> String {
        let m = &self.meta;
        let mut s = String::with_capacity(self.values.len() * 20 + 128);
        let _ = writeln!(s, "{CSV_META_HEADER}");
        let _ = writeln!(s, "{},{},{},{},{},{},{}", m.process, m.alpha, m.c, m.t0, m.t, m.seed, m.scenario_hash);
        s.push_str("value\n");
        for v in &self.values {
            let _ = writeln!(s, "{v}");
        }
        s
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let mut next = |what: &str| -> Result<String> {
            lines
                .next()
                .ok_or_else(|| Error::Parse(format!("missing {what}")))?
                .map_err(Error::from)
        };
        if next("header")? != CSV_META_HEADER {
            return Err(Error::Parse("unexpected metadata header".into()));
        }
        let row = next("metadata row")?;
        let f: Vec<&str> = row.split(',').collect();
        if f.len() != 7 {
            return Err(Error::Parse(format!("metadata row has {} fields, expected 7", f.len())));
        }
        let num = |i: usize| f[i].parse::<f64>().map_err(|e| Error::Parse(format!("field {i}: {e}")));
        let meta = SampleMeta {
            process: f[0].to_string(),
            alpha: num(1)?,
            c: num(2)?,
            t0: num(3)?,
            t: num(4)?,
            seed: f[5].parse().map_err(|e| Error::Parse(format!("seed: {e}")))?,
            scenario_hash: f[6].to_string(),
        };
        if next("value header")? != "value" {
            return Err(Error::Parse("expected `value` column header".into()));
        }
        let mut values = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            values.push(line.parse().map_err(|e| Error::Parse(format!("value line {}: {e}", i + 1)))?);
        }
        Ok(Self { meta, values })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{age_cdf, overshoot_cdf, remaining_life_cdf};
    use crate::mc_stats::{binomial_sigma, ks_one_sample, ks_two_sample, replicate, EmpiricalDist, StreamSpec};
    use crate::special_fn::{gamma, mittag_leffler, reg_incomplete_beta};

    fn mean_var(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n)
    }

    #[test]
    fn path_starts_at_zero_and_increases() {
        let p = AlphaScale::standard(0.5).unwrap();
        let path = subordinator_path(p, 0.01, 2.0, &mut StreamSpec::new(1, 0).rng()).unwrap();
        assert_eq!(path.d_values[0], 0.0);
        assert_eq!(path.d_values.len(), 201);
        assert!(path.d_values.windows(2).all(|w| w[1] > w[0]));
        assert!(subordinator_path(p, 0.0, 1.0, &mut StreamSpec::new(1, 0).rng()).is_err());
    }

    #[test]
    fn path_laplace_transform_at_unit_time() {
        for (alpha, c) in [(0.5, 1.0), (0.7, 2.0)] {
            let p = AlphaScale::new(alpha, c).unwrap();
            let n = 100_000;
            let d1 = replicate(n, 3, |rng| *subordinator_path(p, 0.05, 1.0, rng).unwrap().d_values.last().unwrap());
            for s in [0.5, 1.0, 2.0] {
                let xs: Vec<f64> = d1.iter().map(|d| (-s * d).exp()).collect();
                let (m, v) = mean_var(&xs);
                let want = (-c * f64::powf(s, alpha)).exp();
                assert!((m - want).abs() < 3.0 * (v / n as f64).sqrt(), "alpha={alpha} s={s}: {m} vs {want}");
            }
        }
    }

    #[test]
    fn inverse_at_reads_grid() {
        let p = AlphaScale::standard(0.5).unwrap();
        let path = subordinator_path(p, 0.01, 5.0, &mut StreamSpec::new(2, 0).rng()).unwrap();
        let z = inverse_at(&path, 0.0).unwrap();
        assert_eq!(z.e, 0.01);
        assert_eq!(z.v, 0.0);
        assert_eq!(z.r, path.d_values[1]);
        let t = 0.5 * path.horizon();
        let q = inverse_at(&path, t).unwrap();
        assert_eq!(q.r + t, q.d_at_e);
        assert!(q.v >= 0.0 && q.r > 0.0);
        assert!(matches!(inverse_at(&path, path.horizon() + 1.0), Err(Error::Horizon { .. })));
    }

    fn passages(alpha: f64, t: f64, rel_du: f64, n: usize, seed: u64) -> Vec<Passage> {
        let p = AlphaScale::standard(alpha).unwrap();
        let u_max = horizon_u_max(p, t).unwrap();
        let du = rel_du * u_max;
        replicate(n, seed, |rng| {
            let path = subordinator_path(p, du, u_max, rng).unwrap();
            inverse_at(&path, t).unwrap()
        })
    }

    #[test]
    fn remaining_life_age_and_overshoot_match_their_laws() {
        let (alpha, t) = (0.5, 1.0);
        let ps = passages(alpha, t, DEFAULT_REL_DU, 10_000, 31);
        let e = EmpiricalDist::new(ps.iter().map(|p| p.r).collect()).unwrap();
        assert!(ks_one_sample(&e, |r| remaining_life_cdf(alpha, t, r.max(0.0)).unwrap()).unwrap().p_value > 0.01);
        let e = EmpiricalDist::new(ps.iter().map(|p| p.v).collect()).unwrap();
        assert!(ks_one_sample(&e, |v| age_cdf(alpha, t, v.clamp(0.0, t)).unwrap()).unwrap().p_value > 0.01);
        let e = EmpiricalDist::new(ps.iter().map(|p| p.d_at_e).collect()).unwrap();
        assert!(ks_one_sample(&e, |r| overshoot_cdf(alpha, t, r.max(t)).unwrap()).unwrap().p_value > 0.01);
    }

    #[test]
    fn halving_du_is_within_ks_noise() {
        let (alpha, t) = (0.5, 1.0);
        let n = 10_000;
        let ks = |rel: f64| {
            let ps = passages(alpha, t, rel, n, 32);
            let e = EmpiricalDist::new(ps.iter().map(|p| p.r).collect()).unwrap();
            ks_one_sample(&e, |r| remaining_life_cdf(alpha, t, r.max(0.0)).unwrap()).unwrap().statistic
        };
        let noise = 1.63 / (n as f64).sqrt();
        assert!((ks(DEFAULT_REL_DU) - ks(0.5 * DEFAULT_REL_DU)).abs() < noise);
    }

    #[test]
    fn horizon_covers_the_target() {
        let p = AlphaScale::standard(0.5).unwrap();
        let u = horizon_u_max(p, 3.0).unwrap();
        // P(D_u < 3) = P(S < 3 u^-2) = erfc(u / (2 sqrt 3)) for alpha = 1/2.
        let miss = crate::special_fn::erfc(u / (2.0 * 3f64.sqrt()));
        assert!((miss - 1e-6).abs() < 1e-9);
    }

    #[test]
    fn inverse_marginal_matches_density_and_scaling() {
        let p = AlphaScale::standard(0.5).unwrap();
        let n = 100_000;
        let v = replicate(n, 40, |rng| inverse_marginal_sample(p, 1.0, rng).unwrap());
        let (m, _) = mean_var(&v);
        assert!((m / 1.128379 - 1.0).abs() < 0.01);
        // E_1 is half-normal with variance 2 for alpha = 1/2.
        let e = EmpiricalDist::new(v.clone()).unwrap();
        let ks = ks_one_sample(&e, |x| 1.0 - crate::special_fn::erfc(x.max(0.0) / 2.0)).unwrap();
        assert!(ks.p_value > 0.01);
        let v2: Vec<f64> = replicate(n, 41, |rng| inverse_marginal_sample(p, 2.0, rng).unwrap() / 2f64.sqrt());
        let ks = ks_two_sample(&e, &EmpiricalDist::new(v2).unwrap()).unwrap();
        assert!(ks.p_value > 0.01);
        assert!(v.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn levy_marginals() {
        let n = 1_000_000;
        let b = LevyFamily::brownian(0.0, 1.0).unwrap();
        let v = replicate(n, 50, |rng| b.sample(1.0, rng));
        let (m, var) = mean_var(&v);
        assert!(m.abs() < 3.0 / (n as f64).sqrt());
        assert!((var - 1.0).abs() < 0.01);
        let pz = LevyFamily::poisson(1.0).unwrap();
        let v = replicate(100_000, 51, |rng| pz.sample(2.0, rng));
        let (m, _) = mean_var(&v);
        assert!((m - 2.0).abs() < 3.0 * (2.0f64 / 1e5).sqrt());
        let c = LevyFamily::symmetric_stable(1.0, 1.0).unwrap();
        let e = EmpiricalDist::new(replicate(100_000, 52, |rng| c.sample(1.0, rng))).unwrap();
        assert!(e.quantile(0.5).abs() < 0.02);
        let iqr = e.quantile(0.75) - e.quantile(0.25);
        assert!((iqr / 2.0 - 1.0).abs() < 0.02);
        let g = LevyFamily::symmetric_stable(2.0, 1.0).unwrap();
        let (_, var) = mean_var(&replicate(100_000, 53, |rng| g.sample(1.0, rng)));
        assert!((var / 2.0 - 1.0).abs() < 0.02);
        assert_eq!(b.sample(0.0, &mut StreamSpec::new(0, 0).rng()), 0.0);
    }

    #[test]
    fn symmetric_stable_characteristic_function() {
        for beta in [0.7, 1.5] {
            let n = 200_000;
            let v = replicate(n, 54, |rng| symmetric_stable_standard(beta, rng));
            for k in [0.5, 1.0, 2.0] {
                let xs: Vec<f64> = v.iter().map(|x| (k * x).cos()).collect();
                let (m, var) = mean_var(&xs);
                let want = (-f64::powf(k, beta)).exp();
                assert!((m - want).abs() < 3.0 * (var / n as f64).sqrt() + 1e-12, "beta={beta} k={k}");
            }
        }
    }

    #[test]
    fn levy_path_has_stationary_increments() {
        let b = LevyFamily::brownian(0.5, 2.0).unwrap();
        let grid: Vec<f64> = (1..=10).map(|i| i as f64 * 0.1).collect();
        let paths = replicate(50_000, 55, |rng| levy_path(&b, &grid, rng).unwrap());
        let incs: Vec<f64> = paths.iter().map(|p| p[7] - p[6]).collect();
        let (m, v) = mean_var(&incs);
        assert!((m - 0.05).abs() < 0.005 && (v / 0.2 - 1.0).abs() < 0.03);
        assert!(levy_path(&b, &[0.5, 0.2], &mut StreamSpec::new(0, 0).rng()).is_err());
    }

    #[test]
    fn ctrwl_moments_and_zero_mass() {
        let p = AlphaScale::standard(0.5).unwrap();
        let n = 1_000_000;
        let b = LevyFamily::brownian(0.0, 1.0).unwrap();
        let v = replicate(n, 60, |rng| ctrwl_sample(&b, p, 1.0, rng).unwrap());
        let (_, var) = mean_var(&v);
        assert!((var / 1.128379 - 1.0).abs() < 0.02);
        let pz = LevyFamily::poisson(1.0).unwrap();
        let n = 100_000;
        let v = replicate(n, 61, |rng| ctrwl_sample(&pz, p, 1.0, rng).unwrap());
        let f0 = v.iter().filter(|&&x| x == 0.0).count() as f64 / n as f64;
        let want = mittag_leffler(0.5, -1.0).unwrap();
        assert!((f0 - want).abs() < 3.0 * binomial_sigma(want, n));
    }

    #[test]
    fn ctrwl_is_symmetric() {
        let p = AlphaScale::standard(0.6).unwrap();
        let b = LevyFamily::brownian(0.0, 1.0).unwrap();
        let v = replicate(50_000, 62, |rng| ctrwl_sample(&b, p, 1.0, rng).unwrap());
        let a = EmpiricalDist::new(v.clone()).unwrap();
        let m = EmpiricalDist::new(v.iter().map(|x| -x).collect()).unwrap();
        assert!(ks_two_sample(&a, &m).unwrap().p_value > 0.01);
    }

    #[test]
    fn aged_increments_zero_frequency_and_reduction() {
        let p = AlphaScale::standard(0.5).unwrap();
        let b = LevyFamily::brownian(0.0, 1.0).unwrap();
        let n = 100_000;
        let s = AgingSampler::new(b, p, 1.0, &[1.0], 2e-4).unwrap();
        let v = replicate(n, 70, |rng| s.sample(rng)[0]);
        let f0 = v.iter().filter(|&&x| x == 0.0).count() as f64 / n as f64;
        let want = 1.0 - reg_incomplete_beta(0.5, 0.5, 0.5).unwrap();
        assert!((f0 - want).abs() < 3.0 * binomial_sigma(want, n) + 1e-3, "{f0} vs {want}");
        // t0 = 0 matches the unaged walk.
        let s0 = AgingSampler::new(b, p, 0.0, &[1.0], DEFAULT_REL_DU).unwrap();
        let a = EmpiricalDist::new(replicate(n, 71, |rng| s0.sample(rng)[0])).unwrap();
        let c = EmpiricalDist::new(replicate(n, 72, |rng| ctrwl_sample(&b, p, 1.0, rng).unwrap())).unwrap();
        assert!(ks_two_sample(&a, &c).unwrap().p_value > 0.01);
    }

    #[test]
    fn aged_increments_are_jointly_consistent() {
        let p = AlphaScale::standard(0.5).unwrap();
        let b = LevyFamily::brownian(0.0, 1.0).unwrap();
        let v = aging_increment_sample(&b, p, 1.0, &[0.5, 1.0, 2.0], &mut StreamSpec::new(1, 1).rng()).unwrap();
        assert_eq!(v.len(), 3);
        assert!(aging_increment_sample(&b, p, 1.0, &[1.0, 0.5], &mut StreamSpec::new(1, 1).rng()).is_err());
        assert!(aging_increment_sample(&b, p, 1.0, &[], &mut StreamSpec::new(1, 1).rng()).is_err());
    }

    #[test]
    fn fpp_renewal_matches_subordinated_poisson() {
        for alpha in [0.3, 0.5, 0.8] {
            for t in [1.0, 3.0] {
                let n = 100_000;
                let p = AlphaScale::standard(alpha).unwrap();
                let pz = LevyFamily::poisson(1.0).unwrap();
                let a = replicate(n, 80, |rng| fpp_renewal_sample(alpha, 1.0, t, rng).unwrap());
                let b = replicate(n, 81, |rng| ctrwl_sample(&pz, p, t, rng).unwrap() as u64);
                let hist = |v: &[u64]| {
                    let mut h = vec![0u64; 64];
                    for &k in v {
                        h[(k as usize).min(63)] += 1;
                    }
                    h
                };
                let chi = crate::mc_stats::chi_square_two_sample(&hist(&a), &hist(&b)).unwrap();
                assert!(chi.p_value > 0.01, "alpha={alpha} t={t}: {chi:?}");
                let mean = a.iter().sum::<u64>() as f64 / n as f64;
                let want = f64::powf(t, alpha) / gamma(1.0 + alpha);
                assert!((mean / want - 1.0).abs() < 0.02);
                let f0 = a.iter().filter(|&&k| k == 0).count() as f64 / n as f64;
                let w0 = mittag_leffler(alpha, -f64::powf(t, alpha)).unwrap();
                assert!((f0 - w0).abs() < 3.0 * binomial_sigma(w0, n));
            }
        }
        // alpha = 1 is the ordinary Poisson process.
        let n = 100_000;
        let a = replicate(n, 82, |rng| fpp_renewal_sample(1.0, 2.0, 1.5, rng).unwrap() as f64);
        let (m, v) = mean_var(&a);
        assert!((m - 3.0).abs() < 3.0 * (3.0f64 / n as f64).sqrt() && (v / 3.0 - 1.0).abs() < 0.03);
    }

    #[test]
    fn sample_sets_are_deterministic_and_round_trip() {
        let p = AlphaScale::standard(0.5).unwrap();
        let b = LevyFamily::brownian(0.0, 1.0).unwrap();
        let draw = || replicate(100, 90, |rng| ctrwl_sample(&b, p, 1.0, rng).unwrap());
        let meta = SampleMeta {
            process: "ctrwl".into(),
            alpha: 0.5,
            c: 1.0,
            t0: 0.0,
            t: 1.0,
            seed: 90,
            scenario_hash: "abc".into(),
        };
        let a = SampleSet::new(meta.clone(), draw());
        let b2 = SampleSet::new(meta, draw());
        assert_eq!(a.to_csv(), b2.to_csv());
        let back = SampleSet::read_csv(a.to_csv().as_bytes()).unwrap();
        assert_eq!(back, a);
        assert!(SampleSet::read_csv("nope\n".as_bytes()).is_err());
    }

    #[test]
    fn family_round_trips_through_toml() {
        let f = LevyFamily::CompoundPoisson {
            lambda: 2.0,
            jump: JumpLaw::Normal { mean: 0.0, sd: 1.0 },
        };
        let text = toml::to_string(&f).unwrap();
        let back: LevyFamily = toml::from_str(&text).unwrap();
        assert_eq!(back, f);
        assert!(LevyFamily::brownian(0.0, -1.0).is_err());
        assert!(LevyFamily::symmetric_stable(2.5, 1.0).is_err());
    }
}
