//! Statistical machinery for Monte Carlo verification: seeded streams,
//! empirical distributions, Kolmogorov-Smirnov and chi-square tests, and
//! binomial intervals.
//!
//! Every replicate draws from its own `ChaCha8` stream keyed by
//! `(master_seed, stream_id)`, and parallel results are collected in index
//! order, so outputs do not depend on the thread schedule.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::gamma_ur;

use crate::error::{check_range, Error, Result};
pub use crate::special_fn::NeumaierSum;

/// Identifies one reproducible random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamSpec {
    pub master_seed: u64,
    pub stream_id: u64,
}

impl StreamSpec {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        Self {
            master_seed,
            stream_id,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// SplitMix64 finaliser; used to derive per-experiment master seeds.
pub fn derive_seed(master: u64, tag: u64) -> u64 {
    let mut z = master ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Run `n` replicates in parallel, replicate `i` on stream `(seed, i)`, and
/// return results in replicate order.
pub fn replicate<T, F>(n: usize, seed: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng) -> T + Sync,
{
    (0..n as u64)
        .into_par_iter()
        .map(|i| f(&mut StreamSpec::new(seed, i).rng()))
        .collect()
}

/// Fallible variant of [`replicate`]; the first error in replicate order wins.
pub fn try_replicate<T, F>(n: usize, seed: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng) -> Result<T> + Sync,
{
    replicate(n, seed, f).into_iter().collect()
}

/// Sorted sample with the number of exact zeros tracked separately.
#[derive(Debug, Clone)]
pub struct EmpiricalDist {
    values: Vec<f64>,
    zero_count: usize,
}

impl EmpiricalDist {
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::Parse("NaN in sample".into()));
        }
        values.sort_by(f64::total_cmp);
        let zero_count = values.iter().filter(|&&v| v == 0.0).count();
        Ok(Self { values, zero_count })
    }

    /// The same sample with exact zeros removed.
    pub fn without_zeros(&self) -> Self {
        Self {
            values: self.values.iter().copied().filter(|&v| v != 0.0).collect(),
            zero_count: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zero_count(&self) -> usize {
        self.zero_count
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Fraction of the sample `<= x`.
    pub fn cdf(&self, x: f64) -> f64 {
        self.values.partition_point(|&v| v <= x) as f64 / self.values.len() as f64
    }

    /// Empirical quantile by the inverse of the step cdf.
    pub fn quantile(&self, p: f64) -> f64 {
        let n = self.values.len();
        let k = ((p * n as f64).ceil() as usize).clamp(1, n);
        self.values[k - 1]
    }

    pub fn fraction(&self, pred: impl Fn(f64) -> bool) -> f64 {
        self.values.iter().filter(|&&v| pred(v)).count() as f64 / self.values.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Kolmogorov survival function `P(K > lambda)`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.0 {
        // Jacobi-transformed series, fast for small lambda.
        let c = -std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let s: f64 = (1..=20)
            .map(|k| {
                let m = (2 * k - 1) as f64;
                (c * m * m).exp()
            })
            .sum();
        return (1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s).clamp(0.0, 1.0);
    }
    let s: f64 = (1..=100)
        .map(|k| {
            let kf = k as f64;
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            sign * (-2.0 * kf * kf * lambda * lambda).exp()
        })
        .sum();
    (2.0 * s).clamp(0.0, 1.0)
}

/// One-sample p-value with Vrbik's finite-n correction to the Kolmogorov limit.
fn ks_p_value(d: f64, n: f64) -> f64 {
    let rn = n.sqrt();
    let x = rn * d;
    kolmogorov_sf(x + 1.0 / (6.0 * rn) + (x - 1.0) / (4.0 * n))
}

/// Two-sample p-value with Stephens' correction on the effective size.
fn ks_two_p_value(d: f64, n_eff: f64) -> f64 {
    let rn = n_eff.sqrt();
    kolmogorov_sf((rn + 0.12 + 0.11 / rn) * d)
}

/// One-sample KS test against a continuous cdf, with a corrected asymptotic
/// Kolmogorov p-value.
pub fn ks_one_sample(e: &EmpiricalDist, cdf: impl Fn(f64) -> f64) -> Result<TestResult> {
    if e.zero_count > 0 {
        return Err(Error::AtomContamination(e.zero_count));
    }
    let n = e.values.len();
    if n < 20 {
        return Err(Error::Empty("one-sample KS needs at least 20 observations"));
    }
    let nf = n as f64;
    let mut d = 0.0_f64;
    for (i, &x) in e.values.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / nf).max((i + 1) as f64 / nf - f);
    }
    Ok(TestResult {
        statistic: d,
        p_value: ks_p_value(d, nf),
    })
}

/// Two-sample KS statistic. Tied values are consumed jointly from both
/// samples before the distance is taken, so ties never inflate it.
pub fn ks_two_sample(a: &EmpiricalDist, b: &EmpiricalDist) -> Result<TestResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("two-sample KS needs two nonempty samples"));
    }
    let (x, y) = (&a.values, &b.values);
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d = 0.0_f64;
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] == v {
            i += 1;
        }
        while j < y.len() && y[j] == v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    Ok(TestResult {
        statistic: d,
        p_value: ks_two_p_value(d, n * m / (n + m)),
    })
}

/// Wilson score interval for a binomial proportion.
pub fn binomial_ci(k: u64, n: u64, level: f64) -> Result<(f64, f64)> {
    if n == 0 {
        return Err(Error::Empty("binomial interval needs n > 0"));
    }
    check_range("level", level, level > 0.0 && level < 1.0, "(0, 1)")?;
    let z = Normal::standard().inverse_cdf(0.5 + 0.5 * level);
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / denom;
    let half = z / denom * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt();
    Ok(((centre - half).max(0.0), (centre + half).min(1.0)))
}

/// Standard deviation of a binomial proportion with success probability `p`.
pub fn binomial_sigma(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Pearson chi-square of observed counts against expected counts. Bins with
/// expected count below 5 are pooled from the right into their neighbour.
pub fn chi_square_counts(obs: &[u64], expected: &[f64]) -> Result<TestResult> {
    if obs.is_empty() || obs.len() != expected.len() {
        return Err(Error::Empty("chi-square needs matching nonempty count vectors"));
    }
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let mut acc = (0.0, 0.0);
    for (&o, &e) in obs.iter().zip(expected) {
        acc.0 += o as f64;
        acc.1 += e;
        if acc.1 >= 5.0 {
            cells.push(acc);
            acc = (0.0, 0.0);
        }
    }
    if acc.0 > 0.0 || acc.1 > 0.0 {
        match cells.last_mut() {
            Some(last) => {
                last.0 += acc.0;
                last.1 += acc.1;
            }
            None => cells.push(acc),
        }
    }
    let stat: f64 = cells.iter().map(|&(o, e)| (o - e).powi(2) / e).sum();
    let df = cells.len().saturating_sub(1).max(1);
    Ok(TestResult {
        statistic: stat,
        p_value: chi_square_sf(stat, df as f64),
    })
}

/// Two-sample chi-square homogeneity test on two count vectors.
pub fn chi_square_two_sample(a: &[u64], b: &[u64]) -> Result<TestResult> {
    let len = a.len().max(b.len());
    if len == 0 {
        return Err(Error::Empty("chi-square needs nonempty count vectors"));
    }
    let get = |v: &[u64], i: usize| v.get(i).copied().unwrap_or(0) as f64;
    let na: f64 = a.iter().map(|&v| v as f64).sum();
    let nb: f64 = b.iter().map(|&v| v as f64).sum();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Empty("chi-square needs nonzero totals"));
    }
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let mut acc = (0.0, 0.0);
    for i in 0..len {
        acc.0 += get(a, i);
        acc.1 += get(b, i);
        if acc.0 + acc.1 >= 10.0 {
            cells.push(acc);
            acc = (0.0, 0.0);
        }
    }
    if acc.0 + acc.1 > 0.0 {
        match cells.last_mut() {
            Some(last) => {
                last.0 += acc.0;
                last.1 += acc.1;
            }
            None => cells.push(acc),
        }
    }
    let ka = (nb / na).sqrt();
    let kb = (na / nb).sqrt();
    let stat: f64 = cells
        .iter()
        .map(|&(x, y)| (ka * x - kb * y).powi(2) / (x + y))
        .sum();
    let df = cells.len().saturating_sub(1).max(1);
    Ok(TestResult {
        statistic: stat,
        p_value: chi_square_sf(stat, df as f64),
    })
}

pub fn chi_square_sf(stat: f64, df: f64) -> f64 {
    if stat <= 0.0 {
        return 1.0;
    }
    gamma_ur(0.5 * df, 0.5 * stat)
}

/// Per-test level for `m` simultaneous checks at family-wise level `level`.
pub fn bonferroni(level: f64, m: usize) -> f64 {
    level / m.max(1) as f64
}

/// Histogram counts of `values` on `[lo, hi)` with `bins` equal bins;
/// values outside are ignored.
pub fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<u64> {
    let mut counts = vec![0u64; bins];
    let w = (hi - lo) / bins as f64;
    for &v in values {
        if v >= lo && v < hi {
            let k = (((v - lo) / w) as usize).min(bins - 1);
            counts[k] += 1;
        }
    }
    counts
}
