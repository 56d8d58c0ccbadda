//! Scenario files and the batch commands behind the `aging-ctrw` binary.
//!
//! A scenario is a TOML file. Every key is optional; missing keys take the
//! defaults of [`Scenario::default`]. Command-line flags override file
//! values, which override defaults.
//!
//! ```toml
//! alpha = 0.5
//! c = 1.0
//! t0 = [0.5, 1.0, 5.0]
//! t = [1.0]
//! sets = [[[1.0, inf]], [[-inf, -0.5]]]   # unions of (lo, hi] intervals
//! n = 100000
//! seed = 1
//!
//! [family]
//! kind = "brownian"                       # brownian | symmetric_stable | poisson | compound_poisson
//! mu = 0.0
//! a = 1.0
//!
//! [grid]                                  # ffpe only
//! dx = 0.01
//! half_width = 8.0
//! dt = 0.001
//! t_end = 1.0
//! save_every = 100
//! ```

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::aging::{
    aging_prob_quad, asymptotic_prob, log_log_slope, power_convolution, self_similarity_check,
    stationarity_limit_check, theorem_check, zero_atom, BorelSet, MarginalLaw,
};
use crate::dist::AgingKernel;
use crate::error::{Error, Result};
use crate::ffpe::{flt_residual, three_route_run, InitialDensity, SolverGrid};
use crate::frac_calc::{rl_caputo_relation_residual, TimeGridFn};
use crate::mc_stats::{derive_seed, replicate, try_replicate};
use crate::process::{ctrwl_sample, AgingSampler, JumpLaw, LevyFamily, SampleMeta, SampleSet, DEFAULT_REL_DU};
use crate::quad::{adaptive_to_infinity, AdaptiveOptions};
use crate::special_fn::{gamma, AlphaScale};

fn default_family() -> LevyFamily {
    LevyFamily::Brownian { mu: 0.0, a: 1.0 }
}

/// A fully resolved run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub family: LevyFamily,
    pub alpha: f64,
    pub c: f64,
    pub t0: Vec<f64>,
    pub t: Vec<f64>,
    pub sets: Vec<BorelSet>,
    pub n: usize,
    pub seed: u64,
    /// Subordinator grid step as a fraction of the path horizon.
    pub rel_du: f64,
    pub grid: SolverGrid,
    /// Standard deviation of the Gaussian initial density for `ffpe`.
    pub initial_sigma: f64,
    /// Time scale factor for `selfsim`.
    pub scale: f64,
    /// Index sweep for `stationarity`.
    pub alphas: Vec<f64>,
    /// Cross-check quadrature against path Monte Carlo in `aging`.
    pub mc_check: bool,
    /// Not serialised, so outputs do not depend on where they are written.
    #[serde(skip_serializing)]
    pub out: PathBuf,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            family: default_family(),
            alpha: 0.5,
            c: 1.0,
            t0: vec![1.0],
            t: vec![1.0],
            sets: vec![BorelSet::interval(1.0, f64::INFINITY).unwrap()],
            n: 100_000,
            seed: 1,
            rel_du: DEFAULT_REL_DU,
            grid: SolverGrid::default(),
            initial_sigma: 0.05,
            scale: 4.0,
            alphas: vec![0.5, 0.7, 0.9, 0.99],
            mc_check: false,
            out: PathBuf::from("out"),
        }
    }
}

/// Values given on the command line; `None` leaves the file value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub alpha: Option<f64>,
    pub t0: Option<Vec<f64>>,
    pub t: Option<Vec<f64>>,
    pub family: Option<LevyFamily>,
}

/// Parses `kind[:key=value,...]`, e.g. `brownian:mu=0.5,a=2`,
/// `stable:beta=1.5`, `poisson:lambda=3`, `compound_poisson:lambda=1,jump_sd=0.5`.
pub fn parse_family(s: &str) -> Result<LevyFamily> {
    let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
    let mut kv = Vec::new();
    for item in rest.split(',').filter(|x| !x.is_empty()) {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--family: expected key=value, got `{item}`")))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("--family: `{k}` needs a number, got `{v}`")))?;
        kv.push((k.trim().to_string(), v));
    }
    let mut take = |key: &str, default: f64| -> f64 {
        kv.iter()
            .position(|(k, _)| k == key)
            .map(|i| kv.remove(i).1)
            .unwrap_or(default)
    };
    let fam = match kind.trim() {
        "brownian" => LevyFamily::Brownian {
            mu: take("mu", 0.0),
            a: take("a", 1.0),
        },
        "stable" | "symmetric_stable" => LevyFamily::SymmetricStable {
            beta: take("beta", 1.5),
            scale: take("scale", 1.0),
        },
        "poisson" => LevyFamily::Poisson {
            lambda: take("lambda", 1.0),
        },
        "compound_poisson" => LevyFamily::CompoundPoisson {
            lambda: take("lambda", 1.0),
            jump: JumpLaw::Normal {
                mean: take("jump_mean", 0.0),
                sd: take("jump_sd", 1.0),
            },
        },
        other => return Err(Error::Config(format!("--family: unknown kind `{other}`"))),
    };
    if let Some((k, _)) = kv.first() {
        return Err(Error::Config(format!("--family: unknown parameter `{k}` for {}", fam.label())));
    }
    fam.validate()?;
    Ok(fam)
}

/// Comma-separated list of reals.
pub fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("expected a comma-separated list of numbers, got `{s}`")))
        })
        .collect()
}

/// 1-based line of the first `key = ...` assignment in `src`.
fn line_of(src: &str, key: &str) -> Option<usize> {
    src.lines().position(|l| {
        l.trim_start()
            .strip_prefix(key)
            .is_some_and(|r| r.trim_start().starts_with('='))
    })
    .map(|i| i + 1)
}

fn prefix_path(p: &Path, e: Error) -> Error {
    match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", p.display())),
        other => other,
    }
}

impl Scenario {
    /// Parses TOML text; syntax and type errors carry the line and column.
    pub fn from_toml(src: &str) -> Result<Self> {
        let s = Self::parse_toml(src)?;
        s.validate_with(Some(src))?;
        Ok(s)
    }

    fn parse_toml(src: &str) -> Result<Self> {
        toml::from_str(src).map_err(|e| {
            let at = e
                .span()
                .map(|sp| {
                    let line = src[..sp.start.min(src.len())].matches('\n').count() + 1;
                    format!("line {line}: ")
                })
                .unwrap_or_default();
            Error::Config(format!("{at}{}", e.message()))
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let src = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&src).map_err(|e| prefix_path(path, e))
    }

    /// File (or defaults), then flags on top, then validation.
    pub fn resolve(config: Option<&Path>, o: &Overrides) -> Result<Self> {
        let (mut s, src) = match config {
            Some(p) => {
                let src = fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                (Self::parse_toml(&src).map_err(|e| prefix_path(p, e))?, Some(src))
            }
            None => (Self::default(), None),
        };
        if let Some(v) = o.seed {
            s.seed = v;
        }
        if let Some(v) = &o.out {
            s.out = v.clone();
        }
        if let Some(v) = o.alpha {
            s.alpha = v;
        }
        if let Some(v) = &o.t0 {
            s.t0 = v.clone();
        }
        if let Some(v) = &o.t {
            s.t = v.clone();
        }
        if let Some(v) = o.family {
            s.family = v;
        }
        s.validate_with(src.as_deref()).map_err(|e| match config {
            Some(p) => prefix_path(p, e),
            None => e,
        })?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_with(None)
    }

    fn validate_with(&self, src: Option<&str>) -> Result<()> {
        let fail = |field: &str, msg: String| -> Error {
            let at = src.and_then(|s| line_of(s, field)).map(|l| format!("line {l}: ")).unwrap_or_default();
            Error::Config(format!("{at}field `{field}`: {msg}"))
        };
        self.family.validate().map_err(|e| fail("kind", e.to_string()))?;
        AlphaScale::new(self.alpha, self.c).map_err(|e| fail(if self.alpha > 0.0 && self.alpha < 1.0 { "c" } else { "alpha" }, e.to_string()))?;
        if self.t0.is_empty() || self.t0.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(fail("t0", "needs a non-empty list of finite values >= 0".into()));
        }
        if self.t.is_empty() || self.t.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(fail("t", "needs a non-empty list of finite values > 0".into()));
        }
        if self.sets.is_empty() {
            return Err(fail("sets", "needs at least one set".into()));
        }
        if self.n == 0 {
            return Err(fail("n", "must be positive".into()));
        }
        if !(self.rel_du > 0.0 && self.rel_du <= 0.1) {
            return Err(fail("rel_du", format!("{} not in (0, 0.1]", self.rel_du)));
        }
        let g = &self.grid;
        if !(g.dx > 0.0 && g.half_width >= 4.0 * g.dx) {
            return Err(fail("half_width", "grid needs dx > 0 and half_width >= 4 dx".into()));
        }
        if !(g.dt > 0.0 && g.t_end >= g.dt) {
            return Err(fail("t_end", "grid needs dt > 0 and t_end >= dt".into()));
        }
        if !(self.initial_sigma > 0.0) {
            return Err(fail("initial_sigma", "must be positive".into()));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(fail("scale", "must be positive".into()));
        }
        if self.alphas.is_empty() || self.alphas.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            return Err(fail("alphas", "needs values in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn params(&self) -> Result<AlphaScale> {
        AlphaScale::new(self.alpha, self.c)
    }

    /// Canonical TOML of everything except the output directory.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serialises")
    }

    /// SHA-256 of [`Scenario::to_toml`].
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes()).iter().fold(String::with_capacity(64), |mut h, b| {
            let _ = write!(h, "{b:02x}");
            h
        })
    }
}

// ---------------------------------------------------------------------------
// Output helpers

/// Result of one command: files written and whether its checks passed.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    /// Names of checks that failed; empty on success.
    pub failed: Vec<String>,
}

struct Writer<'a> {
    scenario: &'a Scenario,
    hash: String,
    files: Vec<PathBuf>,
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    command: &'a str,
    scenario_hash: &'a str,
    seed: u64,
    scenario: String,
    pass: bool,
    report: T,
}

impl<'a> Writer<'a> {
    fn new(scenario: &'a Scenario) -> Result<Self> {
        fs::create_dir_all(&scenario.out)?;
        Ok(Self {
            scenario,
            hash: scenario.hash(),
            files: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, body: &str) -> Result<()> {
        let path = self.scenario.out.join(name);
        fs::write(&path, body)?;
        self.files.push(path);
        Ok(())
    }

    /// CSV with the provenance rows `scenario_hash,seed` on top.
    fn csv(&mut self, name: &str, body: &str) -> Result<()> {
        let mut s = format!("scenario_hash,seed\n{},{}\n", self.hash, self.scenario.seed);
        s.push_str(body);
        self.write(name, &s)
    }

    fn json<T: Serialize>(&mut self, name: &str, command: &str, pass: bool, report: T) -> Result<()> {
        let env = Envelope {
            command,
            scenario_hash: &self.hash,
            seed: self.scenario.seed,
            scenario: self.scenario.to_toml(),
            pass,
            report,
        };
        let mut s = serde_json::to_string_pretty(&env).map_err(|e| Error::Parse(e.to_string()))?;
        s.push('\n');
        self.write(name, &s)
    }

    fn finish(self, failed: Vec<String>) -> Outcome {
        Outcome {
            files: self.files,
            failed,
        }
    }
}

/// Check outcome shared by the JSON reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    fn within(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            value,
            tolerance,
            pass: value.abs() <= tolerance,
        }
    }
}

fn failures(checks: &[Check]) -> Vec<String> {
    checks.iter().filter(|c| !c.pass).map(|c| c.name.clone()).collect()
}

// ---------------------------------------------------------------------------
// Commands

/// Aged increments `Y^{t0}_t` (plain `Y_t` when `t0 = 0`), one CSV per
/// `(t0, t)` pair.
pub fn cmd_sample(s: &Scenario) -> Result<Outcome> {
    let params = s.params()?;
    let mut w = Writer::new(s)?;
    for (i, &t0) in s.t0.iter().enumerate() {
        let seed = derive_seed(s.seed, i as u64);
        let rows: Vec<Vec<f64>> = if t0 == 0.0 {
            try_replicate(s.n, seed, |rng| s.t.iter().map(|&t| ctrwl_sample(&s.family, params, t, rng)).collect())?
        } else {
            let sampler = AgingSampler::new(s.family, params, t0, &sorted(&s.t), s.rel_du)?;
            let order = sort_order(&s.t);
            replicate(s.n, seed, |rng| {
                let y = sampler.sample(rng);
                order.iter().map(|&k| y[k]).collect()
            })
        };
        for (j, &t) in s.t.iter().enumerate() {
            let meta = SampleMeta {
                process: format!("aged_{}", s.family.label()),
                alpha: s.alpha,
                c: s.c,
                t0,
                t,
                seed: s.seed,
                scenario_hash: w.hash.clone(),
            };
            let set = SampleSet::new(meta, rows.iter().map(|r| r[j]).collect());
            let name = format!("sample_t0-{t0}_t-{t}.csv");
            w.write(&name, &set.to_csv())?;
        }
    }
    Ok(w.finish(Vec::new()))
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s.dedup();
    s
}

/// For each entry of `v`, its index in `sorted(v)`.
fn sort_order(v: &[f64]) -> Vec<usize> {
    let s = sorted(v);
    v.iter().map(|x| s.iter().position(|y| y == x).unwrap()).collect()
}

#[derive(Debug, Clone, Serialize)]
struct AgingRow {
    t0: f64,
    t: f64,
    set: String,
    probability: f64,
    quadrature_error: f64,
    zero_atom: f64,
    asymptotic: Option<f64>,
}

/// Kernel-convolution probabilities for every `(t0, t, B)`, with an optional
/// Monte Carlo cross-check.
pub fn cmd_aging(s: &Scenario) -> Result<Outcome> {
    let params = s.params()?;
    let law = MarginalLaw::new(s.family, params)?;
    let mut w = Writer::new(s)?;
    let mut rows = Vec::new();
    for &t in &s.t {
        for &t0 in &s.t0 {
            for b in &s.sets {
                let q = aging_prob_quad(&law, b, t, t0)?;
                let asymptotic = if t0 > 0.0 { asymptotic_prob(&law, b, t, t0).ok() } else { None };
                rows.push(AgingRow {
                    t0,
                    t,
                    set: b.to_string(),
                    probability: q.value,
                    quadrature_error: q.error,
                    zero_atom: if t0 > 0.0 { zero_atom(&s.family, params, t, t0)? } else { 0.0 },
                    asymptotic,
                });
            }
        }
    }
    let mut failed = Vec::new();
    let mut cells = Vec::new();
    if s.mc_check {
        for (i, &t) in s.t.iter().enumerate() {
            let c = theorem_check(&law, &s.sets, t, &s.t0, s.n, derive_seed(s.seed, i as u64), s.rel_du)?;
            failed.extend(
                c.iter()
                    .filter(|c| !c.pass)
                    .map(|c| format!("aging_prob t0={} t={} B={} z={:.2}", c.t0, c.t, c.set, c.z)),
            );
            cells.extend(c);
        }
    }
    #[derive(Serialize)]
    struct Report<A, C> {
        rows: A,
        mc_cells: C,
    }
    w.json("aging.json", "aging", failed.is_empty(), Report { rows, mc_cells: cells })?;
    Ok(w.finish(failed))
}

/// A fixed battery of identities evaluated at the scenario's parameters.
pub fn cmd_verify(s: &Scenario) -> Result<Outcome> {
    let params = s.params()?;
    let alpha = s.alpha;
    let mut checks = Vec::new();

    for &t0 in s.t0.iter().filter(|&&t0| t0 > 0.0) {
        let k = AgingKernel::new(alpha, t0)?;
        for sv in [0.1, 1.0, 10.0] {
            let quad = adaptive_to_infinity(|r| (-sv * r).exp() * k.pdf(r).unwrap_or(0.0), 0.0, AdaptiveOptions::new(1e-13, 1e-11))?;
            checks.push(Check::within(
                format!("kernel_laplace t0={t0} s={sv}"),
                k.laplace(sv)? - quad.value,
                1e-7,
            ));
        }
        let atom = zero_atom(&s.family, params, t0, t0)?;
        if !s.family.has_zero_atom() {
            let exact = 1.0 - crate::special_fn::reg_incomplete_beta(0.5, 1.0 - alpha, alpha)?;
            checks.push(Check::within(format!("zero_atom t=t0={t0}"), atom - exact, 1e-12));
        }
    }
    for &t in &s.t {
        let want = gamma(1.0 - alpha) * gamma(alpha + 1.0) * t;
        checks.push(Check::within(format!("power_convolution t={t}"), power_convolution(alpha, t)? / want - 1.0, 1e-8));
    }
    let f = TimeGridFn::from_fn(1e-4, 10_001, |t| 1.0 + t * t)?;
    checks.push(Check::within("rl_caputo_relation", rl_caputo_relation_residual(&f, alpha)?, 1e-3));
    let has_density = match s.family {
        LevyFamily::Brownian { .. } => true,
        LevyFamily::SymmetricStable { beta, .. } => beta > 1.0,
        _ => false,
    };
    if has_density {
        for (k, sv) in [(0.5, 1.0), (1.0, 1.0), (2.0, 2.0)] {
            checks.push(Check::within(
                format!("flt_residual k={k} s={sv}"),
                flt_residual(&s.family, params, k, sv)?.norm(),
                5e-3,
            ));
        }
    }
    if s.mc_check {
        let law = MarginalLaw::new(s.family, params)?;
        let t0s: Vec<f64> = s.t0.iter().copied().filter(|&v| v > 0.0).collect();
        if !t0s.is_empty() {
            let cells = theorem_check(&law, &s.sets, s.t[0], &t0s, s.n, s.seed, s.rel_du)?;
            let bad = cells.iter().filter(|c| !c.pass).count();
            // One 3-sigma miss in 27 is expected noise.
            let allowed = cells.len() / 27;
            checks.push(Check {
                name: "aging_prob_vs_mc".into(),
                value: bad as f64,
                tolerance: allowed as f64,
                pass: bad <= allowed,
            });
        }
    }
    let failed = failures(&checks);
    let mut w = Writer::new(s)?;
    w.json("verify.json", "verify", failed.is_empty(), &checks)?;
    Ok(w.finish(failed))
}

/// Three-route FFPE comparison at `t = max(t)` for each `t0`.
pub fn cmd_ffpe(s: &Scenario) -> Result<Outcome> {
    let params = s.params()?;
    let t_end = s.t.iter().copied().fold(0.0, f64::max);
    let grid = SolverGrid { t_end, ..s.grid };
    let xg = grid.x_grid()?;
    let f = InitialDensity::gaussian(xg, s.initial_sigma)?;
    let mut w = Writer::new(s)?;
    let mut reports = Vec::new();
    let mut failed = Vec::new();
    for (i, &t0) in s.t0.iter().enumerate() {
        let run = three_route_run(&s.family, params, t0, &f, grid, s.n, derive_seed(s.seed, i as u64))?;
        let mut body = String::from("x,solver,convolution\n");
        for (j, x) in xg.points().iter().enumerate() {
            let _ = writeln!(body, "{x},{},{}", run.solver.last_row()[j], run.convolution[j]);
        }
        w.csv(&format!("ffpe_t0-{t0}.csv"), &body)?;
        let mut bins = String::from("bin_left,solver_mass,convolution_mass,mc_mass\n");
        let width = (crate::ffpe::COMPARE_BIN / xg.dx).round() * xg.dx;
        for (j, ((a, b), c)) in run.solver_bins.iter().zip(&run.convolution_bins).zip(&run.mc_bins).enumerate() {
            let _ = writeln!(bins, "{},{a},{b},{c}", xg.x_min - 0.5 * xg.dx + j as f64 * width);
        }
        w.csv(&format!("ffpe_bins_t0-{t0}.csv"), &bins)?;
        w.csv(&format!("ffpe_trajectory_t0-{t0}.csv"), &run.solver.to_csv())?;
        if !run.report.pass {
            failed.push(format!(
                "ffpe t0={t0}: L1 solver/convolution {:.4}, solver/mc {:.4}, convolution/mc {:.4}, mass error {:.2e}",
                run.report.l1_solver_convolution, run.report.l1_solver_mc, run.report.l1_convolution_mc, run.report.max_mass_error
            ));
        }
        reports.push(run.report);
    }
    w.json("ffpe.json", "ffpe", failed.is_empty(), &reports)?;
    Ok(w.finish(failed))
}

#[derive(Debug, Clone, Serialize)]
struct SlopeFit {
    set: String,
    slope: f64,
    expected: f64,
    ratio_at_largest_t0: f64,
    pass: bool,
}

/// `P(Y^{t0}_t in B)` along the scenario's `t0` list, with the least-squares
/// slope of `log P` against `log t0`.
pub fn cmd_asymptotics(s: &Scenario) -> Result<Outcome> {
    let params = s.params()?;
    let law = MarginalLaw::new(s.family, params)?;
    let t = s.t[0];
    let t0s: Vec<f64> = s.t0.iter().copied().filter(|&v| v > 0.0).collect();
    if t0s.len() < 2 {
        return Err(Error::Config("field `t0`: asymptotics needs at least two positive values".into()));
    }
    let mut body = String::from("set,t0,probability,asymptotic\n");
    let mut fits = Vec::new();
    for b in &s.sets {
        let mut probs = Vec::with_capacity(t0s.len());
        for &t0 in &t0s {
            let p = aging_prob_quad(&law, b, t, t0)?.value;
            let a = asymptotic_prob(&law, b, t, t0)?;
            let _ = writeln!(body, "\"{b}\",{t0},{p},{a}");
            probs.push(p);
        }
        let slope = log_log_slope(&t0s, &probs)?;
        let last = *t0s.last().unwrap();
        let ratio = probs.last().unwrap() / asymptotic_prob(&law, b, t, last)?;
        let expected = s.alpha - 1.0;
        fits.push(SlopeFit {
            set: b.to_string(),
            slope,
            expected,
            ratio_at_largest_t0: ratio,
            pass: (slope - expected).abs() <= 0.05 && (ratio - 1.0).abs() <= 0.05,
        });
    }
    let failed: Vec<String> = fits
        .iter()
        .filter(|f| !f.pass)
        .map(|f| format!("asymptotics B={}: slope {:.4} (want {:.4} +- 0.05), ratio {:.4}", f.set, f.slope, f.expected, f.ratio_at_largest_t0))
        .collect();
    let mut w = Writer::new(s)?;
    w.csv("asymptotics.csv", &body)?;
    w.json("asymptotics.json", "asymptotics", failed.is_empty(), &fits)?;
    Ok(w.finish(failed))
}

/// Self-similarity of aged increments at the first `t0`, times `t`, scale `scale`.
pub fn cmd_selfsim(s: &Scenario) -> Result<Outcome> {
    let r = self_similarity_check(&s.family, s.params()?, s.t0[0], s.scale, &sorted(&s.t), s.n, s.seed)?;
    let failed = if r.pass {
        Vec::new()
    } else {
        vec![format!("selfsim: a={} t0={} failed at level {}", r.a, r.t0, r.level)]
    };
    let mut w = Writer::new(s)?;
    w.json("selfsim.json", "selfsim", r.pass, &r)?;
    Ok(w.finish(failed))
}

/// KS distance between aged and un-aged increments along `alphas`.
pub fn cmd_stationarity(s: &Scenario) -> Result<Outcome> {
    let r = stationarity_limit_check(&s.family, s.c, s.t[0], s.t0[0], &s.alphas, s.n, s.seed)?;
    let failed = if r.pass {
        Vec::new()
    } else {
        vec![format!(
            "stationarity: non_increasing={} last distance {:.4} (threshold {})",
            r.non_increasing,
            r.rows.last().map_or(f64::NAN, |x| x.ks_distance),
            r.threshold
        )]
    };
    let mut w = Writer::new(s)?;
    w.json("stationarity.json", "stationarity", r.pass, &r)?;
    Ok(w.finish(failed))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Sample,
    Aging,
    Verify,
    Ffpe,
    Asymptotics,
    Selfsim,
    Stationarity,
}

pub fn run(cmd: Command, s: &Scenario) -> Result<Outcome> {
    match cmd {
        Command::Sample => cmd_sample(s),
        Command::Aging => cmd_aging(s),
        Command::Verify => cmd_verify(s),
        Command::Ffpe => cmd_ffpe(s),
        Command::Asymptotics => cmd_asymptotics(s),
        Command::Selfsim => cmd_selfsim(s),
        Command::Stationarity => cmd_stationarity(s),
    }
}

/// One-line JSON error for stderr.
pub fn error_message(kind: &str, message: &str) -> String {
    serde_json::json!({ "error": kind, "message": message }).to_string()
}

pub fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Config(_) | Error::Parse(_) => "invalid_config",
        Error::Io(_) => "io",
        _ => "numeric",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn list_flag_round_trips(v in prop::collection::vec(-1e6f64..1e6, 1..8)) {
            let text = v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
            prop_assert_eq!(parse_list(&text).unwrap(), v);
        }
    }

    #[test]
    fn defaults_round_trip_through_toml() {
        let s = Scenario::default();
        let text = toml::to_string(&s).unwrap();
        let back = Scenario::from_toml(&text).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.hash(), s.hash());
    }

    #[test]
    fn parses_documented_example() {
        let src = r#"
alpha = 0.3
t0 = [0.5, 1.0, 5.0]
sets = [[[1.0, inf]], [[-inf, -0.5]], [[0.2, 0.7]]]

[family]
kind = "symmetric_stable"
beta = 1.5
scale = 1.0

[grid]
dx = 0.02
half_width = 6.0
dt = 0.001
t_end = 1.0
save_every = 10
"#;
        let s = Scenario::from_toml(src).unwrap();
        assert_eq!(s.alpha, 0.3);
        assert_eq!(s.sets.len(), 3);
        assert_eq!(s.family, LevyFamily::SymmetricStable { beta: 1.5, scale: 1.0 });
        assert_eq!(s.grid.dx, 0.02);
        assert_eq!(s.n, Scenario::default().n);
    }

    #[test]
    fn diagnostics_name_line_and_field() {
        let e = Scenario::from_toml("seed = 3\nalpha = 1.5\n").unwrap_err().to_string();
        assert!(e.contains("line 2") && e.contains("alpha"), "{e}");
        let e = Scenario::from_toml("seed = 3\n\nbogus = 1\n").unwrap_err().to_string();
        assert!(e.contains("line 3") && e.contains("bogus"), "{e}");
        let e = Scenario::from_toml("n = \"many\"\n").unwrap_err().to_string();
        assert!(e.contains("line 1"), "{e}");
        let e = Scenario::from_toml("sets = [[[0.7, 0.2]]]\n").unwrap_err().to_string();
        assert!(e.contains("line 1"), "{e}");
        let e = Scenario::from_toml("[family]\nkind = \"poisson\"\nlambda = -1\n").unwrap_err().to_string();
        assert!(e.contains("lambda") || e.contains("kind"), "{e}");
    }

    #[test]
    fn flags_override_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.toml");
        fs::write(&p, "alpha = 0.3\nseed = 5\nt = [2.0]\n").unwrap();
        let o = Overrides {
            alpha: Some(0.7),
            t0: Some(vec![1.0, 2.0]),
            ..Default::default()
        };
        let s = Scenario::resolve(Some(&p), &o).unwrap();
        assert_eq!((s.alpha, s.seed, s.t.clone(), s.t0.clone()), (0.7, 5, vec![2.0], vec![1.0, 2.0]));
        let bad = Overrides {
            alpha: Some(2.0),
            ..Default::default()
        };
        assert!(Scenario::resolve(Some(&p), &bad).is_err());
    }

    #[test]
    fn family_flag_grammar() {
        assert_eq!(parse_family("brownian").unwrap(), LevyFamily::Brownian { mu: 0.0, a: 1.0 });
        assert_eq!(
            parse_family("stable:beta=1.2,scale=2").unwrap(),
            LevyFamily::SymmetricStable { beta: 1.2, scale: 2.0 }
        );
        assert_eq!(parse_family("poisson:lambda=3").unwrap(), LevyFamily::Poisson { lambda: 3.0 });
        assert!(parse_family("brownian:beta=1").is_err());
        assert!(parse_family("gamma").is_err());
        assert!(parse_family("stable:beta=3").is_err());
        assert_eq!(parse_list("1, 10,100").unwrap(), vec![1.0, 10.0, 100.0]);
        assert!(parse_list("1,x").is_err());
    }

    #[test]
    fn hash_tracks_content_not_output_dir() {
        let a = Scenario::default();
        let mut b = a.clone();
        b.out = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.alpha = 0.6;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn sample_and_asymptotics_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let s = Scenario {
            t0: vec![0.0, 1.0],
            t: vec![2.0, 1.0],
            n: 500,
            out: dir.path().to_path_buf(),
            ..Default::default()
        };
        let o = cmd_sample(&s).unwrap();
        assert_eq!(o.files.len(), 4);
        let set = SampleSet::read_csv(fs::read(&o.files[3]).unwrap().as_slice()).unwrap();
        assert_eq!(set.n(), 500);
        assert_eq!((set.meta().t0, set.meta().t), (1.0, 1.0));
        assert_eq!(set.meta().scenario_hash, s.hash());

        let s = Scenario {
            t0: vec![10.0, 100.0, 1000.0, 10000.0],
            out: dir.path().to_path_buf(),
            ..Default::default()
        };
        let o = cmd_asymptotics(&s).unwrap();
        assert!(o.failed.is_empty(), "{:?}", o.failed);
        let csv = fs::read_to_string(dir.path().join("asymptotics.csv")).unwrap();
        assert!(csv.starts_with(&format!("scenario_hash,seed\n{},1\n", s.hash())));
    }

    #[test]
    fn verify_passes_at_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let s = Scenario {
            out: dir.path().to_path_buf(),
            ..Default::default()
        };
        let o = cmd_verify(&s).unwrap();
        assert!(o.failed.is_empty(), "{:?}", o.failed);
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&o.files[0]).unwrap()).unwrap();
        assert_eq!(v["pass"], true);
        assert_eq!(v["seed"], 1);
    }
}
