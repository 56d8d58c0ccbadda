//! Densities of the walk limit on a space grid and a solver for the aged
//! fractional Fokker-Planck equation
//! `d_t^alpha C = L (C - p S(t))`, `C(x, 0) = p(x)`,
//! where `S(t) = P(R_{t0} > t)` is the mass that has not yet started moving.
//!
//! Three routes to the same density are provided: the time-stepped equation,
//! the convolution `p * (atom delta_0 + nu)` built from subordination
//! quadrature, and a Monte Carlo histogram.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io::{BufRead, Read, Write};

use crate::aging::zero_atom;
use crate::dist::AgingKernel;
use crate::error::{check_range, Error, Result};
use crate::frac_calc::{grunwald_coefficients, levy_symbol};
use crate::mc_stats::{derive_seed, replicate};
use crate::process::{AgingSampler, LevyFamily, DEFAULT_REL_DU};
use crate::quad::{adaptive, AdaptiveOptions, GaussLegendre};
use crate::special_fn::{gamma, inverse_subordinator_pdf, AlphaScale};
use crate::tol::TOL;

// ---------------------------------------------------------------------------
// Grids

/// Uniform grid `x_i = x_min + i dx`, `i < n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XGrid {
    pub x_min: f64,
    pub dx: f64,
    pub n: usize,
}

impl XGrid {
    /// Grid on `[-half_width, half_width]` with a node at 0.
    pub fn symmetric(half_width: f64, dx: f64) -> Result<Self> {
        check_range("dx", dx, dx > 0.0, "(0, inf)")?;
        check_range("half_width", half_width, half_width >= dx, "[dx, inf)")?;
        let m = (half_width / dx).round() as usize;
        Ok(Self {
            x_min: -(m as f64) * dx,
            dx,
            n: 2 * m + 1,
        })
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.dx
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.x(i)).collect()
    }

    pub fn half_width(&self) -> f64 {
        -self.x_min
    }

    /// Index of the node at `x = 0`, if there is one.
    pub fn zero_index(&self) -> Option<usize> {
        let i = (-self.x_min / self.dx).round();
        (i >= 0.0 && (i as usize) < self.n && self.x(i as usize).abs() < 1e-9 * self.dx).then_some(i as usize)
    }
}

/// Smooth probability density sampled on an x-grid.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialDensity {
    grid: XGrid,
    p: Vec<f64>,
}

impl InitialDensity {
    pub fn new(grid: XGrid, p: Vec<f64>) -> Result<Self> {
        if p.len() != grid.n {
            return Err(Error::Config(format!("initial density has {} values for {} nodes", p.len(), grid.n)));
        }
        if let Some(v) = p.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Domain {
                name: "initial density value",
                value: *v,
                expected: "[0, inf)",
            });
        }
        let mass: f64 = p.iter().sum::<f64>() * grid.dx;
        if (mass - 1.0).abs() > 1e-6 {
            return Err(Error::Domain {
                name: "initial mass",
                value: mass,
                expected: "1 +- 1e-6",
            });
        }
        Ok(Self { grid, p })
    }

    /// Normal density `N(0, sigma^2)` renormalised on the grid.
    pub fn gaussian(grid: XGrid, sigma: f64) -> Result<Self> {
        check_range("sigma", sigma, sigma > 0.0, "(0, inf)")?;
        let raw: Vec<f64> = grid.points().iter().map(|x| (-0.5 * (x / sigma).powi(2)).exp()).collect();
        Self::normalized(grid, raw)
    }

    /// The compactly supported bump `exp(-1 / (1 - (x/w)^2))` on `|x| < w`.
    pub fn bump(grid: XGrid, width: f64) -> Result<Self> {
        check_range("width", width, width >= 2.0 * grid.dx, "[2 dx, inf)")?;
        let raw: Vec<f64> = grid
            .points()
            .iter()
            .map(|x| {
                let z = x / width;
                if z.abs() < 1.0 {
                    (-1.0 / (1.0 - z * z)).exp()
                } else {
                    0.0
                }
            })
            .collect();
        Self::normalized(grid, raw)
    }

    fn normalized(grid: XGrid, raw: Vec<f64>) -> Result<Self> {
        let mass: f64 = raw.iter().sum::<f64>() * grid.dx;
        Self::new(grid, raw.into_iter().map(|v| v / mass).collect())
    }

    pub fn grid(&self) -> XGrid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.p
    }

    /// Draws from the grid density read as a histogram with one cell per node.
    pub fn sample<R: Rng + ?Sized>(&self, cdf: &[f64], rng: &mut R) -> f64 {
        let u = rng.random::<f64>() * cdf[cdf.len() - 1];
        let i = cdf.partition_point(|&c| c <= u).min(self.grid.n - 1);
        let lo = if i == 0 { 0.0 } else { cdf[i - 1] };
        let frac = if cdf[i] > lo { (u - lo) / (cdf[i] - lo) } else { 0.5 };
        self.grid.x(i) + (frac - 0.5) * self.grid.dx
    }

    /// Cumulative cell masses for [`InitialDensity::sample`].
    pub fn cumulative(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.p
            .iter()
            .map(|v| {
                acc += v * self.grid.dx;
                acc
            })
            .collect()
    }
}

/// A density on an x-grid at one or more times, plus the mass held in an
/// atom at `x = 0`. `values` is row-major, one row per time.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    pub x: XGrid,
    pub t_grid: Vec<f64>,
    pub values: Vec<f64>,
    pub atom_mass: Vec<f64>,
}

impl GridDensity {
    pub fn single(x: XGrid, t: f64, values: Vec<f64>, atom: f64) -> Self {
        Self {
            x,
            t_grid: vec![t],
            values,
            atom_mass: vec![atom],
        }
    }

    pub fn row(&self, ti: usize) -> &[f64] {
        &self.values[ti * self.x.n..(ti + 1) * self.x.n]
    }

    pub fn last_row(&self) -> &[f64] {
        self.row(self.t_grid.len() - 1)
    }

    /// `sum values dx + atom` at time index `ti`.
    pub fn mass(&self, ti: usize) -> f64 {
        self.row(ti).iter().sum::<f64>() * self.x.dx + self.atom_mass[ti]
    }

    /// Most negative value, or 0.
    pub fn undershoot(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::min)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(self.values.len() * 24 + 64);
        s.push_str("x,t,value,atom_mass\n");
        for (ti, &t) in self.t_grid.iter().enumerate() {
            for (i, v) in self.row(ti).iter().enumerate() {
                let _ = writeln!(s, "{},{},{},{}", self.x.x(i), t, v, self.atom_mass[ti]);
            }
        }
        s
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }

    /// Reads what [`GridDensity::to_csv`] writes. The grid is inferred from
    /// the first row block.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty file".into()))??;
        if header != "x,t,value,atom_mass" {
            return Err(Error::Parse(format!("unexpected header `{header}`")));
        }
        let mut xs = Vec::new();
        let mut t_grid: Vec<f64> = Vec::new();
        let mut values = Vec::new();
        let mut atom_mass = Vec::new();
        for (ln, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let f: Vec<f64> = line
                .split(',')
                .map(|v| v.parse::<f64>().map_err(|e| Error::Parse(format!("line {}: {e}", ln + 2))))
                .collect::<Result<_>>()?;
            if f.len() != 4 {
                return Err(Error::Parse(format!("line {}: expected 4 fields", ln + 2)));
            }
            if t_grid.last() != Some(&f[1]) {
                t_grid.push(f[1]);
                atom_mass.push(f[3]);
            }
            if t_grid.len() == 1 {
                xs.push(f[0]);
            }
            values.push(f[2]);
        }
        if xs.len() < 2 || values.len() != xs.len() * t_grid.len() {
            return Err(Error::Parse("ragged or too small grid".into()));
        }
        let x = XGrid {
            x_min: xs[0],
            dx: xs[1] - xs[0],
            n: xs.len(),
        };
        Ok(Self {
            x,
            t_grid,
            values,
            atom_mass,
        })
    }

    /// Little-endian binary table:
    /// `b"AGDN"`, `u32` version 1, `u64` nx, `u64` nt, `u8` dtype tag (1 = f64),
    /// `f64` x_min, `f64` dx, then `nt` times, `nt` atom masses and the
    /// `nt * nx` row-major values.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(BINARY_MAGIC)?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&(self.x.n as u64).to_le_bytes())?;
        w.write_all(&(self.t_grid.len() as u64).to_le_bytes())?;
        w.write_all(&[DTYPE_F64])?;
        for v in [self.x.x_min, self.x.dx]
            .iter()
            .chain(&self.t_grid)
            .chain(&self.atom_mass)
            .chain(&self.values)
        {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(Error::Parse("bad magic".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        if u32::from_le_bytes(b4) != 1 {
            return Err(Error::Parse("unsupported version".into()));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let nx = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut b8)?;
        let nt = u64::from_le_bytes(b8) as usize;
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        if tag[0] != DTYPE_F64 {
            return Err(Error::Parse(format!("unknown dtype tag {}", tag[0])));
        }
        let mut read_f64s = |k: usize| -> Result<Vec<f64>> {
            (0..k)
                .map(|_| {
                    r.read_exact(&mut b8)?;
                    Ok(f64::from_le_bytes(b8))
                })
                .collect()
        };
        let head = read_f64s(2)?;
        let t_grid = read_f64s(nt)?;
        let atom_mass = read_f64s(nt)?;
        let values = read_f64s(nt * nx)?;
        Ok(Self {
            x: XGrid {
                x_min: head[0],
                dx: head[1],
                n: nx,
            },
            t_grid,
            values,
            atom_mass,
        })
    }
}

const BINARY_MAGIC: &[u8; 4] = b"AGDN";
const DTYPE_F64: u8 = 1;

// ---------------------------------------------------------------------------
// Symmetric stable density

/// Density of the standard symmetric stable law, `E[exp(ikZ)] = exp(-|k|^beta)`,
/// for `beta in (1, 2)`. Tabulated by Fourier inversion below `y = 30` and
/// summed from its asymptotic series above.
#[derive(Debug, Clone)]
struct StableDensity {
    beta: f64,
    table: LogTable,
}

const STABLE_SERIES_FROM: f64 = 30.0;

impl StableDensity {
    fn new(beta: f64) -> Result<Self> {
        let k_max = 40f64.powf(1.0 / beta);
        let opts = AdaptiveOptions::new(1e-14, 1e-12);
        let z_max = (1.0 + STABLE_SERIES_FROM).ln();
        let table = LogTable::build(z_max, |y| {
            Ok(adaptive(|k| (k * y).cos() * (-k.powf(beta)).exp(), 0.0, k_max, opts)?.value / PI)
        })?;
        Ok(Self { beta, table })
    }

    fn series(&self, y: f64) -> f64 {
        let b = self.beta;
        let mut sum = 0.0_f64;
        let mut prev = f64::INFINITY;
        for k in 1..60 {
            let kf = k as f64;
            let term = crate::special_fn::ln_gamma(b * kf + 1.0) - crate::special_fn::ln_gamma(kf + 1.0) - (b * kf + 1.0) * y.ln();
            let mag = term.exp();
            if mag > prev || mag < 1e-18 * sum.abs() {
                break;
            }
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            sum += sign * mag * (PI * b * kf / 2.0).sin();
            prev = mag;
        }
        sum / PI
    }

    fn pdf(&self, y: f64) -> f64 {
        let y = y.abs();
        if y >= STABLE_SERIES_FROM {
            self.series(y)
        } else {
            self.table.eval(y)
        }
    }
}

/// Even function tabulated on `z = ln(1 + |y|)` with linear interpolation.
#[derive(Debug, Clone)]
struct LogTable {
    values: Vec<f64>,
}

const LOG_TABLE_DZ: f64 = 1e-3;

impl LogTable {
    fn build(z_max: f64, f: impl Fn(f64) -> Result<f64>) -> Result<Self> {
        let n = (z_max / LOG_TABLE_DZ).ceil() as usize + 1;
        let values = (0..n).map(|j| f((j as f64 * LOG_TABLE_DZ).exp_m1())).collect::<Result<Vec<_>>>()?;
        Ok(Self { values })
    }

    fn y_max(&self) -> f64 {
        ((self.values.len() - 1) as f64 * LOG_TABLE_DZ).exp_m1()
    }

    fn eval(&self, y: f64) -> f64 {
        let z = y.abs().ln_1p() / LOG_TABLE_DZ;
        let j = z.floor() as usize;
        if j + 1 >= self.values.len() {
            return *self.values.last().unwrap();
        }
        let f = z - j as f64;
        self.values[j] * (1.0 - f) + self.values[j + 1] * f
    }
}

// ---------------------------------------------------------------------------
// Reference density p^0(x, t) = int p_A(x, u) h(u, t) du

/// Quadrature for `E[f(E_1)]` after `v = w^m`, which removes the
/// `u^(-1/beta)` peak of `p_A(0, u)` at small `u`.
#[derive(Debug, Clone)]
struct DensityRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl DensityRule {
    fn new(params: AlphaScale, m: f64) -> Result<Self> {
        let alpha = params.alpha();
        let ln_a0 = alpha / (1.0 - alpha) * alpha.ln() + (1.0 - alpha).ln();
        let v_max = (40.0 / ln_a0.exp()).powf(1.0 - alpha) / params.c();
        let w_max = v_max.powf(1.0 / m);
        let panels = ((8.0 / (1.0 - alpha)).ceil() as usize).clamp(16, 400);
        let gl = GaussLegendre::new(16);
        let width = w_max / panels as f64;
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        for p in 0..panels {
            let a = p as f64 * width;
            for (w, gw) in gl.mapped(a, a + width) {
                let v = w.powf(m);
                nodes.push(v);
                weights.push(gw * m * w.powf(m - 1.0) * inverse_subordinator_pdf(params, v, 1.0)?);
            }
        }
        Ok(Self { nodes, weights })
    }
}

#[derive(Debug, Clone)]
enum RefKind {
    /// `p^0(x, s) = s^-e P1(x s^-e)` with `P1` tabulated.
    Scaled { exponent: f64, table: LogTable, tail_power: Option<f64> },
    /// Drifting Brownian motion: direct quadrature at every point.
    Direct { rule: DensityRule, mu: f64, a: f64 },
}

/// The un-aged density `p^0(x, s)` for Brownian and symmetric stable `A`
/// with `beta in (1, 2]`.
#[derive(Debug, Clone)]
pub struct ReferenceLaw {
    family: LevyFamily,
    params: AlphaScale,
    kind: RefKind,
}

fn gaussian_pdf(x: f64, var: f64) -> f64 {
    (-0.5 * x * x / var).exp() / (2.0 * PI * var).sqrt()
}

impl ReferenceLaw {
    pub fn new(family: LevyFamily, params: AlphaScale) -> Result<Self> {
        family.validate()?;
        let alpha = params.alpha();
        let kind = match family {
            LevyFamily::Brownian { mu, a } if mu != 0.0 => RefKind::Direct {
                rule: DensityRule::new(params, 2.0)?,
                mu,
                a,
            },
            LevyFamily::Brownian { a, .. } => Self::gaussian_table(params, a)?,
            LevyFamily::SymmetricStable { beta, scale } if beta == 2.0 => Self::gaussian_table(params, 2.0 * scale)?,
            LevyFamily::SymmetricStable { beta, scale } if beta > 1.0 => {
                let f = StableDensity::new(beta)?;
                let m = (beta / (beta - 1.0)).ceil().max(2.0);
                let rule = DensityRule::new(params, m)?;
                let p1 = |y: f64| -> Result<f64> {
                    Ok(rule
                        .nodes
                        .iter()
                        .zip(&rule.weights)
                        .map(|(&v, &w)| {
                            let sc = (scale * v).powf(-1.0 / beta);
                            w * sc * f.pdf(y * sc)
                        })
                        .sum())
                };
                RefKind::Scaled {
                    exponent: alpha / beta,
                    table: LogTable::build(1000f64.ln_1p(), p1)?,
                    tail_power: Some(beta + 1.0),
                }
            }
            _ => {
                return Err(Error::UnsupportedFamily(format!(
                    "{}: reference densities need brownian or symmetric stable with beta in (1, 2]",
                    family.label()
                )))
            }
        };
        Ok(Self { family, params, kind })
    }

    fn gaussian_table(params: AlphaScale, var_rate: f64) -> Result<RefKind> {
        let rule = DensityRule::new(params, 2.0)?;
        let p1 = |y: f64| -> f64 {
            rule.nodes
                .iter()
                .zip(&rule.weights)
                .map(|(&v, &w)| w * gaussian_pdf(y, var_rate * v))
                .sum()
        };
        let peak = p1(0.0);
        let mut z_max = 1.0_f64;
        while p1(z_max.exp_m1()) > 1e-16 * peak && z_max < 10.0 {
            z_max += 0.25;
        }
        Ok(RefKind::Scaled {
            exponent: params.alpha() / 2.0,
            table: LogTable::build(z_max, |y| Ok(p1(y)))?,
            tail_power: None,
        })
    }

    pub fn family(&self) -> &LevyFamily {
        &self.family
    }

    pub fn params(&self) -> AlphaScale {
        self.params
    }

    /// `p^0(x, s)` for `s > 0`.
    pub fn density(&self, x: f64, s: f64) -> f64 {
        match &self.kind {
            RefKind::Scaled {
                exponent,
                table,
                tail_power,
            } => {
                let k = s.powf(-exponent);
                let y = (x * k).abs();
                let ym = table.y_max();
                let v = if y <= ym {
                    table.eval(y)
                } else {
                    match tail_power {
                        Some(p) => table.eval(ym) * (ym / y).powf(*p),
                        None => 0.0,
                    }
                };
                k * v
            }
            RefKind::Direct { rule, mu, a } => {
                let sa = s.powf(self.params.alpha());
                rule.nodes
                    .iter()
                    .zip(&rule.weights)
                    .map(|(&v, &w)| w * gaussian_pdf(x - mu * sa * v, a * sa * v))
                    .sum()
            }
        }
    }

    /// `E[exp(-ik Y_s)]` by numerical Fourier transform of the density.
    pub fn fourier(&self, k: f64, s: f64) -> Complex64 {
        match &self.kind {
            RefKind::Scaled {
                exponent,
                table,
                tail_power,
            } => {
                // Y_s = s^e Y_1; integrate the even P1 over its table nodes.
                let q = k * s.powf(*exponent);
                let n = table.values.len();
                let mut acc = 0.0;
                for j in 0..n {
                    let z = j as f64 * LOG_TABLE_DZ;
                    let y = z.exp_m1();
                    let w = if j == 0 || j == n - 1 { 0.5 } else { 1.0 };
                    acc += w * (q * y).cos() * table.values[j] * (1.0 + y);
                }
                let mut total = 2.0 * acc * LOG_TABLE_DZ;
                if let (Some(p), true) = (tail_power, q == 0.0) {
                    let ym = table.y_max();
                    total += 2.0 * table.eval(ym) * ym / (p - 1.0);
                }
                Complex64::new(total, 0.0)
            }
            RefKind::Direct { mu, a, .. } => {
                let sa = s.powf(self.params.alpha());
                let center = mu * sa * 1.5;
                let spread = 12.0 * (a * sa * 3.0).sqrt() + mu.abs() * sa * 6.0 + 1e-3;
                let gl = GaussLegendre::new(16);
                let panels = 200;
                let (lo, hi) = (center - spread, center + spread);
                let mut re = 0.0;
                let mut im = 0.0;
                let width = (hi - lo) / panels as f64;
                for p in 0..panels {
                    let a0 = lo + p as f64 * width;
                    for (x, w) in gl.mapped(a0, a0 + width) {
                        let d = self.density(x, s);
                        re += w * d * (k * x).cos();
                        im -= w * d * (k * x).sin();
                    }
                }
                Complex64::new(re, im)
            }
        }
    }
}

pub fn reference_density(fam: &LevyFamily, params: AlphaScale, t: f64, grid: XGrid) -> Result<GridDensity> {
    check_range("t", t, t > 0.0, "(0, inf)")?;
    let law = ReferenceLaw::new(*fam, params)?;
    Ok(reference_density_with(&law, t, grid))
}

pub fn reference_density_with(law: &ReferenceLaw, t: f64, grid: XGrid) -> GridDensity {
    let values = grid.points().iter().map(|&x| law.density(x, t)).collect();
    GridDensity::single(grid, t, values, 0.0)
}

/// Nodes and weights of `int_0^t w(r) g(t - r) dr` for the kernel weight,
/// with the same graded substitutions as the aging quadrature.
fn kernel_nodes(alpha: f64, t0: f64, t: f64, panels: usize) -> Result<Vec<(f64, f64)>> {
    let kernel = AgingKernel::new(alpha, t0)?;
    let gl = GaussLegendre::new(16);
    let half = 0.5 * t;
    let (pl, pr) = (2.0 / (1.0 - alpha), 2.0 / alpha);
    let width = 1.0 / panels as f64;
    let mut out = Vec::with_capacity(2 * panels * gl.len());
    for p in 0..panels {
        let a = p as f64 * width;
        for (u, w) in gl.mapped(a, a + width) {
            let r = half * u.powf(pl);
            out.push((t - r, w * half * pl * u.powf(pl - 1.0) * kernel.pdf(r)?));
            let s = half * u.powf(pr);
            out.push((s, w * half * pr * u.powf(pr - 1.0) * kernel.pdf(t - s)?));
        }
    }
    // Pairs are (s = t - r, weight).
    Ok(out)
}

const AGED_PANELS: usize = 8;

/// `nu(x, t) = int_0^t p^0(x, t - r) p_{t0}(r) dr` with the atom `P(Y^{t0}_t = 0)`.
pub fn aged_density(fam: &LevyFamily, params: AlphaScale, t0: f64, t: f64, grid: XGrid) -> Result<GridDensity> {
    let law = ReferenceLaw::new(*fam, params)?;
    aged_density_with(&law, t0, t, grid)
}

pub fn aged_density_with(law: &ReferenceLaw, t0: f64, t: f64, grid: XGrid) -> Result<GridDensity> {
    check_range("t", t, t > 0.0, "(0, inf)")?;
    check_range("t0", t0, t0 >= 0.0, "[0, inf)")?;
    if t0 == 0.0 {
        return Ok(reference_density_with(law, t, grid));
    }
    let nodes = kernel_nodes(law.params().alpha(), t0, t, AGED_PANELS)?;
    let values = grid
        .points()
        .iter()
        .map(|&x| nodes.iter().map(|&(s, w)| w * law.density(x, s)).sum())
        .collect();
    let atom = zero_atom(law.family(), law.params(), t, t0)?;
    Ok(GridDensity::single(grid, t, values, atom))
}

/// `(p * mu)(x_i)` for the law `mu = atom delta_0 + nu` on the same grid.
pub fn convolve_with_initial(f: &InitialDensity, d: &GridDensity, ti: usize) -> Result<Vec<f64>> {
    let g = f.grid();
    if g != d.x || g.zero_index().is_none() {
        return Err(Error::Config("initial density and law must share a grid with a node at 0".into()));
    }
    let z = g.zero_index().unwrap() as isize;
    let nu = d.row(ti);
    let atom = d.atom_mass[ti];
    let n = g.n as isize;
    let p = f.values();
    Ok((0..n)
        .map(|i| {
            let mut acc = 0.0;
            for (j, &pj) in p.iter().enumerate() {
                if pj == 0.0 {
                    continue;
                }
                let k = i - j as isize + z;
                if (0..n).contains(&k) {
                    acc += pj * nu[k as usize];
                }
            }
            atom * p[i as usize] + acc * g.dx
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Solver

/// Space-time grid for [`solve_ffpe`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverGrid {
    pub dx: f64,
    pub half_width: f64,
    pub dt: f64,
    pub t_end: f64,
    /// Store every `save_every`-th step; the final step is always stored.
    pub save_every: usize,
}

impl Default for SolverGrid {
    fn default() -> Self {
        Self {
            dx: 0.01,
            half_width: 8.0,
            dt: 1e-3,
            t_end: 1.0,
            save_every: 100,
        }
    }
}

impl SolverGrid {
    pub fn x_grid(&self) -> Result<XGrid> {
        XGrid::symmetric(self.half_width, self.dx)
    }
}

/// `P(R_{t0} > t)`, the weight of the unmoved initial mass; 0 when `t0 = 0`.
pub fn source_term(alpha: f64, t0: f64, t: f64) -> Result<f64> {
    if t0 == 0.0 {
        return Ok(0.0);
    }
    AgingKernel::new(alpha, t0)?.sf(t)
}

enum SpaceOp {
    Tridiagonal { lower: f64, diag: f64, upper: f64 },
    Dense(DMatrix<f64>),
}

impl SpaceOp {
    fn new(fam: &LevyFamily, n: usize, dx: f64) -> Result<Self> {
        match *fam {
            LevyFamily::Brownian { mu, a } => Ok(Self::brownian(mu, a, dx)),
            LevyFamily::SymmetricStable { beta, scale } if beta == 2.0 => Ok(Self::brownian(0.0, 2.0 * scale, dx)),
            LevyFamily::SymmetricStable { beta, scale } if beta > 1.0 => {
                // Riesz derivative by shifted Grünwald differences from both sides.
                let g = grunwald_coefficients(beta, n + 1);
                let c = -scale / (2.0 * (PI * beta / 2.0).cos() * dx.powf(beta));
                let m = DMatrix::from_fn(n, n, |i, j| {
                    let mut v = 0.0;
                    if i + 1 >= j {
                        v += g[i + 1 - j];
                    }
                    if j + 1 >= i {
                        v += g[j + 1 - i];
                    }
                    c * v
                });
                Ok(Self::Dense(m))
            }
            _ => Err(Error::UnsupportedFamily(format!(
                "{}: the solver handles brownian and symmetric stable with beta in (1, 2]",
                fam.label()
            ))),
        }
    }

    /// Fokker-Planck operator `-mu d/dx + (A/2) d^2/dx^2`, central differences.
    fn brownian(mu: f64, a: f64, dx: f64) -> Self {
        let d2 = 0.5 * a / (dx * dx);
        let d1 = mu / (2.0 * dx);
        Self::Tridiagonal {
            lower: d2 + d1,
            diag: -2.0 * d2,
            upper: d2 - d1,
        }
    }

    fn apply(&self, u: &[f64]) -> Vec<f64> {
        let n = u.len();
        match self {
            Self::Tridiagonal { lower, diag, upper } => (0..n)
                .map(|i| {
                    let l = if i > 0 { u[i - 1] } else { 0.0 };
                    let r = if i + 1 < n { u[i + 1] } else { 0.0 };
                    lower * l + diag * u[i] + upper * r
                })
                .collect(),
            Self::Dense(m) => (m * DVector::from_column_slice(u)).as_slice().to_vec(),
        }
    }
}

/// Factorised `I - k L`.
enum Implicit {
    Thomas { lower: f64, c_prime: Vec<f64>, denom: Vec<f64> },
    Lu(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

impl Implicit {
    fn new(op: &SpaceOp, n: usize, k: f64) -> Result<Self> {
        match op {
            SpaceOp::Tridiagonal { lower, diag, upper } => {
                let (a, b, c) = (-k * lower, 1.0 - k * diag, -k * upper);
                let mut c_prime = vec![0.0; n];
                let mut denom = vec![0.0; n];
                denom[0] = b;
                c_prime[0] = c / b;
                for i in 1..n {
                    denom[i] = b - a * c_prime[i - 1];
                    c_prime[i] = c / denom[i];
                }
                Ok(Self::Thomas {
                    lower: a,
                    c_prime,
                    denom,
                })
            }
            SpaceOp::Dense(m) => Ok(Self::Lu((DMatrix::identity(n, n) - m * k).lu())),
        }
    }

    fn solve(&self, rhs: &mut [f64]) -> Result<()> {
        match self {
            Self::Thomas {
                lower,
                c_prime,
                denom,
            } => {
                let n = rhs.len();
                rhs[0] /= denom[0];
                for i in 1..n {
                    rhs[i] = (rhs[i] - lower * rhs[i - 1]) / denom[i];
                }
                for i in (0..n - 1).rev() {
                    rhs[i] -= c_prime[i] * rhs[i + 1];
                }
                Ok(())
            }
            Self::Lu(lu) => {
                let mut b = DVector::from_column_slice(rhs);
                if !lu.solve_mut(&mut b) {
                    return Err(Error::Config("singular implicit operator".into()));
                }
                rhs.copy_from_slice(b.as_slice());
                Ok(())
            }
        }
    }
}

/// Time-steps `U = C - p` through
/// `(I - dt^alpha L) U^n = -sum_{j>=1} w_j U^{n-j} + dt^alpha F(t_n) L p`,
/// the Grünwald form of `D^alpha U = L U + F(t) L p` with `F = 1 - S`.
/// Dirichlet boundaries; raises on mass leak or norm growth.
pub fn solve_ffpe(fam: &LevyFamily, params: AlphaScale, t0: f64, f: &InitialDensity, grid: SolverGrid) -> Result<GridDensity> {
    check_range("t0", t0, t0 >= 0.0, "[0, inf)")?;
    check_range("dt", grid.dt, grid.dt > 0.0, "(0, inf)")?;
    check_range("t_end", grid.t_end, grid.t_end >= grid.dt, "[dt, inf)")?;
    let xg = f.grid();
    if (xg.dx - grid.dx).abs() > 1e-12 * grid.dx || xg.n != grid.x_grid()?.n {
        return Err(Error::Config("initial density grid does not match the solver grid".into()));
    }
    let alpha = params.alpha();
    let n = xg.n;
    let steps = (grid.t_end / grid.dt).round() as usize;
    let dt = grid.dt;
    // The space operator acts on A's generator with the subordinator scale folded in.
    let op = SpaceOp::new(fam, n, xg.dx)?;
    let k = dt.powf(alpha) / params.c();
    let implicit = Implicit::new(&op, n, k)?;
    let p = f.values();
    let lp = op.apply(p);
    let w = grunwald_coefficients(alpha, steps);
    let p_max = p.iter().copied().fold(0.0, f64::max);
    let save_every = grid.save_every.max(1);

    let mut history: Vec<Vec<f64>> = Vec::with_capacity(steps + 1);
    history.push(vec![0.0; n]);
    let mut t_grid = vec![0.0];
    let mut values = p.to_vec();
    let mut atom_mass = vec![0.0];
    let mut rhs = vec![0.0; n];
    for step in 1..=steps {
        let t = step as f64 * dt;
        let weight = 1.0 - source_term(alpha, t0, t)?;
        for (i, r) in rhs.iter_mut().enumerate() {
            *r = k * weight * lp[i];
        }
        for j in 1..=step {
            let wj = w[j];
            for (r, u) in rhs.iter_mut().zip(&history[step - j]) {
                *r -= wj * u;
            }
        }
        implicit.solve(&mut rhs)?;
        let c: Vec<f64> = rhs.iter().zip(p).map(|(u, q)| u + q).collect();
        let mass = c.iter().sum::<f64>() * xg.dx;
        if (mass - 1.0).abs() > TOL.mass_leak {
            return Err(Error::MassLeak {
                leak: (mass - 1.0).abs(),
                limit: TOL.mass_leak,
            });
        }
        let growth = c.iter().fold(0.0_f64, |m, v| m.max(v.abs())) / p_max;
        if growth > 10.0 {
            return Err(Error::Unstable {
                t,
                growth,
                suggested_dt: dt / 4.0,
            });
        }
        if step % save_every == 0 || step == steps {
            t_grid.push(t);
            values.extend_from_slice(&c);
            atom_mass.push(0.0);
        }
        history.push(rhs.clone());
    }
    Ok(GridDensity {
        x: xg,
        t_grid,
        values,
        atom_mass,
    })
}

// ---------------------------------------------------------------------------
// Transform-domain checks

/// Numeric Laplace transform `int_0^inf exp(-s t) g(t) dt` via `t = tau^4`.
fn laplace_numeric(s: f64, mut g: impl FnMut(f64) -> Complex64) -> Complex64 {
    let tau_max = (60.0 / s).powf(0.25);
    let gl = GaussLegendre::new(16);
    let panels = 32;
    let width = tau_max / panels as f64;
    let mut acc = Complex64::new(0.0, 0.0);
    for p in 0..panels {
        let a = p as f64 * width;
        for (tau, w) in gl.mapped(a, a + width) {
            let t = tau.powi(4);
            acc += w * 4.0 * tau.powi(3) * (-s * t).exp() * g(t);
        }
    }
    acc
}

fn unaged_flt(law: &ReferenceLaw, k: f64, s: f64) -> Complex64 {
    laplace_numeric(s, |t| law.fourier(k, t))
}

/// Numeric Fourier-Laplace transform of `p^0` minus `s^(alpha-1)/(s^alpha - psi(-k))`.
pub fn flt_residual(fam: &LevyFamily, params: AlphaScale, k: f64, s: f64) -> Result<Complex64> {
    check_range("s", s, s > 0.0, "(0, inf)")?;
    let law = ReferenceLaw::new(*fam, params)?;
    let alpha = params.alpha();
    let psi = levy_symbol(fam, k)? / params.c();
    let closed = s.powf(alpha - 1.0) / (s.powf(alpha) - psi);
    Ok(unaged_flt(&law, k, s) - closed)
}

/// Aged transform identity `nu(k, s) (s^alpha - psi(-k)) - s^(alpha-1) p_hat_{t0}(s)`,
/// with `nu` the Fourier-Laplace transform of the aged density part,
/// computed numerically from the reference law.
pub fn aged_flt_residual(fam: &LevyFamily, params: AlphaScale, t0: f64, k: f64, s: f64) -> Result<Complex64> {
    check_range("s", s, s > 0.0, "(0, inf)")?;
    check_range("t0", t0, t0 > 0.0, "(0, inf)")?;
    let law = ReferenceLaw::new(*fam, params)?;
    if matches!(law.kind, RefKind::Direct { .. }) {
        return Err(Error::UnsupportedFamily("aged transform check needs a self-similar family".into()));
    }
    let alpha = params.alpha();
    let mut err = None;
    let nu = laplace_numeric(s, |t| {
        match kernel_nodes(alpha, t0, t, 4) {
            Ok(nodes) => nodes.iter().map(|&(sv, w)| w * law.fourier(k, sv)).sum(),
            Err(e) => {
                err.get_or_insert(e);
                Complex64::new(0.0, 0.0)
            }
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    let psi = levy_symbol(fam, k)? / params.c();
    let p_hat = AgingKernel::new(alpha, t0)?.laplace(s)?;
    Ok(nu * (s.powf(alpha) - psi) - s.powf(alpha - 1.0) * p_hat)
}

/// `s^(alpha-1)/(s^alpha - psi(-k))`.
pub fn flt_closed_form(fam: &LevyFamily, params: AlphaScale, k: f64, s: f64) -> Result<Complex64> {
    let psi = levy_symbol(fam, k)? / params.c();
    Ok(s.powf(params.alpha() - 1.0) / (s.powf(params.alpha()) - psi))
}

// ---------------------------------------------------------------------------
// Three-route agreement

/// Masses of a grid density in bins of `width` aligned to cell edges.
pub fn bin_masses(grid: XGrid, values: &[f64], width: f64) -> Vec<f64> {
    let per = (width / grid.dx).round().max(1.0) as usize;
    let bins = grid.n.div_ceil(per);
    let mut out = vec![0.0; bins];
    for (i, v) in values.iter().enumerate() {
        out[i / per] += v * grid.dx;
    }
    out
}

/// Histogram masses of draws in the bins of [`bin_masses`].
pub fn bin_samples(grid: XGrid, samples: &[f64], width: f64) -> Vec<f64> {
    let per = (width / grid.dx).round().max(1.0) as usize;
    let bins = grid.n.div_ceil(per);
    let mut out = vec![0.0; bins];
    let lo = grid.x_min - 0.5 * grid.dx;
    let w = per as f64 * grid.dx;
    let inc = 1.0 / samples.len() as f64;
    for &y in samples {
        let b = ((y - lo) / w).floor();
        if b >= 0.0 && (b as usize) < bins {
            out[b as usize] += inc;
        }
    }
    out
}

pub fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Bin width used to compare routes.
pub const COMPARE_BIN: f64 = 0.05;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FfpeReport {
    pub family: LevyFamily,
    pub alpha: f64,
    pub c: f64,
    pub t0: f64,
    pub t: f64,
    pub grid: SolverGrid,
    pub n: usize,
    pub seed: u64,
    pub bin_width: f64,
    pub l1_solver_convolution: f64,
    pub l1_solver_mc: f64,
    pub l1_convolution_mc: f64,
    pub max_mass_error: f64,
    pub undershoot: f64,
    pub atom_mass: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Output of [`three_route_run`]: the report plus the profiles it compared.
#[derive(Debug, Clone)]
pub struct ThreeRoute {
    pub report: FfpeReport,
    pub solver: GridDensity,
    pub convolution: Vec<f64>,
    pub solver_bins: Vec<f64>,
    pub convolution_bins: Vec<f64>,
    pub mc_bins: Vec<f64>,
}

/// Runs the solver, the convolution route and a Monte Carlo histogram of
/// `X_0 + Y^{t0}_t` at `t = grid.t_end`, and compares them pairwise in L1.
pub fn three_route_run(
    fam: &LevyFamily,
    params: AlphaScale,
    t0: f64,
    f: &InitialDensity,
    grid: SolverGrid,
    n: usize,
    seed: u64,
) -> Result<ThreeRoute> {
    let t = grid.t_end;
    let sol = solve_ffpe(fam, params, t0, f, grid)?;
    let max_mass_error = (0..sol.t_grid.len()).map(|i| (sol.mass(i) - 1.0).abs()).fold(0.0, f64::max);
    let law = ReferenceLaw::new(*fam, params)?;
    let aged = aged_density_with(&law, t0, t, f.grid())?;
    let conv = convolve_with_initial(f, &aged, 0)?;
    let cdf = f.cumulative();
    let ys = if t0 == 0.0 {
        crate::mc_stats::try_replicate(n, derive_seed(seed, 0), |rng| {
            Ok(f.sample(&cdf, rng) + crate::process::ctrwl_sample(fam, params, t, rng)?)
        })?
    } else {
        let sampler = AgingSampler::new(*fam, params, t0, &[t], DEFAULT_REL_DU)?;
        replicate(n, derive_seed(seed, 0), |rng| f.sample(&cdf, rng) + sampler.sample(rng)[0])
    };
    let g = f.grid();
    let a = bin_masses(g, sol.last_row(), COMPARE_BIN);
    let b = bin_masses(g, &conv, COMPARE_BIN);
    let c = bin_samples(g, &ys, COMPARE_BIN);
    let tolerance = 0.03;
    let (l1_sc, l1_sm, l1_cm) = (l1_distance(&a, &b), l1_distance(&a, &c), l1_distance(&b, &c));
    let report = FfpeReport {
        family: *fam,
        alpha: params.alpha(),
        c: params.c(),
        t0,
        t,
        grid,
        n,
        seed,
        bin_width: COMPARE_BIN,
        l1_solver_convolution: l1_sc,
        l1_solver_mc: l1_sm,
        l1_convolution_mc: l1_cm,
        max_mass_error,
        undershoot: sol.undershoot(),
        atom_mass: aged.atom_mass[0],
        tolerance,
        pass: l1_sc <= tolerance && l1_sm <= tolerance && l1_cm <= tolerance && max_mass_error <= TOL.mass_leak,
    };
    Ok(ThreeRoute {
        report,
        solver: sol,
        convolution: conv,
        solver_bins: a,
        convolution_bins: b,
        mc_bins: c,
    })
}

pub fn three_route_check(
    fam: &LevyFamily,
    params: AlphaScale,
    t0: f64,
    f: &InitialDensity,
    grid: SolverGrid,
    n: usize,
    seed: u64,
) -> Result<FfpeReport> {
    Ok(three_route_run(fam, params, t0, f, grid, n, seed)?.report)
}

/// `t^alpha / (c Gamma(1 + alpha))`, the variance of `Y_t` for `A = B(0, 1)`.
pub fn brownian_variance(params: AlphaScale, t: f64) -> f64 {
    t.powf(params.alpha()) / (params.c() * gamma(1.0 + params.alpha()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mc_stats::StreamSpec;
    use proptest::prelude::*;

    fn bm() -> LevyFamily {
        LevyFamily::brownian(0.0, 1.0).unwrap()
    }

    fn half() -> AlphaScale {
        AlphaScale::standard(0.5).unwrap()
    }

    fn moments(g: &GridDensity, ti: usize) -> (f64, f64, f64) {
        let row = g.row(ti);
        let m0: f64 = row.iter().sum::<f64>() * g.x.dx;
        let m1: f64 = row.iter().enumerate().map(|(i, v)| v * g.x.x(i)).sum::<f64>() * g.x.dx;
        let m2: f64 = row.iter().enumerate().map(|(i, v)| v * g.x.x(i).powi(2)).sum::<f64>() * g.x.dx;
        (m0, m1, m2)
    }

    #[test]
    fn stable_density_matches_closed_forms() {
        // beta -> 2 is N(0, 2), checked at beta = 1.999 loosely; Fourier
        // against series continuity at the switch.
        let f = StableDensity::new(1.5).unwrap();
        let below = f.table.eval(STABLE_SERIES_FROM - 1e-9);
        let above = f.series(STABLE_SERIES_FROM);
        assert!((below / above - 1.0).abs() < 1e-4, "{below} {above}");
        // Normalisation over a wide range plus the power tail.
        let mass = 2.0 * crate::testutil::simpson(|y| f.pdf(y), 0.0, 30.0, 1e-10);
        let tail = 2.0 * crate::testutil::simpson(|v| if v <= 0.0 { 0.0 } else { f.pdf(1.0 / v) / (v * v) }, 0.0, 1.0 / 30.0, 1e-12);
        assert!((mass + tail - 1.0).abs() < 1e-6);
        let near_gauss = StableDensity::new(1.999).unwrap();
        assert!((near_gauss.pdf(0.5) - gaussian_pdf(0.5, 2.0)).abs() < 2e-3);
    }

    #[test]
    fn reference_density_brownian() {
        let g = XGrid::symmetric(12.0, 0.01).unwrap();
        let d = reference_density(&bm(), half(), 1.0, g).unwrap();
        let (m0, m1, m2) = moments(&d, 0);
        assert!((m0 - 1.0).abs() < 1e-4, "{m0}");
        assert!(m1.abs() < 1e-12);
        assert!((m2 / brownian_variance(half(), 1.0) - 1.0).abs() < 5e-3, "{m2}");
        let row = d.row(0);
        let asym = (0..g.n).map(|i| (row[i] - row[g.n - 1 - i]).abs()).fold(0.0, f64::max);
        assert!(asym <= 1e-10);
    }

    #[test]
    fn reference_density_near_alpha_one_is_gaussian() {
        let g = XGrid::symmetric(10.0, 0.01).unwrap();
        let d = reference_density(&bm(), AlphaScale::standard(0.99).unwrap(), 1.0, g).unwrap();
        let gauss: Vec<f64> = g.points().iter().map(|&x| gaussian_pdf(x, 1.0)).collect();
        let l1: f64 = l1_distance(d.row(0), &gauss) * g.dx;
        assert!(l1 < 0.02, "{l1}");
    }

    #[test]
    fn reference_density_with_drift_and_stable() {
        let g = XGrid::symmetric(16.0, 0.02).unwrap();
        let drift = LevyFamily::brownian(0.5, 1.0).unwrap();
        let d = reference_density(&drift, half(), 1.0, g).unwrap();
        let (m0, m1, _) = moments(&d, 0);
        assert!((m0 - 1.0).abs() < 1e-4);
        // E[Y_1] = mu E[E_1] = mu / Gamma(1.5).
        assert!((m1 - 0.5 / gamma(1.5)).abs() < 1e-4, "{m1}");
        // beta = 2 stable equals Brownian with doubled variance rate.
        let s2 = reference_density(&LevyFamily::symmetric_stable(2.0, 0.5).unwrap(), half(), 1.0, g).unwrap();
        let b1 = reference_density(&bm(), half(), 1.0, g).unwrap();
        assert!(l1_distance(s2.row(0), b1.row(0)) * g.dx < 1e-12);
        let st = ReferenceLaw::new(LevyFamily::symmetric_stable(1.5, 1.0).unwrap(), half()).unwrap();
        let mass = 2.0 * crate::testutil::simpson(|x| st.density(x, 1.0), 0.0, 200.0, 1e-9);
        let tail = 2.0 * crate::testutil::simpson(|v| if v <= 0.0 { 0.0 } else { st.density(1.0 / v, 1.0) / (v * v) }, 0.0, 1.0 / 200.0, 1e-12);
        assert!((mass + tail - 1.0).abs() < 1e-4, "{}", mass + tail);
        assert!(reference_density(&LevyFamily::poisson(1.0).unwrap(), half(), 1.0, g).is_err());
    }

    #[test]
    fn reference_density_matches_monte_carlo() {
        let g = XGrid::symmetric(10.0, 0.01).unwrap();
        let d = reference_density(&bm(), half(), 1.0, g).unwrap();
        let n = 1_000_000;
        let ys = replicate(n, 21, |rng| crate::process::ctrwl_sample(&bm(), half(), 1.0, rng).unwrap());
        let l1 = l1_distance(&bin_masses(g, d.row(0), COMPARE_BIN), &bin_samples(g, &ys, COMPARE_BIN));
        assert!(l1 <= 0.01, "{l1}");
    }

    #[test]
    fn aged_density_mass_split_and_limits() {
        let g = XGrid::symmetric(10.0, 0.01).unwrap();
        let d = aged_density(&bm(), half(), 1.0, 1.0, g).unwrap();
        assert!((d.atom_mass[0] - 0.5).abs() < 1e-14);
        let nu: f64 = d.row(0).iter().sum::<f64>() * g.dx;
        assert!((nu - 0.5).abs() < 1e-3, "{nu}");
        assert!((d.mass(0) - 1.0).abs() < 1e-3);
        let small = aged_density(&bm(), half(), 1e-6, 1.0, g).unwrap();
        let fresh = reference_density(&bm(), half(), 1.0, g).unwrap();
        let l1 = l1_distance(small.row(0), fresh.row(0)) * g.dx + small.atom_mass[0];
        assert!(l1 <= 5e-3, "{l1}");
    }

    #[test]
    fn aged_density_matches_monte_carlo() {
        let g = XGrid::symmetric(10.0, 0.01).unwrap();
        let d = aged_density(&bm(), half(), 1.0, 1.0, g).unwrap();
        let n = 1_000_000;
        let s = AgingSampler::new(bm(), half(), 1.0, &[1.0], DEFAULT_REL_DU).unwrap();
        let ys: Vec<f64> = replicate(n, 22, |rng| s.sample(rng)[0]).into_iter().filter(|&y| y != 0.0).collect();
        let nu_mass: f64 = d.row(0).iter().sum::<f64>() * g.dx;
        let a: Vec<f64> = bin_masses(g, d.row(0), COMPARE_BIN).iter().map(|m| m / nu_mass).collect();
        let l1 = l1_distance(&a, &bin_samples(g, &ys, COMPARE_BIN));
        assert!(l1 <= 0.02, "{l1}");
    }

    #[test]
    fn source_term_decays_like_the_exact_tail() {
        let (alpha, t0) = (0.5, 1.0);
        let k = AgingKernel::new(alpha, t0).unwrap();
        let s0 = source_term(alpha, t0, 1e-12).unwrap();
        assert!((s0 - 1.0).abs() < 1e-5);
        let mut prev = s0;
        for t in [0.5, 1.0, 5.0, 20.0, 100.0, 1e4] {
            let s = source_term(alpha, t0, t).unwrap();
            assert!(s < prev);
            assert!((s - (1.0 - k.cdf(t).unwrap())).abs() < 1e-14);
            prev = s;
        }
        let at20 = source_term(alpha, t0, 20.0 * t0).unwrap();
        // Arcsine law at alpha = 1/2: P(R > 20) = (2/pi) asin(sqrt(1/21)).
        assert!((at20 - 2.0 / PI * (1.0f64 / 21.0).sqrt().asin()).abs() < 1e-12);
        assert!(source_term(alpha, t0, 1e4 * t0).unwrap() < 1e-2 * s0);
        assert_eq!(source_term(alpha, 0.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn solver_unaged_matches_convolution_and_conserves_mass() {
        let grid = SolverGrid::default();
        let xg = grid.x_grid().unwrap();
        let f = InitialDensity::gaussian(xg, 0.05).unwrap();
        let sol = solve_ffpe(&bm(), half(), 0.0, &f, grid).unwrap();
        for i in 0..sol.t_grid.len() {
            assert!((sol.mass(i) - 1.0).abs() < 1e-3);
        }
        assert!(sol.undershoot() >= -TOL.negative_density, "{}", sol.undershoot());
        let aged = aged_density(&bm(), half(), 0.0, 1.0, xg).unwrap();
        let conv = convolve_with_initial(&f, &aged, 0).unwrap();
        let l1 = l1_distance(&bin_masses(xg, sol.last_row(), COMPARE_BIN), &bin_masses(xg, &conv, COMPARE_BIN));
        assert!(l1 <= 0.03, "{l1}");
    }

    #[test]
    fn solver_aged_matches_convolution() {
        let grid = SolverGrid::default();
        let xg = grid.x_grid().unwrap();
        let f = InitialDensity::gaussian(xg, 0.05).unwrap();
        let sol = solve_ffpe(&bm(), half(), 1.0, &f, grid).unwrap();
        let aged = aged_density(&bm(), half(), 1.0, 1.0, xg).unwrap();
        let conv = convolve_with_initial(&f, &aged, 0).unwrap();
        let l1 = l1_distance(&bin_masses(xg, sol.last_row(), COMPARE_BIN), &bin_masses(xg, &conv, COMPARE_BIN));
        assert!(l1 <= 0.03, "{l1}");
    }

    #[test]
    fn solver_refinement_reduces_error() {
        let f_of = |dx: f64| InitialDensity::gaussian(XGrid::symmetric(6.0, dx).unwrap(), 0.2).unwrap();
        let fine = XGrid::symmetric(6.0, 0.01).unwrap();
        let aged = aged_density(&bm(), half(), 1.0, 0.5, fine).unwrap();
        let conv = convolve_with_initial(&f_of(0.01), &aged, 0).unwrap();
        let err = |dx: f64, dt: f64| {
            let g = SolverGrid {
                dx,
                half_width: 6.0,
                dt,
                t_end: 0.5,
                save_every: 1000,
            };
            let sol = solve_ffpe(&bm(), half(), 1.0, &f_of(dx), g).unwrap();
            let stride = (dx / 0.01).round() as usize;
            let zf = fine.zero_index().unwrap();
            let zc = g.x_grid().unwrap().zero_index().unwrap();
            sol.last_row()
                .iter()
                .enumerate()
                .map(|(i, v)| (v - conv[(zf as isize + (i as isize - zc as isize) * stride as isize) as usize]).abs())
                .sum::<f64>()
                * dx
        };
        let e1 = err(0.08, 0.02);
        let e2 = err(0.04, 0.01);
        assert!(e1 / e2 >= 1.5, "{e1} {e2}");
    }

    #[test]
    fn stable_solver_conserves_mass_and_spreads() {
        let grid = SolverGrid {
            dx: 0.05,
            half_width: 40.0,
            dt: 1e-2,
            t_end: 0.2,
            save_every: 5,
        };
        let xg = grid.x_grid().unwrap();
        let f = InitialDensity::gaussian(xg, 0.2).unwrap();
        let fam = LevyFamily::symmetric_stable(1.8, 1.0).unwrap();
        let sol = solve_ffpe(&fam, half(), 0.0, &f, grid).unwrap();
        let last = sol.t_grid.len() - 1;
        assert!((sol.mass(last) - 1.0).abs() < 1e-3);
        let law = ReferenceLaw::new(fam, half()).unwrap();
        let d = reference_density_with(&law, 0.2, xg);
        let conv = convolve_with_initial(&f, &d, 0).unwrap();
        let l1 = l1_distance(sol.last_row(), &conv) * xg.dx;
        assert!(l1 < 0.05, "{l1}");
    }

    #[test]
    fn transform_residuals() {
        let p = half();
        for (k, s) in [(0.0, 1.0), (0.0, 2.0)] {
            assert!(flt_residual(&bm(), p, k, s).unwrap().norm() <= 1e-3);
        }
        let closed = flt_closed_form(&bm(), p, 1.0, 1.0).unwrap();
        assert!((closed.re - 2.0 / 3.0).abs() < 1e-15 && closed.im == 0.0);
        for k in [0.5, 1.0, 2.0] {
            for s in [0.5, 1.0, 2.0] {
                let r = flt_residual(&bm(), p, k, s).unwrap().norm();
                assert!(r <= 5e-3, "k={k} s={s}: {r}");
                let ra = aged_flt_residual(&bm(), p, 1.0, k, s).unwrap().norm();
                assert!(ra <= 5e-3, "aged k={k} s={s}: {ra}");
            }
        }
        let drift = LevyFamily::brownian(0.3, 1.0).unwrap();
        assert!(flt_residual(&drift, p, 1.0, 1.0).unwrap().norm() <= 5e-3);
    }

    #[test]
    fn serialisation_round_trips() {
        let g = XGrid::symmetric(1.0, 0.25).unwrap();
        let d = GridDensity {
            x: g,
            t_grid: vec![0.0, 0.5],
            values: (0..2 * g.n).map(|i| i as f64 * 0.1).collect(),
            atom_mass: vec![0.0, 0.25],
        };
        let back = GridDensity::read_csv(d.to_csv().as_bytes()).unwrap();
        assert_eq!(back, d);
        let mut buf = Vec::new();
        d.write_binary(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"AGDN");
        assert_eq!(GridDensity::read_binary(buf.as_slice()).unwrap(), d);
        assert!(GridDensity::read_binary(&b"XXXX"[..]).is_err());
    }

    #[test]
    fn initial_density_validation_and_sampling() {
        let g = XGrid::symmetric(2.0, 0.01).unwrap();
        assert!(InitialDensity::new(g, vec![1.0; g.n]).is_err());
        let f = InitialDensity::bump(g, 0.5).unwrap();
        assert!(f.values().iter().zip(g.points()).all(|(v, x)| x.abs() < 0.5 || *v == 0.0));
        let cdf = f.cumulative();
        let mut rng = StreamSpec::new(1, 1).rng();
        let xs: Vec<f64> = (0..100_000).map(|_| f.sample(&cdf, &mut rng)).collect();
        let var_mc = xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64;
        let var: f64 = f.values().iter().zip(g.points()).map(|(v, x)| v * x * x).sum::<f64>() * g.dx;
        assert!((var_mc / var - 1.0).abs() < 0.02);
        assert!(xs.iter().all(|x| x.abs() < 0.51));
    }

    proptest! {
        #[test]
        fn grid_has_zero_node_and_bins_keep_mass(m in 1usize..400, dx in 1e-3f64..0.5, vals in prop::collection::vec(0.0f64..5.0, 1..50)) {
            let g = XGrid::symmetric(m as f64 * dx, dx).unwrap();
            prop_assert_eq!(g.n, 2 * m + 1);
            let z = g.zero_index().unwrap();
            prop_assert!(g.x(z).abs() < 1e-9 * dx);
            let v: Vec<f64> = (0..g.n).map(|i| vals[i % vals.len()]).collect();
            let total: f64 = v.iter().sum::<f64>() * dx;
            let binned: f64 = bin_masses(g, &v, 5.0 * dx).iter().sum();
            prop_assert!((binned - total).abs() <= 1e-9 * total.max(1.0));
        }

        #[test]
        fn csv_and_binary_round_trip(vals in prop::collection::vec(-1e3f64..1e3, 6), atom in 0.0f64..1.0) {
            let g = XGrid::symmetric(1.0, 1.0).unwrap();
            let d = GridDensity { x: g, t_grid: vec![0.0, 0.25], values: vals, atom_mass: vec![0.0, atom] };
            prop_assert_eq!(&GridDensity::read_csv(d.to_csv().as_bytes()).unwrap(), &d);
            let mut buf = Vec::new();
            d.write_binary(&mut buf).unwrap();
            prop_assert_eq!(&GridDensity::read_binary(buf.as_slice()).unwrap(), &d);
        }

        #[test]
        fn scaled_density_is_self_similar(x in -3.0f64..3.0, s in 0.2f64..5.0) {
            // p(x, s) = s^(-alpha/2) p(x s^(-alpha/2), 1) for Brownian A.
            let law = reference_law_half();
            let k = s.powf(-0.25);
            let lhs = law.density(x, s);
            let rhs = k * law.density(x * k, 1.0);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1e-300));
        }
    }

    fn reference_law_half() -> &'static ReferenceLaw {
        static LAW: std::sync::OnceLock<ReferenceLaw> = std::sync::OnceLock::new();
        LAW.get_or_init(|| ReferenceLaw::new(bm(), half()).unwrap())
    }
}
