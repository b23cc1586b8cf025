//! Benchmark problems, synthetic fitting and verification data, relative
//! Gaussian noise and the "data hole" reduction.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exprtree::{BinaryOp, Expression, FunctionSet, Node, UnaryOp};
use crate::rng::derive_seed;

/// Universal gas constant in J/(mol·K).
pub const R_GAS: f64 = 8.314462618;
/// Van der Waals attraction parameter for methanol.
pub const VDW_A: f64 = 0.9649;
/// Van der Waals co-volume for methanol.
pub const VDW_B: f64 = 6.702e-5;
pub const MAGMAN_ALPHA: f64 = 5.25;
pub const MAGMAN_BETA: f64 = 1.75;

/// Saturation isotherms and their phase-boundary states (boiling, dew).
pub const VDW_T1: f64 = 300.0;
pub const VDW_T2: f64 = 400.0;
pub const VDW_P1: f64 = 594598.2419252641;
pub const VDW_P2: f64 = 2.7042458049626728e6;
pub const VDW_V1_BOILING: f64 = 8.609384005897035e-5;
pub const VDW_V1_DEW: f64 = 0.003847602071128293;
pub const VDW_V2_BOILING: f64 = 0.00010159726806190158;
pub const VDW_V2_DEW: f64 = 0.0009466121805725504;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemId {
    Gaussian,
    Magman,
    Vdw,
}

impl ProblemId {
    pub const ALL: [ProblemId; 3] = [Self::Gaussian, Self::Magman, Self::Vdw];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Gaussian => "gaussian",
            Self::Magman => "magman",
            Self::Vdw => "vdw",
        }
    }

    pub fn code(self) -> u64 {
        match self {
            Self::Gaussian => 1,
            Self::Magman => 2,
            Self::Vdw => 3,
        }
    }

    pub fn spec(self) -> ProblemSpec {
        match self {
            Self::Gaussian => ProblemSpec::gaussian(),
            Self::Magman => ProblemSpec::magman(),
            Self::Vdw => ProblemSpec::vdw(),
        }
    }
}

impl fmt::Display for ProblemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProblemId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" => Ok(Self::Gaussian),
            "magman" => Ok(Self::Magman),
            "vdw" | "vanderwaals" => Ok(Self::Vdw),
            _ => Err(Error::Config(format!("unknown problem `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Gas,
    Liquid,
    Supercritical,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Gas => "gas",
            Phase::Liquid => "liquid",
            Phase::Supercritical => "supercritical",
        })
    }
}

/// Where a row came from; used by the noise exemption and the
/// liquid-only reduction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowGroup {
    Random,
    Gas,
    Liquid,
    Supercritical,
    Transition,
}

impl From<Phase> for RowGroup {
    fn from(p: Phase) -> Self {
        match p {
            Phase::Gas => RowGroup::Gas,
            Phase::Liquid => RowGroup::Liquid,
            Phase::Supercritical => RowGroup::Supercritical,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Which {
    Fit,
    Verify,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub problem: Option<ProblemId>,
    pub which: Option<Which>,
    pub seed: u64,
    pub noise: f64,
    pub keep: Option<usize>,
    pub groups: Vec<RowGroup>,
}

/// Rows of independent variables with targets and relative fit weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    var_names: Vec<String>,
    x: Vec<f64>,
    y: Vec<f64>,
    weights: Vec<f64>,
    meta: DatasetMeta,
}

impl Dataset {
    /// Builds a dataset with weights `1 / y_i`. Every row is tagged
    /// [`RowGroup::Random`] unless `meta.groups` already lists one tag per row.
    pub fn new(var_names: Vec<String>, rows: Vec<Vec<f64>>, y: Vec<f64>, mut meta: DatasetMeta) -> Result<Self> {
        let d = var_names.len();
        if rows.is_empty() {
            return Err(Error::Dataset("no rows".into()));
        }
        if rows.len() != y.len() {
            return Err(Error::Dataset(format!("{} rows but {} targets", rows.len(), y.len())));
        }
        if let Some(bad) = rows.iter().position(|r| r.len() != d) {
            return Err(Error::Dataset(format!("row {bad} does not have {d} columns")));
        }
        if let Some(i) = y.iter().position(|&t| t == 0.0 || !t.is_finite()) {
            return Err(Error::Dataset(format!("target {i} is zero or not finite")));
        }
        if meta.groups.len() != y.len() {
            meta.groups = vec![RowGroup::Random; y.len()];
        }
        let weights = y.iter().map(|t| 1.0 / t).collect();
        Ok(Self {
            var_names,
            x: rows.into_iter().flatten().collect(),
            y,
            weights,
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_vars(&self) -> usize {
        self.var_names.len()
    }

    pub fn var_names(&self) -> &[String] {
        &self.var_names
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.n_vars();
        &self.x[i * d..(i + 1) * d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.x.chunks_exact(self.n_vars())
    }

    pub fn targets(&self) -> &[f64] {
        &self.y
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn groups(&self) -> &[RowGroup] {
        &self.meta.groups
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    fn select(&self, keep: &[usize]) -> Dataset {
        let d = self.n_vars();
        let mut x = Vec::with_capacity(keep.len() * d);
        for &i in keep {
            x.extend_from_slice(self.row(i));
        }
        let mut meta = self.meta.clone();
        meta.groups = keep.iter().map(|&i| self.meta.groups[i]).collect();
        Dataset {
            var_names: self.var_names.clone(),
            x,
            y: keep.iter().map(|&i| self.y[i]).collect(),
            weights: keep.iter().map(|&i| self.weights[i]).collect(),
            meta,
        }
    }

    /// Order-sensitive hash over every bit of the data; used to check that
    /// verification never touches the fitting set.
    pub fn fingerprint(&self) -> u64 {
        let bits = self
            .x
            .iter()
            .chain(&self.y)
            .chain(&self.weights)
            .map(|v| v.to_bits())
            .collect::<Vec<_>>();
        derive_seed(&bits)
    }

    /// Writes `<stem>.csv` (header of variable names then `target`) and a
    /// `<stem>.meta.json` sidecar. Returns the CSV path.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let path = dir.join(format!("{stem}.csv"));
        let mut w = csv::Writer::from_path(&path)?;
        let mut header = self.var_names.clone();
        header.push("target".into());
        w.write_record(&header)?;
        for (row, t) in self.rows().zip(&self.y) {
            let rec: Vec<String> = row.iter().chain(std::iter::once(t)).map(|v| format!("{v:.16e}")).collect();
            w.write_record(&rec)?;
        }
        w.flush()?;
        fs::write(dir.join(format!("{stem}.meta.json")), serde_json::to_string_pretty(&self.meta)?)?;
        Ok(path)
    }

    pub fn load(csv_path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(csv_path)?;
        let header = r.headers()?.clone();
        let d = header.len().saturating_sub(1);
        if header.get(d) != Some("target") {
            return Err(Error::Dataset("last CSV column must be `target`".into()));
        }
        let var_names = header.iter().take(d).map(String::from).collect();
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let vals = rec
                .iter()
                .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Dataset(e.to_string())))
                .collect::<Result<Vec<_>>>()?;
            y.push(vals[d]);
            rows.push(vals[..d].to_vec());
        }
        let meta_path = csv_path.with_extension("meta.json");
        let meta = match fs::read_to_string(&meta_path) {
            Ok(s) => serde_json::from_str(&s)?,
            Err(_) => DatasetMeta::default(),
        };
        Dataset::new(var_names, rows, y, meta)
    }
}

/// Equidistant (T, p) grid inside one phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseGrid {
    pub phase: Phase,
    pub temperature: (f64, f64),
    pub pressure: (f64, f64),
    pub n_temperature: usize,
    pub n_pressure: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Sampling {
    /// Independent uniform draws per variable.
    Uniform { ranges: Vec<(f64, f64)>, count: usize },
    /// Van der Waals grids in (T, p), stored as (T, v) rows.
    VdwGrids { grids: Vec<PhaseGrid>, transition_points: bool },
}

impl Sampling {
    pub fn count(&self) -> usize {
        match self {
            Sampling::Uniform { count, .. } => *count,
            Sampling::VdwGrids { grids, transition_points } => {
                grids.iter().map(|g| g.n_temperature * g.n_pressure).sum::<usize>()
                    + if *transition_points { 4 } else { 0 }
            }
        }
    }
}

/// One benchmark problem: ground truth, sampling plans and operator set.
#[derive(Clone, Debug)]
pub struct ProblemSpec {
    pub id: ProblemId,
    pub var_names: Vec<String>,
    pub truth: Expression,
    pub truth_params: Vec<f64>,
    pub fit: Sampling,
    pub verify: Sampling,
    pub function_set: FunctionSet,
}

impl ProblemSpec {
    /// `exp(p0 · (θ/σ)²) / (p1 · σ)` with p0 = −1/2 and p1 = √(2π).
    pub fn gaussian() -> Self {
        let theta = Node::Var(0);
        let sigma = Node::Var(1);
        let truth = Expression::new(Node::binary(
            BinaryOp::Div,
            Node::unary(
                UnaryOp::Exp,
                Node::binary(
                    BinaryOp::Mul,
                    Node::Param(0),
                    Node::unary(UnaryOp::Pow2, Node::binary(BinaryOp::Div, theta, sigma.clone())),
                ),
            ),
            Node::binary(BinaryOp::Mul, Node::Param(1), sigma),
        ));
        Self {
            id: ProblemId::Gaussian,
            var_names: vec!["theta".into(), "sigma".into()],
            truth,
            truth_params: vec![-0.5, (2.0 * std::f64::consts::PI).sqrt()],
            fit: Sampling::Uniform { ranges: vec![(-5.0, 5.0), (0.5, 3.0)], count: 100 },
            verify: Sampling::Uniform { ranges: vec![(-10.0, 10.0), (0.5, 5.0)], count: 500 },
            function_set: FunctionSet::parse(&["+", "-", "*", "/", "^", "exp", "pow2", "sqrt"])
                .expect("static function set"),
        }
    }

    /// `α · x · I / (x² + β)³`.
    pub fn magman() -> Self {
        let truth = Expression::new(Node::binary(
            BinaryOp::Div,
            Node::binary(
                BinaryOp::Mul,
                Node::binary(BinaryOp::Mul, Node::Param(0), Node::Var(0)),
                Node::Var(1),
            ),
            Node::unary(
                UnaryOp::Pow3,
                Node::binary(BinaryOp::Add, Node::unary(UnaryOp::Pow2, Node::Var(0)), Node::Param(1)),
            ),
        ));
        Self {
            id: ProblemId::Magman,
            var_names: vec!["x".into(), "current".into()],
            truth,
            truth_params: vec![MAGMAN_ALPHA, MAGMAN_BETA],
            fit: Sampling::Uniform { ranges: vec![(-3.0, 3.0), (0.1, 0.8)], count: 100 },
            verify: Sampling::Uniform { ranges: vec![(-6.0, 6.0), (0.1, 1.6)], count: 500 },
            function_set: FunctionSet::parse(&["+", "-", "*", "/", "^", "pow2", "pow3"])
                .expect("static function set"),
        }
    }

    /// `R · T / (v − b) − a / v²` with R a fixed constant; parameters `[b, a]`.
    pub fn vdw() -> Self {
        Self {
            id: ProblemId::Vdw,
            var_names: vec!["temperature".into(), "volume".into()],
            truth: vdw_truth(),
            truth_params: vec![VDW_B, VDW_A],
            fit: Sampling::VdwGrids {
                grids: vec![
                    PhaseGrid {
                        phase: Phase::Gas,
                        temperature: (450.0, 500.0),
                        pressure: (0.05e6, 2e6),
                        n_temperature: 7,
                        n_pressure: 7,
                    },
                    PhaseGrid {
                        phase: Phase::Liquid,
                        temperature: (300.0, 400.0),
                        pressure: (6e6, 7e6),
                        n_temperature: 7,
                        n_pressure: 7,
                    },
                    PhaseGrid {
                        phase: Phase::Supercritical,
                        temperature: (550.0, 600.0),
                        pressure: (10e6, 11e6),
                        n_temperature: 9,
                        n_pressure: 5,
                    },
                ],
                transition_points: true,
            },
            verify: Sampling::VdwGrids {
                grids: vec![
                    PhaseGrid {
                        phase: Phase::Gas,
                        temperature: (440.0, 510.0),
                        pressure: (0.02e6, 2.2e6),
                        n_temperature: 10,
                        n_pressure: 10,
                    },
                    PhaseGrid {
                        phase: Phase::Liquid,
                        temperature: (290.0, 410.0),
                        pressure: (5.5e6, 7.5e6),
                        n_temperature: 10,
                        n_pressure: 10,
                    },
                    PhaseGrid {
                        phase: Phase::Supercritical,
                        temperature: (540.0, 610.0),
                        pressure: (9.5e6, 11.5e6),
                        n_temperature: 10,
                        n_pressure: 10,
                    },
                ],
                transition_points: false,
            },
            function_set: FunctionSet::parse(&["+", "-", "*", "/", "^", "pow2"]).expect("static function set"),
        }
    }

    pub fn truth_complexity(&self) -> usize {
        self.truth.complexity()
    }

    /// Search complexity cap: five above the ground truth.
    pub fn max_complexity(&self) -> usize {
        self.truth_complexity() + 5
    }

    pub fn n_vars(&self) -> usize {
        self.var_names.len()
    }

    pub fn sampling(&self, which: Which) -> &Sampling {
        match which {
            Which::Fit => &self.fit,
            Which::Verify => &self.verify,
        }
    }
}

fn vdw_truth() -> Expression {
    let t = Node::Var(0);
    let v = Node::Var(1);
    Expression::new(Node::binary(
        BinaryOp::Sub,
        Node::binary(
            BinaryOp::Div,
            Node::binary(BinaryOp::Mul, Node::Const(R_GAS), t),
            Node::binary(BinaryOp::Sub, v.clone(), Node::Param(0)),
        ),
        Node::binary(BinaryOp::Div, Node::Param(1), Node::unary(UnaryOp::Pow2, v)),
    ))
}

/// Van der Waals pressure at `(T, v)` for methanol.
pub fn vdw_pressure(temperature: f64, volume: f64) -> f64 {
    R_GAS * temperature / (volume - VDW_B) - VDW_A / (volume * volume)
}

/// The four phase-boundary states `(T, v)` with their pressures from the
/// ground-truth equation of state.
pub fn vdw_transition_states() -> [(f64, f64, f64); 4] {
    [
        (VDW_T1, VDW_V1_BOILING),
        (VDW_T1, VDW_V1_DEW),
        (VDW_T2, VDW_V2_BOILING),
        (VDW_T2, VDW_V2_DEW),
    ]
    .map(|(t, v)| (t, v, vdw_pressure(t, v)))
}

/// Real roots of `v³ + c2 v² + c1 v + c0`, ascending.
fn real_cubic_roots(c2: f64, c1: f64, c0: f64) -> Vec<f64> {
    let shift = c2 / 3.0;
    let p = c1 - c2 * c2 / 3.0;
    let q = 2.0 * c2 * c2 * c2 / 27.0 - c2 * c1 / 3.0 + c0;
    let disc = (q / 2.0).powi(2) + (p / 3.0).powi(3);
    let mut roots = if disc > 0.0 {
        let s = disc.sqrt();
        vec![(-q / 2.0 + s).cbrt() + (-q / 2.0 - s).cbrt() - shift]
    } else if p == 0.0 {
        vec![-shift]
    } else {
        let m = 2.0 * (-p / 3.0).sqrt();
        let arg = (3.0 * q / (p * m)).clamp(-1.0, 1.0);
        let theta = arg.acos() / 3.0;
        (0..3)
            .map(|k| m * (theta - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos() - shift)
            .collect()
    };
    roots.sort_by(f64::total_cmp);
    roots
}

/// Solves the Van der Waals equation for molar volume at given `(T, p)`,
/// choosing the root appropriate to `phase`.
pub fn vdw_solve_v(temperature: f64, pressure: f64, phase: Phase) -> Result<f64> {
    let fail = || Error::NoVolumeRoot {
        temperature,
        pressure,
        phase: phase.to_string(),
    };
    if !(temperature > 0.0 && pressure > 0.0) {
        return Err(fail());
    }
    let rt = R_GAS * temperature;
    let c2 = -(VDW_B + rt / pressure);
    let c1 = VDW_A / pressure;
    let c0 = -VDW_A * VDW_B / pressure;
    let polish = |mut v: f64| {
        for _ in 0..50 {
            let g = rt / (v - VDW_B) - VDW_A / (v * v) - pressure;
            let dg = -rt / (v - VDW_B).powi(2) + 2.0 * VDW_A / (v * v * v);
            let step = g / dg;
            if !step.is_finite() {
                break;
            }
            let next = v - step;
            if next <= VDW_B {
                break;
            }
            v = next;
            if step.abs() <= 1e-15 * v.abs() {
                break;
            }
        }
        v
    };
    let mut roots: Vec<f64> = real_cubic_roots(c2, c1, c0)
        .into_iter()
        .filter(|&v| v > VDW_B)
        .map(polish)
        .filter(|&v| v > VDW_B)
        .collect();
    roots.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs());
    let v = match phase {
        Phase::Gas => roots.last().copied(),
        Phase::Liquid => roots.first().copied(),
        Phase::Supercritical if roots.len() == 1 => Some(roots[0]),
        Phase::Supercritical => None,
    }
    .ok_or_else(fail)?;
    if ((vdw_pressure(temperature, v) - pressure) / pressure).abs() > 1e-9 {
        return Err(fail());
    }
    Ok(v)
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Samples the fitting or verification set of a problem. Targets come from
/// the ground truth without noise.
pub fn generate(problem: &ProblemSpec, which: Which, seed: u64) -> Result<Dataset> {
    let mut rows = Vec::new();
    let mut groups = Vec::new();
    match problem.sampling(which) {
        Sampling::Uniform { ranges, count } => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, problem.id.code(), which as u64]));
            for _ in 0..*count {
                rows.push(ranges.iter().map(|&(lo, hi)| rng.random_range(lo..=hi)).collect::<Vec<_>>());
                groups.push(RowGroup::Random);
            }
        }
        Sampling::VdwGrids { grids, transition_points } => {
            for g in grids {
                for t in linspace(g.temperature.0, g.temperature.1, g.n_temperature) {
                    for p in linspace(g.pressure.0, g.pressure.1, g.n_pressure) {
                        rows.push(vec![t, vdw_solve_v(t, p, g.phase)?]);
                        groups.push(g.phase.into());
                    }
                }
            }
            if *transition_points {
                for (t, v, _) in vdw_transition_states() {
                    rows.push(vec![t, v]);
                    groups.push(RowGroup::Transition);
                }
            }
        }
    }
    let y = rows
        .iter()
        .map(|r| problem.truth.evaluate(r, &problem.truth_params))
        .collect();
    let meta = DatasetMeta {
        problem: Some(problem.id),
        which: Some(which),
        seed,
        noise: 0.0,
        keep: None,
        groups,
    };
    Dataset::new(problem.var_names.clone(), rows, y, meta)
}

/// Seed for the noise stream of one dataset.
pub fn noise_seed(master: u64, problem: ProblemId, level: f64) -> u64 {
    derive_seed(&[master, problem.code(), level.to_bits()])
}

/// `t ← t + t · N(0, 1) · level` per datum; phase-transition rows are exempt.
/// Weights are recomputed from the noisy targets.
pub fn apply_noise(data: &Dataset, level: f64, seed: u64) -> Dataset {
    let mut out = data.clone();
    out.meta.noise = level;
    if level == 0.0 {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (i, t) in out.y.iter_mut().enumerate() {
        let z: f64 = rng.sample(StandardNormal);
        if data.meta.groups[i] != RowGroup::Transition {
            *t += *t * z * level;
        }
    }
    out.weights = out.y.iter().map(|t| 1.0 / t).collect();
    out
}

/// Keeps the `keep` rows farthest from the normalized center of the inputs
/// (columns scaled by their maximum). Row order is preserved; ties are broken
/// by ascending row index.
pub fn reduce_data(data: &Dataset, keep: usize) -> Result<Dataset> {
    let n = data.len();
    if keep == 0 || keep > n {
        return Err(Error::Dataset(format!("keep = {keep} outside 1..={n}")));
    }
    let d = data.n_vars();
    let maxima: Vec<f64> = (0..d)
        .map(|j| data.rows().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    if let Some(j) = maxima.iter().position(|&m| m == 0.0) {
        return Err(Error::Dataset(format!("column {j} has maximum 0; cannot normalize")));
    }
    let norm: Vec<Vec<f64>> = data
        .rows()
        .map(|r| r.iter().zip(&maxima).map(|(x, m)| x / m).collect())
        .collect();
    let center: Vec<f64> = (0..d)
        .map(|j| norm.iter().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();
    let dist2: Vec<f64> = norm
        .iter()
        .map(|r| r.iter().zip(&center).map(|(x, c)| (x - c).powi(2)).sum())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| dist2[b].total_cmp(&dist2[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = order[..keep].to_vec();
    kept.sort_unstable();
    let mut out = data.select(&kept);
    out.meta.keep = Some(keep);
    Ok(out)
}

/// Liquid-grid rows plus the phase-transition rows.
pub fn liquid_only(data: &Dataset) -> Dataset {
    let kept: Vec<usize> = (0..data.len())
        .filter(|&i| matches!(data.meta.groups[i], RowGroup::Liquid | RowGroup::Transition))
        .collect();
    let mut out = data.select(&kept);
    out.meta.keep = Some(kept.len());
    out
}
