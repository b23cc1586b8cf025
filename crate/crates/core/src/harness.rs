//! Experiment orchestration: single searches with periodic verification,
//! seeded grids of repeated runs, and the two-proportion z-test.

use std::collections::HashSet;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::constraints::{MagmanSenses, ShapeConstraints};
use crate::datasets::{
    apply_noise, generate, liquid_only, noise_seed, reduce_data, Dataset, ProblemId, ProblemSpec, Which,
};
use crate::error::{Error, Result};
use crate::evolution::{Engine, EvolutionConfig, GenerationStats, HofEntry, Individual, TreeLimits};
use crate::exprtree::Expression;
use crate::fitting::{fit_lm, FitConfig, FitProblem, Variant};
use crate::rng::derive_seed;

/// Relative error below which a verification refit counts as a recovery.
pub const SUCCESS_MARE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    /// Runs until the time limit.
    WallClock,
    /// Runs a fixed number of generations (still capped by the time limit).
    Generations(u64),
}

impl FromStr for Budget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("wallclock") {
            return Ok(Budget::WallClock);
        }
        s.strip_prefix("generations:")
            .and_then(|n| n.trim().parse().ok())
            .map(Budget::Generations)
            .ok_or_else(|| Error::Config(format!("budget `{s}` is neither `wallclock` nor `generations:<n>`")))
    }
}

impl fmt::Display for Budget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Budget::WallClock => f.write_str("wallclock"),
            Budget::Generations(n) => write!(f, "generations:{n}"),
        }
    }
}

/// Search settings named after the configuration keys of the reference
/// implementation, plus the engine knobs it leaves unstated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSettings {
    /// Time limit in seconds.
    pub t_lim: f64,
    pub pop_size: usize,
    pub pow_abs_param: bool,
    /// Rounding threshold for parameters near 0 or 1; 0 disables.
    pub always_drastic_simplify: f64,
    pub max_iter: usize,
    pub constr_penalty_factor: f64,
    /// Absolute stage-two gate; defaults to the noise level plus `mare_margin`.
    pub max_mare_for_constr_fit: Option<f64>,
    pub mare_margin: f64,
    pub stage_one_iter: usize,
    pub newton_iter: usize,
    /// Weight of the squared ℓ1 regularizer during search fits.
    pub lambda: f64,
    /// Complexity cap above the ground truth.
    pub complexity_slack: usize,
    pub init_depth: usize,
    pub crossover_prob: f64,
    pub fitness_fraction: f64,
    /// Seconds between verifications in wall-clock mode.
    pub verify_every_secs: f64,
    /// Generations between verifications in generation mode.
    pub verify_every_generations: u64,
    pub magman_senses: MagmanSenses,
}

impl Default for SearchSettings {
    fn default() -> Self {
        let fit = FitConfig::default();
        Self {
            t_lim: 600.0,
            pop_size: 500,
            pow_abs_param: true,
            always_drastic_simplify: 1e-7,
            max_iter: fit.max_iter,
            constr_penalty_factor: fit.constr_penalty_factor,
            max_mare_for_constr_fit: None,
            mare_margin: fit.mare_margin,
            stage_one_iter: fit.stage_one_iter,
            newton_iter: fit.newton_iter,
            lambda: fit.lambda,
            complexity_slack: 5,
            init_depth: 4,
            crossover_prob: 0.5,
            fitness_fraction: 0.2,
            verify_every_secs: 5.0,
            verify_every_generations: 1,
            magman_senses: MagmanSenses::GroundTruth,
        }
    }
}

impl SearchSettings {
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Self = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_lim > 0.0) {
            return Err(Error::Config("t_lim must be positive".into()));
        }
        if self.pop_size == 0 {
            return Err(Error::Config("pop_size must be positive".into()));
        }
        if !(self.verify_every_secs > 0.0) || self.verify_every_generations == 0 {
            return Err(Error::Config("verification cadence must be positive".into()));
        }
        if self.constr_penalty_factor < 0.0 || self.lambda < 0.0 {
            return Err(Error::Config("penalty weights must be nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.fitness_fraction) || !(0.0..=1.0).contains(&self.crossover_prob) {
            return Err(Error::Config("fractions must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            max_iter: self.max_iter,
            stage_one_iter: self.stage_one_iter,
            newton_iter: self.newton_iter,
            constr_penalty_factor: self.constr_penalty_factor,
            mare_margin: self.mare_margin,
            max_mare_for_constr_fit: self.max_mare_for_constr_fit,
            lambda: self.lambda,
        }
    }
}

/// One search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub problem: ProblemId,
    pub variant: Variant,
    pub noise: f64,
    /// Rows kept by the data-hole reduction; `None` keeps all.
    pub keep: Option<usize>,
    /// Restricts VdW fit data to the liquid rows.
    pub liquid_only: bool,
    pub seed: u64,
    pub budget: Budget,
    pub settings: SearchSettings,
}

impl RunConfig {
    pub fn new(problem: ProblemId, variant: Variant, noise: f64, seed: u64) -> Self {
        Self {
            problem,
            variant,
            noise,
            keep: None,
            liquid_only: false,
            seed,
            budget: Budget::WallClock,
            settings: SearchSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.settings.validate()?;
        if !(self.noise >= 0.0) {
            return Err(Error::Config("noise level must be nonnegative".into()));
        }
        if self.keep == Some(0) {
            return Err(Error::Config("keep must be positive".into()));
        }
        Ok(())
    }
}

/// Fit data, verification data and constraints of one run.
#[derive(Clone, Debug)]
pub struct RunInputs {
    pub spec: ProblemSpec,
    pub fit: Dataset,
    pub verify: Dataset,
    pub constraints: ShapeConstraints,
}

impl RunInputs {
    pub fn build(cfg: &RunConfig) -> Result<Self> {
        let spec = cfg.problem.spec();
        let clean = generate(&spec, Which::Fit, derive_seed(&[cfg.seed, 1]))?;
        let mut fit = apply_noise(&clean, cfg.noise, noise_seed(cfg.seed, cfg.problem, cfg.noise));
        if cfg.liquid_only {
            fit = liquid_only(&fit);
        }
        if let Some(keep) = cfg.keep {
            fit = reduce_data(&fit, keep)?;
        }
        let verify = generate(&spec, Which::Verify, derive_seed(&[cfg.seed, 2]))?;
        let constraints =
            ShapeConstraints::for_problem(cfg.problem, cfg.settings.magman_senses, derive_seed(&[cfg.seed, 3]));
        Ok(Self { spec, fit, verify, constraints })
    }
}

/// The verified expression of a successful run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Winner {
    pub canonical: String,
    pub structure: String,
    pub params: Vec<f64>,
    pub complexity: usize,
    pub fit_mare: f64,
    pub verification_mare: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config: RunConfig,
    pub success: bool,
    /// Seconds from start to the successful verification.
    pub time_to_success: Option<f64>,
    pub elapsed: f64,
    pub generations: u64,
    pub verifications: usize,
    pub winner: Option<Winner>,
    pub hall_of_fame: Vec<HofEntry>,
}

impl RunResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Moments at which an [`Observer`] sees the search.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    BeforeVerification,
    AfterVerification,
}

/// Hooks into a running search. All methods default to doing nothing.
pub trait Observer {
    fn generation(&mut self, _stats: &GenerationStats) {}
    fn verification(&mut self, _phase: Phase, _fit_data: &Dataset, _population: &[Individual]) {}
}

impl Observer for () {}

/// Appends one JSON object per generation to a file.
pub struct JsonlLog {
    out: BufWriter<File>,
}

impl JsonlLog {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self { out: BufWriter::new(File::create(path)?) })
    }
}

impl Observer for JsonlLog {
    fn generation(&mut self, stats: &GenerationStats) {
        if let Ok(line) = serde_json::to_string(stats) {
            let _ = writeln!(self.out, "{line}");
        }
    }
}

/// A prepared search that can be seeded with known expressions before it
/// runs.
pub struct Search<'a> {
    cfg: RunConfig,
    inputs: &'a RunInputs,
    engine: Engine<'a>,
    started: Instant,
    verified: HashSet<String>,
    verifications: usize,
}

impl<'a> Search<'a> {
    pub fn new(cfg: RunConfig, inputs: &'a RunInputs) -> Result<Self> {
        cfg.validate()?;
        let started = Instant::now();
        let s = &cfg.settings;
        let evo = EvolutionConfig {
            variant: cfg.variant,
            pop_size: s.pop_size,
            limits: TreeLimits {
                functions: inputs.spec.function_set.clone(),
                n_vars: inputs.spec.n_vars(),
                max_complexity: inputs.spec.truth_complexity() + s.complexity_slack,
                pow_abs_param: s.pow_abs_param,
            },
            init_depth: s.init_depth,
            crossover_prob: s.crossover_prob,
            fitness_fraction: s.fitness_fraction,
            drastic_simplify: s.always_drastic_simplify,
            noise: cfg.noise,
            fit: s.fit_config(),
        };
        let engine = Engine::new(evo, &inputs.fit, &inputs.constraints, derive_seed(&[cfg.seed, 4]));
        Ok(Self {
            cfg,
            inputs,
            engine,
            started,
            verified: HashSet::new(),
            verifications: 0,
        })
    }

    pub fn engine(&self) -> &Engine<'a> {
        &self.engine
    }

    /// Adds an expression to the population and hall of fame.
    pub fn plant(&mut self, expr: &Expression, p0: &[f64]) {
        self.engine.plant(expr, p0);
    }

    /// Refits eligible hall-of-fame members on the verification data. Nothing
    /// computed here is written back into the engine.
    fn verify(&mut self, observer: &mut dyn Observer) -> Option<Winner> {
        observer.verification(Phase::BeforeVerification, self.engine.data(), self.engine.population());
        self.verifications += 1;
        let gate = self.cfg.noise + self.cfg.settings.mare_margin;
        let cap = self.engine.config().limits.max_complexity;
        let mut best: Option<Winner> = None;
        for m in &self.engine.hall_of_fame().members {
            if !(m.mare() <= gate) || m.expr.complexity() > cap || self.verified.contains(&m.canonical) {
                continue;
            }
            self.verified.insert(m.canonical.clone());
            let prob = FitProblem::new(&m.expr, &self.inputs.verify).with_lambda(0.0);
            let r = fit_lm(&prob, &m.params, self.cfg.settings.max_iter);
            if !r.failed && r.mare < SUCCESS_MARE && best.as_ref().is_none_or(|b| r.mare < b.verification_mare) {
                best = Some(Winner {
                    canonical: m.expr.canonical(&r.params),
                    structure: m.text.clone(),
                    params: r.params,
                    complexity: m.expr.complexity(),
                    fit_mare: m.mare(),
                    verification_mare: r.mare,
                });
            }
        }
        observer.verification(Phase::AfterVerification, self.engine.data(), self.engine.population());
        best
    }

    pub fn run(mut self, observer: &mut dyn Observer) -> RunResult {
        let limit = self.cfg.settings.t_lim;
        let mut last_check = self.started.elapsed().as_secs_f64();
        let mut winner = self.verify(observer);
        while winner.is_none() {
            let elapsed = self.started.elapsed().as_secs_f64();
            let done = match self.cfg.budget {
                Budget::WallClock => elapsed >= limit,
                Budget::Generations(n) => self.engine.generation() >= n || elapsed >= limit,
            };
            if done {
                break;
            }
            let stats = self.engine.step();
            observer.generation(&stats);
            let elapsed = self.started.elapsed().as_secs_f64();
            let due = match self.cfg.budget {
                Budget::WallClock => elapsed - last_check >= self.cfg.settings.verify_every_secs || elapsed >= limit,
                Budget::Generations(n) => {
                    let g = self.engine.generation();
                    g.is_multiple_of(self.cfg.settings.verify_every_generations) || g >= n
                }
            };
            if due {
                last_check = elapsed;
                winner = self.verify(observer);
            }
        }
        let elapsed = self.started.elapsed().as_secs_f64();
        RunResult {
            success: winner.is_some(),
            time_to_success: winner.as_ref().map(|_| elapsed),
            elapsed,
            generations: self.engine.generation(),
            verifications: self.verifications,
            winner,
            hall_of_fame: self.engine.hall_of_fame().members.clone(),
            config: self.cfg,
        }
    }
}

/// Builds the inputs and runs one search.
pub fn run_search(cfg: &RunConfig, observer: &mut dyn Observer) -> Result<RunResult> {
    let inputs = RunInputs::build(cfg)?;
    Ok(Search::new(cfg.clone(), &inputs)?.run(observer))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Keep {
    All(AllRows),
    Rows(usize),
}

/// Marker for `keep = "all"`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AllRows {
    All,
}

impl Keep {
    pub fn rows(self) -> Option<usize> {
        match self {
            Keep::All(_) => None,
            Keep::Rows(n) => Some(n),
        }
    }
}

impl fmt::Display for Keep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Keep::All(_) => f.write_str("all"),
            Keep::Rows(n) => write!(f, "{n}"),
        }
    }
}

fn default_keep() -> Vec<Keep> {
    vec![Keep::All(AllRows::All)]
}

fn default_budget() -> String {
    "wallclock".into()
}

/// Cross product of problems, variants, noise levels and data sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub master_seed: u64,
    pub repetitions: usize,
    pub problems: Vec<ProblemId>,
    pub variants: Vec<Variant>,
    pub noise: Vec<f64>,
    #[serde(default = "default_keep")]
    pub keep: Vec<Keep>,
    #[serde(default)]
    pub liquid_only: bool,
    #[serde(default = "default_budget")]
    pub budget: String,
    #[serde(default)]
    pub settings: SearchSettings,
}

impl GridSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let g: Self = toml::from_str(text)?;
        g.budget()?;
        g.settings.validate()?;
        Ok(g)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn budget(&self) -> Result<Budget> {
        self.budget.parse()
    }

    /// Seed of one repetition. The variant is left out so that all
    /// variants of a cell see the same data and constraint points.
    pub fn run_seed(&self, problem: ProblemId, noise: f64, keep: Keep, rep: usize) -> u64 {
        derive_seed(&[
            self.master_seed,
            problem.code(),
            noise.to_bits(),
            keep.rows().map_or(u64::MAX, |k| k as u64),
            rep as u64,
        ])
    }

    pub fn cells(&self) -> Vec<(ProblemId, Variant, f64, Keep)> {
        let mut out = Vec::new();
        for &problem in &self.problems {
            for &noise in &self.noise {
                for &keep in &self.keep {
                    for &variant in &self.variants {
                        out.push((problem, variant, noise, keep));
                    }
                }
            }
        }
        out
    }
}

/// One row of the grid table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub problem: ProblemId,
    pub variant: Variant,
    pub noise: f64,
    pub keep: String,
    pub repetitions: usize,
    pub successes: usize,
    pub mean_time_to_success: Option<f64>,
    /// Runs that ended in an error instead of a result.
    #[serde(skip)]
    pub errors: usize,
}

/// Per-run record written next to the grid table.
#[derive(Serialize)]
struct RunRecord<'a> {
    repetition: usize,
    result: Option<&'a RunResult>,
    error: Option<String>,
}

/// Runs every cell of the grid and writes `results.csv` plus one JSON file
/// per run into `out`. Failing runs are recorded, not propagated.
pub fn run_grid(grid: &GridSpec, out: &Path) -> Result<Vec<CellSummary>> {
    let budget = grid.budget()?;
    fs::create_dir_all(out)?;
    let runs_dir = out.join("runs");
    fs::create_dir_all(&runs_dir)?;
    let mut table = Vec::new();
    if grid.repetitions == 0 {
        write_table(&out.join("results.csv"), &table)?;
        return Ok(table);
    }
    for (problem, variant, noise, keep) in grid.cells() {
        let mut successes = 0;
        let mut errors = 0;
        let mut times = Vec::new();
        for rep in 0..grid.repetitions {
            let cfg = RunConfig {
                problem,
                variant,
                noise,
                keep: keep.rows(),
                liquid_only: grid.liquid_only,
                seed: grid.run_seed(problem, noise, keep, rep),
                budget,
                settings: grid.settings.clone(),
            };
            let outcome = run_search(&cfg, &mut ());
            let record = match &outcome {
                Ok(r) => {
                    if r.success {
                        successes += 1;
                        times.extend(r.time_to_success);
                    }
                    RunRecord { repetition: rep, result: Some(r), error: None }
                }
                Err(e) => {
                    errors += 1;
                    RunRecord { repetition: rep, result: None, error: Some(e.to_string()) }
                }
            };
            let name = format!("{problem}_{variant}_noise{noise}_keep{keep}_rep{rep}.json");
            fs::write(runs_dir.join(name), serde_json::to_string_pretty(&record)?)?;
        }
        let mean = (!times.is_empty()).then(|| times.iter().sum::<f64>() / times.len() as f64);
        table.push(CellSummary {
            problem,
            variant,
            noise,
            keep: keep.to_string(),
            repetitions: grid.repetitions,
            successes,
            mean_time_to_success: mean,
            errors,
        });
        write_table(&out.join("results.csv"), &table)?;
    }
    Ok(table)
}

fn write_table(path: &PathBuf, rows: &[CellSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "problem",
        "variant",
        "noise",
        "keep",
        "repetitions",
        "successes",
        "mean_time_to_success",
    ])?;
    for r in rows {
        w.write_record([
            r.problem.to_string(),
            r.variant.to_string(),
            r.noise.to_string(),
            r.keep.clone(),
            r.repetitions.to_string(),
            r.successes.to_string(),
            r.mean_time_to_success.map_or(String::new(), |t| format!("{t:.3}")),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZTest {
    pub z: f64,
    pub p_value: f64,
    pub significant: bool,
}

/// Two-sided pooled two-proportion z-test at level `alpha`. A pooled
/// proportion of 0 or 1 has no variance and yields `z = 0`.
pub fn z_test(s1: u64, n1: u64, s2: u64, n2: u64, alpha: f64) -> Result<ZTest> {
    if n1 == 0 || n2 == 0 || s1 > n1 || s2 > n2 {
        return Err(Error::Config(format!("invalid proportions {s1}/{n1} and {s2}/{n2}")));
    }
    let (p1, p2) = (s1 as f64 / n1 as f64, s2 as f64 / n2 as f64);
    let pooled = (s1 + s2) as f64 / (n1 + n2) as f64;
    let var = pooled * (1.0 - pooled) * (1.0 / n1 as f64 + 1.0 / n2 as f64);
    if var <= 0.0 {
        return Ok(ZTest { z: 0.0, p_value: 1.0, significant: false });
    }
    let z = (p1 - p2) / var.sqrt();
    let normal = Normal::standard();
    let p_value = 2.0 * normal.cdf(-z.abs());
    Ok(ZTest { z, p_value, significant: p_value < alpha })
}
