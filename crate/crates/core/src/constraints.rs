//! Shape constraints checked at finitely many frozen points, the squared
//! penalty that measures their violation, and the two-part Maxwell
//! equal-area constraint for the Van der Waals problem.

use std::path::Path;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{eval_row, partial_x_generic, Scalar};
use crate::datasets::{
    vdw_transition_states, ProblemId, VDW_P1, VDW_P2, VDW_T1, VDW_T2, VDW_V1_BOILING, VDW_V1_DEW,
    VDW_V2_BOILING, VDW_V2_DEW,
};
use crate::error::{Error, Result};
use crate::exprtree::Expression;
use crate::quadrature;
use crate::rng::stream;

const GAUSSIAN_TOML: &str = include_str!("../config/constraints/gaussian.toml");
const MAGMAN_TOML: &str = include_str!("../config/constraints/magman.toml");
const MAGMAN_AS_PRINTED_TOML: &str = include_str!("../config/constraints/magman_as_printed.toml");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Sampler {
    Uniform { range: [f64; 2] },
    /// Uniform in `log|x|`; both endpoints carry the same sign.
    Log { range: [f64; 2] },
    Fixed { values: Vec<f64> },
}

impl Sampler {
    fn bounds(range: [f64; 2]) -> (f64, f64) {
        (range[0].min(range[1]), range[0].max(range[1]))
    }

    fn validate(&self) -> Result<()> {
        match self {
            Sampler::Uniform { range } if range.iter().all(|v| v.is_finite()) => Ok(()),
            Sampler::Log { range } => {
                let (lo, hi) = Self::bounds(*range);
                if lo.is_finite() && hi.is_finite() && (lo > 0.0 || hi < 0.0) {
                    Ok(())
                } else {
                    Err(Error::Config(format!(
                        "logarithmic sampler [{lo}, {hi}] must not contain 0"
                    )))
                }
            }
            Sampler::Fixed { values } if !values.is_empty() => Ok(()),
            other => Err(Error::Config(format!("invalid sampler {other:?}"))),
        }
    }

    fn count(&self, per_var: usize) -> usize {
        match self {
            Sampler::Fixed { values } => values.len(),
            _ => per_var,
        }
    }

    fn draw(&self, per_var: usize, rng: &mut impl Rng) -> Vec<f64> {
        match self {
            Sampler::Uniform { range } => {
                let (lo, hi) = Self::bounds(*range);
                (0..per_var).map(|_| rng.random_range(lo..=hi)).collect()
            }
            Sampler::Log { range } => {
                let (lo, hi) = Self::bounds(*range);
                let sign = lo.signum();
                let (a, b) = (lo.abs().ln(), hi.abs().ln());
                let (a, b) = (a.min(b), a.max(b));
                (0..per_var)
                    .map(|_| sign * rng.random_range(a..=b).exp())
                    .collect()
            }
            Sampler::Fixed { values } => values.clone(),
        }
    }
}

/// What a constraint restricts: the model value or one input partial.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Value,
    Partial(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    #[serde(rename = ">=0")]
    NonNegative,
    #[serde(rename = "<=0")]
    NonPositive,
    #[serde(rename = "=0")]
    Zero,
}

impl Sense {
    pub fn flipped(self) -> Self {
        match self {
            Sense::NonNegative => Sense::NonPositive,
            Sense::NonPositive => Sense::NonNegative,
            Sense::Zero => Sense::Zero,
        }
    }

    /// Squared penalty of one canonicalized row (`g ≤ 0` or `h = 0`).
    /// The max(0, ·)² branch is one-sided at the boundary.
    #[inline]
    fn penalty<S: Scalar>(self, f: S) -> S {
        let g = match self {
            Sense::Zero => return f * f,
            Sense::NonPositive => f,
            Sense::NonNegative => -f,
        };
        if g.value() > 0.0 {
            g * g
        } else {
            S::zero()
        }
    }
}

fn default_per_var() -> usize {
    5
}

/// One declared shape constraint with its sampling plan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSpec {
    pub name: String,
    pub target: Target,
    pub sense: Sense,
    /// One sampler per input variable, in column order.
    pub samplers: Vec<Sampler>,
    #[serde(default = "default_per_var")]
    pub points_per_var: usize,
    /// How many points are drawn from the per-variable cross product.
    #[serde(default = "default_per_var")]
    pub pairs: usize,
}

impl ConstraintSpec {
    pub fn validate(&self) -> Result<()> {
        for s in &self.samplers {
            s.validate()?;
        }
        if let Target::Partial(j) = self.target {
            if j >= self.samplers.len() {
                return Err(Error::Config(format!(
                    "constraint `{}` differentiates w.r.t. variable {j} of {}",
                    self.name,
                    self.samplers.len()
                )));
            }
        }
        let combos: usize = self.samplers.iter().map(|s| s.count(self.points_per_var)).product();
        if self.pairs == 0 || self.pairs > combos {
            return Err(Error::Config(format!(
                "constraint `{}` draws {} points from {combos} combinations",
                self.name, self.pairs
            )));
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct ConstraintFile {
    #[serde(default)]
    constraint: Vec<ConstraintSpec>,
}

/// Parses `[[constraint]]` tables.
pub fn parse_specs(text: &str) -> Result<Vec<ConstraintSpec>> {
    let file: ConstraintFile = toml::from_str(text)?;
    for spec in &file.constraint {
        spec.validate()?;
    }
    Ok(file.constraint)
}

pub fn load_specs(path: &Path) -> Result<Vec<ConstraintSpec>> {
    parse_specs(&std::fs::read_to_string(path)?)
}

/// Sign convention for the magnetic manipulator tables.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MagmanSenses {
    /// Senses consistent with the positive-sign ground truth.
    #[default]
    GroundTruth,
    /// Senses as tabulated.
    AsPrinted,
}

/// Built-in constraint declarations for a benchmark problem.
pub fn builtin_specs(problem: ProblemId, senses: MagmanSenses) -> Vec<ConstraintSpec> {
    let text = match (problem, senses) {
        (ProblemId::Gaussian, _) => GAUSSIAN_TOML,
        (ProblemId::Magman, MagmanSenses::GroundTruth) => MAGMAN_TOML,
        (ProblemId::Magman, MagmanSenses::AsPrinted) => MAGMAN_AS_PRINTED_TOML,
        (ProblemId::Vdw, _) => return Vec::new(),
    };
    parse_specs(text).expect("built-in constraint file is valid")
}

/// Frozen evaluation points, one list per constraint.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalPoints {
    pub points: Vec<Vec<Vec<f64>>>,
}

impl EvalPoints {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn total(&self) -> usize {
        self.points.iter().map(Vec::len).sum()
    }
}

/// Samples each variable independently, then draws `pairs` distinct
/// combinations from their cross product.
pub fn sample_points(specs: &[ConstraintSpec], seed: u64) -> EvalPoints {
    let points = specs
        .iter()
        .enumerate()
        .map(|(k, spec)| {
            let mut rng = stream(&[seed, k as u64]);
            let axes: Vec<Vec<f64>> = spec
                .samplers
                .iter()
                .map(|s| s.draw(spec.points_per_var, &mut rng))
                .collect();
            let combos: usize = axes.iter().map(Vec::len).product();
            let mut picks = index::sample(&mut rng, combos, spec.pairs).into_vec();
            picks.sort_unstable();
            picks
                .into_iter()
                .map(|mut c| {
                    let mut point = Vec::with_capacity(axes.len());
                    for axis in axes.iter().rev() {
                        point.push(axis[c % axis.len()]);
                        c /= axis.len();
                    }
                    point.reverse();
                    point
                })
                .collect()
        })
        .collect();
    EvalPoints { points }
}

/// `Σ_k Σ_ℓ` squared penalties over all specs and their points. NaN when the
/// expression is undefined at any point.
pub fn violation_generic<S: Scalar>(
    expr: &Expression,
    p: &[S],
    specs: &[ConstraintSpec],
    points: &EvalPoints,
) -> S {
    let mut total = S::zero();
    for (spec, pts) in specs.iter().zip(&points.points) {
        for x in pts {
            let f = match spec.target {
                Target::Value => eval_row(expr, x, p),
                Target::Partial(j) => partial_x_generic(expr, x, p, j),
            };
            if f.value().is_nan() {
                return S::nan();
            }
            total = total + spec.sense.penalty(f);
        }
    }
    total
}

/// Penalty violation; `+∞` when the expression is undefined at any point.
pub fn violation(expr: &Expression, p: &[f64], points: &EvalPoints, specs: &[ConstraintSpec]) -> f64 {
    let v = violation_generic(expr, p, specs, points);
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

/// One saturation isotherm: pressure offset and integration bounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Isotherm {
    pub temperature: f64,
    pub pressure: f64,
    pub v_boiling: f64,
    pub v_dew: f64,
}

/// The Maxwell equal-area constraint on two isotherms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaxwellSpec {
    pub isotherms: [Isotherm; 2],
    /// `(T, v, p)` phase-boundary states for the cheap first part.
    pub states: [(f64, f64, f64); 4],
    /// Relative-error threshold below which the integrals are evaluated.
    pub gate: f64,
    pub dummy_penalty: f64,
    pub integral_divisor: f64,
    /// Column of the data matrix holding temperature and volume.
    pub temperature_var: usize,
    pub volume_var: usize,
    /// Absolute quadrature tolerance per isotherm as a fraction of
    /// `|p_i| · (v_dew − v_boiling)`.
    pub rel_tolerance: f64,
    pub max_intervals: usize,
}

impl MaxwellSpec {
    pub fn methanol() -> Self {
        Self {
            isotherms: [
                Isotherm {
                    temperature: VDW_T1,
                    pressure: VDW_P1,
                    v_boiling: VDW_V1_BOILING,
                    v_dew: VDW_V1_DEW,
                },
                Isotherm {
                    temperature: VDW_T2,
                    pressure: VDW_P2,
                    v_boiling: VDW_V2_BOILING,
                    v_dew: VDW_V2_DEW,
                },
            ],
            states: vdw_transition_states(),
            gate: 0.01,
            dummy_penalty: 1000.0,
            integral_divisor: 1000.0,
            temperature_var: 0,
            volume_var: 1,
            rel_tolerance: 1e-3,
            max_intervals: 200,
        }
    }

    fn row(&self, temperature: f64, volume: f64) -> [f64; 2] {
        let mut row = [0.0; 2];
        row[self.temperature_var] = temperature;
        row[self.volume_var] = volume;
        row
    }

    /// Mean absolute relative error of the model at the phase-boundary states.
    pub fn state_error<S: Scalar>(&self, expr: &Expression, p: &[S]) -> S {
        let mut sum = S::zero();
        for &(t, v, target) in &self.states {
            let m = eval_row(expr, &self.row(t, v), p);
            sum = sum + ((m - S::from_f64(target)) / S::from_f64(target)).abs();
        }
        sum / S::from_f64(self.states.len() as f64)
    }

    /// `∫ (m(T_i, v) − p_i) dv` over the two-phase interval, scaled down by
    /// the integral divisor.
    pub fn scaled_integrals<S: Scalar>(&self, expr: &Expression, p: &[S]) -> Result<[S; 2]> {
        let mut out = [S::zero(); 2];
        for (slot, iso) in out.iter_mut().zip(&self.isotherms) {
            let offset = S::from_f64(iso.pressure);
            let tol = self.rel_tolerance * iso.pressure.abs() * (iso.v_dew - iso.v_boiling);
            let integral = quadrature::integrate(
                |v| eval_row(expr, &self.row(iso.temperature, v), p) - offset,
                iso.v_boiling,
                iso.v_dew,
                tol,
                self.max_intervals,
            )?;
            *slot = integral.value / S::from_f64(self.integral_divisor);
        }
        Ok(out)
    }

    /// Two-part violation: `(MARE + dummy)²` while the state error is at or
    /// above the gate, otherwise `MARE² + Σ (I_i / divisor)²`. NaN when the
    /// model is undefined at a state or inside an integration interval.
    pub fn violation_generic<S: Scalar>(&self, expr: &Expression, p: &[S]) -> S {
        let mare = self.state_error(expr, p);
        if mare.value().is_nan() {
            return S::nan();
        }
        if mare.value() >= self.gate {
            let gated = mare + S::from_f64(self.dummy_penalty);
            return gated * gated;
        }
        match self.scaled_integrals(expr, p) {
            Ok(ints) => ints.iter().fold(mare * mare, |acc, &i| acc + i * i),
            Err(_) => S::nan(),
        }
    }
}

/// Maxwell violation; `+∞` where the model is undefined.
pub fn maxwell_violation(expr: &Expression, p: &[f64], spec: &MaxwellSpec) -> f64 {
    let v = spec.violation_generic(expr, p);
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

/// Everything the fitting step needs to penalize a candidate: declared
/// constraints with frozen points, plus an optional Maxwell criterion.
#[derive(Clone, Debug, Default)]
pub struct ShapeConstraints {
    pub specs: Vec<ConstraintSpec>,
    pub points: EvalPoints,
    pub maxwell: Option<MaxwellSpec>,
}

impl ShapeConstraints {
    pub fn new(specs: Vec<ConstraintSpec>, seed: u64, maxwell: Option<MaxwellSpec>) -> Self {
        let points = sample_points(&specs, seed);
        Self { specs, points, maxwell }
    }

    /// Constraints of a benchmark problem with points frozen from `seed`.
    pub fn for_problem(problem: ProblemId, senses: MagmanSenses, seed: u64) -> Self {
        let maxwell = (problem == ProblemId::Vdw).then(MaxwellSpec::methanol);
        Self::new(builtin_specs(problem, senses), seed, maxwell)
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty() && self.maxwell.is_none()
    }

    pub fn penalty<S: Scalar>(&self, expr: &Expression, p: &[S]) -> S {
        let mut total = violation_generic(expr, p, &self.specs, &self.points);
        if total.value().is_nan() {
            return total;
        }
        if let Some(m) = &self.maxwell {
            total = total + m.violation_generic(expr, p);
        }
        total
    }

    /// Total violation; `+∞` where the model is undefined.
    pub fn violation(&self, expr: &Expression, p: &[f64]) -> f64 {
        let v: f64 = self.penalty(expr, p);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }
}
