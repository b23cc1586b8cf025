//! Checkers shared by the property suites and the acceptance target. Each
//! takes a case seed and reports `Skip` when the generated case is outside
//! the checker's domain (for example an undefined model value).

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use shapesr::autodiff::{grad_p, partial_x};
use shapesr::constraints::{MagmanSenses, ShapeConstraints};
use shapesr::datasets::{apply_noise, generate, reduce_data, Dataset, DatasetMeta, ProblemId, ProblemSpec, Which};
use shapesr::evolution::{dominates, non_dominated_sort, random_tree, TreeLimits};
use shapesr::exprtree::{Expression, FunctionSet};
use shapesr::fitting::{fit_lm, fit_penalty_newton, FitProblem};
use shapesr::harness::{Budget, Observer, Phase, RunConfig, RunInputs, Search};
use shapesr::evolution::Individual;
use shapesr::fitting::Variant;

#[derive(Debug, PartialEq)]
pub enum Outcome {
    Pass,
    Skip,
    Fail(String),
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn all_ops_limits(max_complexity: usize) -> TreeLimits {
    TreeLimits {
        functions: FunctionSet::parse(&["+", "-", "*", "/", "^", "exp", "sqrt", "pow2", "pow3"]).unwrap(),
        n_vars: 2,
        max_complexity,
        pow_abs_param: true,
    }
}

pub fn problem_limits(spec: &ProblemSpec, slack: usize) -> TreeLimits {
    TreeLimits {
        functions: spec.function_set.clone(),
        n_vars: spec.n_vars(),
        max_complexity: spec.truth_complexity() + slack,
        pow_abs_param: true,
    }
}

/// Central difference refined by one Richardson step, plus the spread
/// between the two step sizes as a conditioning estimate.
fn richardson(f: impl Fn(f64) -> f64, x: f64) -> (f64, f64) {
    let h = 1e-3 * x.abs().max(1.0);
    let d = |h: f64| (f(x + h) - f(x - h)) / (2.0 * h);
    let (d1, d2) = (d(h), d(h / 2.0));
    ((4.0 * d2 - d1) / 3.0, (d2 - d1).abs())
}

fn close(ad: f64, fd: f64, scale: f64) -> bool {
    (ad - fd).abs() <= 1e-5 * ad.abs().max(fd.abs()) + 1e-9 * scale
}

/// Parameter gradient and variable partials of a random tree against
/// finite differences.
pub fn ad_vs_fd(seed: u64) -> Outcome {
    let mut r = rng(seed);
    let (expr, p) = random_tree(&all_ops_limits(15), 4, &mut r);
    let row = [r.random_range(0.5..2.0), r.random_range(0.5..2.0)];
    let f0 = expr.evaluate(&row, &p);
    if !f0.is_finite() || f0.abs() > 1e6 {
        return Outcome::Skip;
    }
    let scale = f0.abs().max(1.0);
    let g = grad_p(&expr, &row, &p);
    let mut checks = Vec::new();
    for (i, &ad) in g.iter().enumerate() {
        let (fd, spread) = richardson(
            |v| {
                let mut q = p.clone();
                q[i] = v;
                expr.evaluate(&row, &q)
            },
            p[i],
        );
        checks.push((format!("dp{i}"), ad, fd, spread));
    }
    for j in 0..2 {
        let ad = partial_x(&expr, &row, &p, j);
        let (fd, spread) = richardson(
            |v| {
                let mut x = row;
                x[j] = v;
                expr.evaluate(&x, &p)
            },
            row[j],
        );
        checks.push((format!("dx{j}"), ad, fd, spread));
    }
    for (name, ad, fd, spread) in checks {
        if !ad.is_finite() || !fd.is_finite() || spread > 1e-4 * fd.abs().max(scale) {
            return Outcome::Skip;
        }
        if !close(ad, fd, scale) {
            return Outcome::Fail(format!("{}: {name} ad={ad} fd={fd}", expr.canonical(&p)));
        }
    }
    Outcome::Pass
}

/// Fronts by repeatedly peeling the non-dominated set.
pub fn brute_force_fronts(objs: &[Vec<f64>]) -> Vec<Vec<usize>> {
    let mut left: Vec<usize> = (0..objs.len()).collect();
    let mut fronts = Vec::new();
    while !left.is_empty() {
        let front: Vec<usize> = left
            .iter()
            .copied()
            .filter(|&i| !left.iter().any(|&j| dominates(&objs[j], &objs[i])))
            .collect();
        left.retain(|i| !front.contains(i));
        fronts.push(front);
    }
    fronts
}

pub fn random_pool(seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    let n = r.random_range(1..80);
    let m = r.random_range(2..=5);
    (0..n)
        .map(|_| {
            (0..m)
                .map(|_| match r.random_range(0..20) {
                    0 => f64::INFINITY,
                    _ => r.random_range(0..6) as f64,
                })
                .collect()
        })
        .collect()
}

pub fn nds_vs_brute(seed: u64) -> Outcome {
    let objs = random_pool(seed);
    let mut fast = non_dominated_sort(&objs);
    let mut slow = brute_force_fronts(&objs);
    for f in fast.iter_mut().chain(slow.iter_mut()) {
        f.sort_unstable();
    }
    if fast == slow {
        Outcome::Pass
    } else {
        Outcome::Fail(format!("pool {objs:?}: fast {fast:?} brute {slow:?}"))
    }
}

fn gaussian_data(seed: u64) -> Dataset {
    let spec = ProblemSpec::gaussian();
    let clean = generate(&spec, Which::Fit, seed).unwrap();
    apply_noise(&clean, 0.1, seed ^ 0x5eed)
}

fn monotone(trace: &[f64]) -> Option<usize> {
    trace.windows(2).position(|w| !(w[1] <= w[0]))
}

/// LM on a random Gaussian-alphabet tree never increases its cost.
pub fn lm_monotone(seed: u64) -> Outcome {
    let spec = ProblemSpec::gaussian();
    let mut r = rng(seed);
    let data = gaussian_data(seed);
    let (expr, p0) = random_tree(&problem_limits(&spec, 5), 4, &mut r);
    if expr.n_params() == 0 {
        return Outcome::Skip;
    }
    let prob = FitProblem::new(&expr, &data);
    let start = prob.lm_cost(&p0);
    let fit = fit_lm(&prob, &p0, 30);
    if fit.failed {
        return Outcome::Skip;
    }
    let end = prob.lm_cost(&fit.params);
    if let Some(k) = monotone(&fit.trace) {
        return Outcome::Fail(format!("{}: trace rises at step {k}: {:?}", expr.canonical(&p0), fit.trace));
    }
    if !(end <= start) || fit.iterations > 30 {
        return Outcome::Fail(format!("{}: start {start} end {end}", expr.canonical(&p0)));
    }
    Outcome::Pass
}

/// Penalty Newton under the Gaussian shape constraints never increases Φ.
pub fn newton_monotone(seed: u64) -> Outcome {
    let spec = ProblemSpec::gaussian();
    let mut r = rng(seed);
    let data = gaussian_data(seed);
    let constraints = ShapeConstraints::for_problem(ProblemId::Gaussian, MagmanSenses::GroundTruth, seed);
    let (expr, p0) = random_tree(&problem_limits(&spec, 5), 4, &mut r);
    if expr.n_params() == 0 {
        return Outcome::Skip;
    }
    let prob = FitProblem::new(&expr, &data).with_constraints(&constraints);
    let start = prob.phi(&p0);
    if !start.is_finite() {
        return Outcome::Skip;
    }
    let fit = fit_penalty_newton(&prob, &p0, 10);
    if fit.failed {
        return Outcome::Skip;
    }
    let end = prob.phi(&fit.params);
    if let Some(k) = monotone(&fit.trace) {
        return Outcome::Fail(format!("{}: Φ rises at step {k}: {:?}", expr.canonical(&p0), fit.trace));
    }
    if !(end <= start) {
        return Outcome::Fail(format!("{}: Φ start {start} end {end}", expr.canonical(&p0)));
    }
    Outcome::Pass
}

/// Mean and standard deviation of `t_noisy / t − 1` for one seed.
pub fn noise_moments(seed: u64) -> (f64, f64) {
    let spec = ProblemSpec::gaussian();
    let clean = generate(&spec, Which::Fit, seed).unwrap();
    let noisy = apply_noise(&clean, 0.1, seed);
    let rel: Vec<f64> = clean
        .targets()
        .iter()
        .zip(noisy.targets())
        .map(|(t, n)| n / t - 1.0)
        .collect();
    let n = rel.len() as f64;
    let mean = rel.iter().sum::<f64>() / n;
    let var = rel.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn noise_statistics(seeds: usize) -> Outcome {
    for seed in 0..seeds as u64 {
        let (mean, std) = noise_moments(seed);
        if mean.abs() > 0.03 || !(0.07..=0.13).contains(&std) {
            return Outcome::Fail(format!("seed {seed}: mean {mean}, std {std}"));
        }
    }
    Outcome::Pass
}

pub fn reduce_hand_example() -> Outcome {
    let data = Dataset::new(
        vec!["x".into()],
        vec![vec![1.0], vec![2.0], vec![4.0]],
        vec![1.0, 2.0, 3.0],
        DatasetMeta::default(),
    )
    .unwrap();
    let kept = reduce_data(&data, 2).unwrap();
    let xs: Vec<f64> = kept.rows().map(|r| r[0]).collect();
    if xs == [1.0, 4.0] && kept.targets() == [1.0, 3.0] {
        Outcome::Pass
    } else {
        Outcome::Fail(format!("kept x = {xs:?}"))
    }
}

/// Records the fit data and population around every verification.
#[derive(Default)]
pub struct IsolationProbe {
    pub expected: u64,
    pub pending: Option<(u64, String)>,
    pub checks: usize,
    pub failures: Vec<String>,
}

impl Observer for IsolationProbe {
    fn verification(&mut self, phase: Phase, fit_data: &Dataset, population: &[Individual]) {
        let snapshot = (fit_data.fingerprint(), format!("{population:?}"));
        if snapshot.0 != self.expected {
            self.failures.push(format!("fit data fingerprint changed ({phase:?})"));
        }
        match phase {
            Phase::BeforeVerification => self.pending = Some(snapshot),
            Phase::AfterVerification => {
                match self.pending.take() {
                    Some(before) if before == snapshot => {}
                    Some(_) => self.failures.push("state changed during verification".into()),
                    None => self.failures.push("after without before".into()),
                }
                self.checks += 1;
            }
        }
    }
}

/// Short instrumented run; fails if verification touches the search state.
pub fn verification_isolation(seed: u64) -> Outcome {
    let problems = [ProblemId::Gaussian, ProblemId::Magman, ProblemId::Vdw];
    let mut cfg = RunConfig::new(
        problems[seed as usize % 3],
        Variant::ALL[(seed as usize / 3) % 3],
        0.1,
        seed,
    );
    cfg.budget = Budget::Generations(4);
    cfg.settings.pop_size = 60;
    let inputs = RunInputs::build(&cfg).unwrap();
    let fingerprint = inputs.fit.fingerprint();
    let fit_before = inputs.fit.clone();
    let mut probe = IsolationProbe { expected: fingerprint, ..Default::default() };
    let search = Search::new(cfg, &inputs).unwrap();
    let result = search.run(&mut probe);
    if inputs.fit != fit_before {
        probe.failures.push("fit data differs after the run".into());
    }
    if probe.checks != result.verifications || probe.checks == 0 {
        probe.failures.push(format!("{} checks for {} verifications", probe.checks, result.verifications));
    }
    if probe.failures.is_empty() {
        Outcome::Pass
    } else {
        Outcome::Fail(probe.failures.join("; "))
    }
}

/// Runs `check` on successive seeds until `wanted` non-skipped cases are
/// seen. Returns the number checked and the first failure.
pub fn run_cases(wanted: usize, max_seeds: u64, check: impl Fn(u64) -> Outcome) -> (usize, Option<String>) {
    let mut seen = 0;
    for seed in 0..max_seeds {
        if seen == wanted {
            break;
        }
        match check(seed) {
            Outcome::Pass => seen += 1,
            Outcome::Skip => {}
            Outcome::Fail(msg) => return (seen + 1, Some(format!("seed {seed}: {msg}"))),
        }
    }
    (seen, None)
}

pub fn truth(problem: ProblemId) -> (Expression, Vec<f64>) {
    let spec = problem.spec();
    (spec.truth, spec.truth_params)
}
