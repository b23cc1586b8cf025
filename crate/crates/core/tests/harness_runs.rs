mod common;

use common::{rng, verification_isolation, Outcome};
use rand::Rng;
use shapesr::datasets::{ProblemId, ProblemSpec};
use shapesr::exprtree::{BinaryOp, Expression, Node};
use shapesr::fitting::Variant;
use shapesr::harness::{run_grid, Budget, GridSpec, RunConfig, RunInputs, RunResult, Search};

fn small(problem: ProblemId, variant: Variant, noise: f64, seed: u64, generations: u64) -> RunConfig {
    let mut cfg = RunConfig::new(problem, variant, noise, seed);
    cfg.budget = Budget::Generations(generations);
    cfg.settings.pop_size = 30;
    cfg
}

fn run_planted(cfg: RunConfig, plants: &[(Expression, Vec<f64>)]) -> RunResult {
    let inputs = RunInputs::build(&cfg).unwrap();
    let mut search = Search::new(cfg, &inputs).unwrap();
    for (e, p) in plants {
        search.plant(e, p);
    }
    search.run(&mut ())
}

#[test]
fn planted_truth_is_found_at_the_first_verification() {
    for problem in [ProblemId::Gaussian, ProblemId::Magman, ProblemId::Vdw] {
        let spec = problem.spec();
        let p0: Vec<f64> = spec.truth_params.iter().map(|v| v * 1.05).collect();
        let result = run_planted(small(problem, Variant::Minimobj, 0.1, 4, 3), &[(spec.truth.clone(), p0)]);
        assert!(result.success, "{problem}");
        assert_eq!(result.generations, 0);
        assert_eq!(result.verifications, 1);
        let w = result.winner.unwrap();
        assert!(w.verification_mare < 1e-6);
        assert_eq!(w.complexity, spec.truth_complexity());
    }
}

#[test]
fn one_second_vdw_budget_times_out() {
    let mut cfg = RunConfig::new(ProblemId::Vdw, Variant::Obj, 0.1, 1);
    cfg.settings.t_lim = 1.0;
    cfg.settings.pop_size = 100;
    let inputs = RunInputs::build(&cfg).unwrap();
    let result = Search::new(cfg, &inputs).unwrap().run(&mut ());
    assert!(!result.success);
    assert!(result.winner.is_none() && result.time_to_success.is_none());
    assert!(result.elapsed >= 1.0 && result.elapsed < 10.0, "elapsed {}", result.elapsed);
}

fn without_clock(mut r: RunResult) -> String {
    r.elapsed = 0.0;
    r.time_to_success = r.time_to_success.map(|_| 0.0);
    r.to_json().unwrap()
}

#[test]
fn generation_budget_runs_are_deterministic() {
    for variant in Variant::ALL {
        let cfg = small(ProblemId::Gaussian, variant, 0.1, 21, 5);
        let a = run_planted(cfg.clone(), &[]);
        let b = run_planted(cfg, &[]);
        assert_eq!(a.generations, 5);
        assert_eq!(without_clock(a), without_clock(b));
    }
}

#[test]
fn verification_never_touches_the_search_state() {
    for seed in 0..10 {
        assert_eq!(verification_isolation(seed), Outcome::Pass, "run {seed}");
    }
}

/// `truth / (p + q·x0·x1)`: equal to the truth for `(p, q) = (1, 0)` but
/// above the complexity cap.
fn padded(spec: &ProblemSpec) -> (Expression, Vec<f64>) {
    let k = spec.truth_params.len();
    let root = Node::binary(
        BinaryOp::Div,
        spec.truth.root().clone(),
        Node::binary(
            BinaryOp::Add,
            Node::Param(k),
            Node::binary(
                BinaryOp::Mul,
                Node::Param(k + 1),
                Node::binary(BinaryOp::Mul, Node::Var(0), Node::Var(1)),
            ),
        ),
    );
    let mut params = spec.truth_params.clone();
    params.extend([1.0, 1e-3]);
    (Expression::new(root), params)
}

#[test]
fn winners_never_exceed_the_complexity_cap() {
    let mut r = rng(77);
    let mut successes = 0;
    for seed in 0..100 {
        let problem = [ProblemId::Gaussian, ProblemId::Magman][seed as usize % 2];
        let variant = Variant::ALL[r.random_range(0..3)];
        let spec = problem.spec();
        let mut cfg = small(problem, variant, 0.0, seed, 2);
        cfg.settings.pop_size = 10;
        cfg.settings.always_drastic_simplify = 0.0;
        let mut plants = vec![padded(&spec)];
        if r.random_bool(0.5) {
            plants.push((spec.truth.clone(), spec.truth_params.iter().map(|v| v * 0.9).collect()));
        }
        let result = run_planted(cfg, &plants);
        if let Some(w) = &result.winner {
            successes += 1;
            assert!(w.complexity <= spec.max_complexity(), "run {seed}: {}", w.canonical);
        }
    }
    assert!(successes > 20, "only {successes} successes");
}

#[test]
fn grid_writes_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let grid = GridSpec::from_toml(
        r#"
        master_seed = 3
        repetitions = 1
        problems = ["gaussian"]
        variants = ["base", "obj", "minimobj"]
        noise = [0.1, 0.3]
        budget = "generations:1"
        [settings]
        pop_size = 10
        "#,
    )
    .unwrap();
    let table = run_grid(&grid, dir.path()).unwrap();
    assert_eq!(table.len(), 6);
    assert!(table.iter().all(|c| c.repetitions == 1 && c.successes <= 1));
    let csv = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
    assert!(csv.starts_with("problem,variant,noise,keep,repetitions,successes,mean_time_to_success"));
    assert_eq!(std::fs::read_dir(dir.path().join("runs")).unwrap().count(), 6);

    let empty = GridSpec { repetitions: 0, ..grid };
    assert!(run_grid(&empty, dir.path()).unwrap().is_empty());
}

#[test]
fn variants_of_a_cell_share_their_data() {
    let grid = GridSpec::from_toml(
        "master_seed = 1\nrepetitions = 2\nproblems = [\"magman\"]\nvariants = [\"base\", \"obj\"]\nnoise = [0.1]\nkeep = [\"all\", 12]\n",
    )
    .unwrap();
    assert_eq!(grid.cells().len(), 4);
    let seeds: Vec<u64> = grid
        .keep
        .iter()
        .flat_map(|&k| (0..2).map(move |rep| (k, rep)))
        .map(|(k, rep)| grid.run_seed(ProblemId::Magman, 0.1, k, rep))
        .collect();
    let mut unique = seeds.clone();
    unique.sort_unstable();
    unique.dedup();
    assert_eq!(unique.len(), seeds.len());
}

#[test]
fn shipped_grid_files_parse() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("config/grids");
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let grid = GridSpec::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert!(!grid.cells().is_empty());
        n += 1;
    }
    assert_eq!(n, 4);
}
