//! Genetic programming engine: random trees, variation operators,
//! objective vectors, non-dominated sorting with crowding plus rank-sum
//! slots, ages, and the hall of fame.

use std::cmp::Ordering;
use std::collections::HashSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraints::ShapeConstraints;
use crate::datasets::Dataset;
use crate::exprtree::{drastic_simplify, BinaryOp, Expression, FunctionSet, Node};
use crate::fitting::{loss, staged_fit, FitConfig, FitResult, LossKind, Variant};
use crate::rng::stream;

/// Number of selection objectives: mse, complexity, age, −|Spearman|, violation.
pub const N_OBJECTIVES: usize = 5;

/// Structural limits every candidate must respect.
#[derive(Clone, Debug, PartialEq)]
pub struct TreeLimits {
    pub functions: FunctionSet,
    pub n_vars: usize,
    pub max_complexity: usize,
    /// Only parameters or constants may appear as `^` exponents.
    pub pow_abs_param: bool,
}

impl TreeLimits {
    pub fn admits(&self, expr: &Expression) -> bool {
        expr.complexity() <= self.max_complexity
            && (!self.pow_abs_param || expr.exponents_are_params())
            && expr.n_params() <= crate::autodiff::MAX_PARAMS
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Appends a fresh N(0, 1) parameter to `pool` and returns its leaf.
fn new_param(pool: &mut Vec<f64>, rng: &mut ChaCha8Rng) -> Node {
    pool.push(normal(rng));
    Node::Param(pool.len() - 1)
}

fn random_leaf(limits: &TreeLimits, pool: &mut Vec<f64>, rng: &mut ChaCha8Rng) -> Node {
    if limits.n_vars > 0 && rng.random_bool(0.5) {
        Node::Var(rng.random_range(0..limits.n_vars))
    } else {
        new_param(pool, rng)
    }
}

/// Random tree of depth at most `depth`. With `full`, every branch reaches
/// the full depth.
fn random_node(limits: &TreeLimits, depth: usize, full: bool, pool: &mut Vec<f64>, rng: &mut ChaCha8Rng) -> Node {
    let fs = &limits.functions;
    let n_ops = fs.binary.len() + fs.unary.len();
    if depth <= 1 || n_ops == 0 || (!full && rng.random_bool(0.3)) {
        return random_leaf(limits, pool, rng);
    }
    let pick = rng.random_range(0..n_ops);
    if pick < fs.binary.len() {
        let op = fs.binary[pick];
        let left = random_node(limits, depth - 1, full, pool, rng);
        let right = if op == BinaryOp::Pow && limits.pow_abs_param {
            new_param(pool, rng)
        } else {
            random_node(limits, depth - 1, full, pool, rng)
        };
        Node::binary(op, left, right)
    } else {
        let op = fs.unary[pick - fs.binary.len()];
        Node::unary(op, random_node(limits, depth - 1, full, pool, rng))
    }
}

/// Ramped random tree with depth in `1..=max_depth` that fits the limits.
pub fn random_tree(limits: &TreeLimits, max_depth: usize, rng: &mut ChaCha8Rng) -> (Expression, Vec<f64>) {
    loop {
        let depth = rng.random_range(1..=max_depth.max(1));
        let full = rng.random_bool(0.5);
        let mut pool = Vec::new();
        let root = random_node(limits, depth, full, &mut pool, rng);
        let (expr, params) = Expression::normalize(root, &pool);
        if limits.admits(&expr) {
            return (expr, params);
        }
    }
}

fn shift_params(node: &mut Node, offset: usize) {
    match node {
        Node::Binary(_, l, r) => {
            shift_params(l, offset);
            shift_params(r, offset);
        }
        Node::Unary(_, c) => shift_params(c, offset),
        Node::Param(i) => *i += offset,
        _ => {}
    }
}

const MAX_RETRIES: usize = 10;

/// Replaces a random subtree of `a` by a random subtree of `b`. Parameter
/// values travel with their nodes. After `MAX_RETRIES` inadmissible
/// attempts a copy of `a` is returned.
pub fn crossover(
    a: (&Expression, &[f64]),
    b: (&Expression, &[f64]),
    limits: &TreeLimits,
    rng: &mut ChaCha8Rng,
) -> (Expression, Vec<f64>) {
    let pool: Vec<f64> = a.1.iter().chain(b.1).copied().collect();
    for _ in 0..MAX_RETRIES {
        let at = rng.random_range(0..a.0.complexity());
        let from = rng.random_range(0..b.0.complexity());
        let mut donor = b.0.root().get(from).expect("index within tree").clone();
        shift_params(&mut donor, a.1.len());
        let mut root = a.0.root().clone();
        *root.get_mut(at).expect("index within tree") = donor;
        let (child, params) = Expression::normalize(root, &pool);
        if limits.admits(&child) {
            return (child, params);
        }
    }
    (a.0.clone(), a.1.to_vec())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MutationKind {
    /// Operator to another operator of the same arity, or leaf to leaf.
    Swap,
    /// Subtree to a fresh random subtree.
    Replace,
    /// Node `n` to `n ∘ p`, `p ∘ n` or `u(n)`.
    Insert,
    /// Operator node to one of its children.
    Delete,
}

const MUTATIONS: [MutationKind; 4] = [
    MutationKind::Swap,
    MutationKind::Replace,
    MutationKind::Insert,
    MutationKind::Delete,
];

fn apply_mutation(
    kind: MutationKind,
    node: &mut Node,
    limits: &TreeLimits,
    pool: &mut Vec<f64>,
    rng: &mut ChaCha8Rng,
) -> bool {
    let fs = &limits.functions;
    match kind {
        MutationKind::Swap => match node {
            Node::Binary(op, _, _) if fs.binary.len() > 1 => {
                *op = fs.binary[rng.random_range(0..fs.binary.len())];
                true
            }
            Node::Unary(op, _) if fs.unary.len() > 1 => {
                *op = fs.unary[rng.random_range(0..fs.unary.len())];
                true
            }
            Node::Var(_) | Node::Param(_) | Node::Const(_) => {
                *node = random_leaf(limits, pool, rng);
                true
            }
            _ => false,
        },
        MutationKind::Replace => {
            let depth = rng.random_range(1..=3);
            *node = random_node(limits, depth, false, pool, rng);
            true
        }
        MutationKind::Insert => {
            let old = std::mem::replace(node, Node::Const(0.0));
            let n_ops = fs.binary.len() + fs.unary.len();
            let pick = rng.random_range(0..n_ops);
            *node = if pick < fs.binary.len() {
                let op = fs.binary[pick];
                let p = new_param(pool, rng);
                if op == BinaryOp::Pow || rng.random_bool(0.5) {
                    Node::binary(op, old, p)
                } else {
                    Node::binary(op, p, old)
                }
            } else {
                Node::unary(fs.unary[pick - fs.binary.len()], old)
            };
            true
        }
        MutationKind::Delete => match node {
            Node::Binary(_, l, r) => {
                let keep = if rng.random_bool(0.5) { l } else { r };
                *node = std::mem::replace(keep.as_mut(), Node::Const(0.0));
                true
            }
            Node::Unary(_, c) => {
                *node = std::mem::replace(c.as_mut(), Node::Const(0.0));
                true
            }
            _ => false,
        },
    }
}

/// One random mutation at a random node. After `MAX_RETRIES` inadmissible
/// attempts a copy of the parent is returned.
pub fn mutate(
    parent: (&Expression, &[f64]),
    limits: &TreeLimits,
    rng: &mut ChaCha8Rng,
) -> (Expression, Vec<f64>) {
    for _ in 0..MAX_RETRIES {
        let mut pool = parent.1.to_vec();
        let mut root = parent.0.root().clone();
        let at = rng.random_range(0..parent.0.complexity());
        let kind = MUTATIONS[rng.random_range(0..MUTATIONS.len())];
        let target = root.get_mut(at).expect("index within tree");
        if !apply_mutation(kind, target, limits, &mut pool, rng) {
            continue;
        }
        let (child, params) = Expression::normalize(root, &pool);
        if limits.admits(&child) {
            return (child, params);
        }
    }
    (parent.0.clone(), parent.1.to_vec())
}

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation; `None` when either side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = a.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        let (dx, dy) = (x - mean, y - mean);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some(sab / (saa * sbb).sqrt())
}

/// A fitted candidate with its selection bookkeeping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub expr: Expression,
    pub fit: FitResult,
    pub age: u64,
    /// `[ms_processed_e, compl, age, minus_abs_spear, constr_vios]`.
    pub objectives: [f64; N_OBJECTIVES],
    pub canonical: String,
    #[serde(skip)]
    pub rank: usize,
    #[serde(skip)]
    pub crowding: f64,
}

impl Individual {
    pub fn params(&self) -> &[f64] {
        &self.fit.params
    }

    pub fn compl(&self) -> usize {
        self.expr.complexity()
    }

    pub fn is_valid(&self) -> bool {
        !self.fit.failed && self.objectives.iter().all(|v| !v.is_nan()) && self.objectives[0].is_finite()
    }

    fn refresh_age(&mut self) {
        self.objectives[2] = self.age as f64;
    }
}

/// Settings of one evolutionary search.
#[derive(Clone, Debug, PartialEq)]
pub struct EvolutionConfig {
    pub variant: Variant,
    pub pop_size: usize,
    pub limits: TreeLimits,
    pub init_depth: usize,
    pub crossover_prob: f64,
    /// Share of the surviving slots filled by best rank sum instead of rank
    /// and crowding.
    pub fitness_fraction: f64,
    /// Parameters closer than this to 0 or 1 are rounded; 0 disables.
    pub drastic_simplify: f64,
    /// Noise level of the fit data, used by the stage-two gate.
    pub noise: f64,
    pub fit: FitConfig,
}

/// Objective vector of a fitted expression on the fit data. Invalid for
/// undefined predictions.
pub fn compute_objectives(expr: &Expression, fit: &FitResult, age: u64, data: &Dataset) -> [f64; N_OBJECTIVES] {
    let mut preds = Vec::with_capacity(data.len());
    for row in data.rows() {
        preds.push(expr.evaluate(row, &fit.params));
    }
    let spear = if preds.iter().any(|v| v.is_nan()) {
        f64::NAN
    } else {
        -spearman(&preds, data.targets()).map_or(0.0, f64::abs)
    };
    [
        fit.ms_processed_e,
        expr.complexity() as f64,
        age as f64,
        spear,
        fit.constr_vios,
    ]
}

/// Fits a raw candidate, simplifies it, and scores it.
pub fn evaluate_candidate(
    expr: &Expression,
    p0: &[f64],
    data: &Dataset,
    constraints: &ShapeConstraints,
    cfg: &EvolutionConfig,
) -> Individual {
    let mut fit = staged_fit(cfg.variant, expr, p0, data, constraints, cfg.noise, &cfg.fit);
    let mut expr = expr.clone();
    if cfg.drastic_simplify > 0.0 && !fit.failed {
        let (simple, params) = drastic_simplify(&expr, &fit.params, cfg.drastic_simplify);
        if simple != expr {
            fit.ms_processed_e = loss(&simple, &params, data, LossKind::Squared);
            fit.mare = loss(&simple, &params, data, LossKind::Absolute);
            fit.failed = !fit.ms_processed_e.is_finite();
            if cfg.variant != Variant::Base {
                fit.constr_vios = constraints.violation(&simple, &params);
            }
            fit.params = params;
            expr = simple;
        }
    }
    let objectives = compute_objectives(&expr, &fit, 0, data);
    let canonical = expr.canonical(&fit.params);
    Individual {
        expr,
        fit,
        age: 0,
        objectives,
        canonical,
        rank: 0,
        crowding: 0.0,
    }
}

/// `a` is no worse everywhere and strictly better somewhere.
pub fn dominates(a: &[f64], b: &[f64]) -> bool {
    let mut strict = false;
    for (x, y) in a.iter().zip(b) {
        if x > y {
            return false;
        }
        if x < y {
            strict = true;
        }
    }
    strict
}

/// Fronts of mutually non-dominated indices, best first.
pub fn non_dominated_sort<V: AsRef<[f64]>>(objs: &[V]) -> Vec<Vec<usize>> {
    let n = objs.len();
    let mut dominated_by: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut counts = vec![0usize; n];
    for i in 0..n {
        for j in i + 1..n {
            if dominates(objs[i].as_ref(), objs[j].as_ref()) {
                dominated_by[i].push(j);
                counts[j] += 1;
            } else if dominates(objs[j].as_ref(), objs[i].as_ref()) {
                dominated_by[j].push(i);
                counts[i] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| counts[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            for &j in &dominated_by[i] {
                counts[j] -= 1;
                if counts[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        fronts.push(current);
        current = next;
    }
    fronts
}

/// Crowding distance of each member of `front`, in front order. Boundary
/// points get `+∞`. Non-finite objective values count as very large.
pub fn crowding_distance<V: AsRef<[f64]>>(objs: &[V], front: &[usize]) -> Vec<f64> {
    let mut dist = vec![0.0; front.len()];
    if front.len() <= 2 {
        return vec![f64::INFINITY; front.len()];
    }
    let m = objs[front[0]].as_ref().len();
    let clamp = |v: f64| v.clamp(-1e300, 1e300);
    for k in 0..m {
        let mut order: Vec<usize> = (0..front.len()).collect();
        order.sort_by(|&a, &b| objs[front[a]].as_ref()[k].total_cmp(&objs[front[b]].as_ref()[k]));
        let lo = clamp(objs[front[order[0]]].as_ref()[k]);
        let hi = clamp(objs[front[*order.last().unwrap()]].as_ref()[k]);
        dist[order[0]] = f64::INFINITY;
        dist[*order.last().unwrap()] = f64::INFINITY;
        let span = hi - lo;
        if span <= 0.0 || !span.is_finite() {
            continue;
        }
        for w in 1..order.len() - 1 {
            let prev = clamp(objs[front[order[w - 1]]].as_ref()[k]);
            let next = clamp(objs[front[order[w + 1]]].as_ref()[k]);
            dist[order[w]] += (next - prev) / span;
        }
    }
    dist
}

/// Result of [`select_indices`]: chosen indices with their front rank and
/// crowding distance.
#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub chosen: Vec<usize>,
    pub rank: Vec<usize>,
    pub crowding: Vec<f64>,
}

/// Picks `pop_size` indices: most slots by front rank with crowding as the
/// tie-break in the cut front, the remaining `fitness_fraction` by the
/// smallest sum of per-objective ranks among the rest.
pub fn select_indices<V: AsRef<[f64]>>(objs: &[V], pop_size: usize, fitness_fraction: f64) -> Selection {
    let n = objs.len();
    let fronts = non_dominated_sort(objs);
    let mut rank = vec![0; n];
    let mut crowding = vec![0.0; n];
    for (r, front) in fronts.iter().enumerate() {
        for (&i, d) in front.iter().zip(crowding_distance(objs, front)) {
            rank[i] = r;
            crowding[i] = d;
        }
    }
    if n <= pop_size {
        return Selection { chosen: (0..n).collect(), rank, crowding };
    }
    let fitness_slots = ((pop_size as f64) * fitness_fraction.clamp(0.0, 1.0)).round() as usize;
    let pareto_slots = pop_size - fitness_slots;
    let mut chosen = Vec::with_capacity(pop_size);
    for front in &fronts {
        if chosen.len() + front.len() <= pareto_slots {
            chosen.extend_from_slice(front);
            continue;
        }
        let mut rest = front.clone();
        rest.sort_by(|&a, &b| crowding[b].total_cmp(&crowding[a]).then(a.cmp(&b)));
        rest.truncate(pareto_slots - chosen.len());
        chosen.extend(rest);
        break;
    }
    if fitness_slots > 0 {
        let taken: HashSet<usize> = chosen.iter().copied().collect();
        let remaining: Vec<usize> = (0..n).filter(|i| !taken.contains(i)).collect();
        let m = objs[0].as_ref().len();
        let mut sums = vec![0.0; remaining.len()];
        for k in 0..m {
            let col: Vec<f64> = remaining.iter().map(|&i| objs[i].as_ref()[k]).collect();
            for (s, r) in sums.iter_mut().zip(average_ranks(&col)) {
                *s += r;
            }
        }
        let mut order: Vec<usize> = (0..remaining.len()).collect();
        order.sort_by(|&a, &b| sums[a].total_cmp(&sums[b]).then(a.cmp(&b)));
        chosen.extend(order.into_iter().take(fitness_slots).map(|o| remaining[o]));
    }
    Selection { chosen, rank, crowding }
}

/// Selects survivors from the pool and increments their ages.
pub fn select(pool: Vec<Individual>, pop_size: usize, fitness_fraction: f64) -> Vec<Individual> {
    let objs: Vec<[f64; N_OBJECTIVES]> = pool.iter().map(|i| i.objectives).collect();
    let sel = select_indices(&objs, pop_size, fitness_fraction);
    let mut slots: Vec<Option<Individual>> = pool.into_iter().map(Some).collect();
    sel.chosen
        .iter()
        .map(|&i| {
            let mut ind = slots[i].take().expect("each index chosen once");
            ind.rank = sel.rank[i];
            ind.crowding = sel.crowding[i];
            ind.age += 1;
            ind.refresh_age();
            ind
        })
        .collect()
}

/// Archive entry scored on `[ms_processed_e, compl, mare, constr_vios]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HofEntry {
    pub expr: Expression,
    pub params: Vec<f64>,
    pub canonical: String,
    pub scores: [f64; 4],
    pub text: String,
}

impl HofEntry {
    pub fn from_individual(ind: &Individual) -> Self {
        Self {
            expr: ind.expr.clone(),
            params: ind.fit.params.clone(),
            canonical: ind.canonical.clone(),
            scores: [
                ind.fit.ms_processed_e,
                ind.compl() as f64,
                ind.fit.mare,
                ind.fit.constr_vios,
            ],
            text: ind.expr.to_text(None, None),
        }
    }

    pub fn ms_processed_e(&self) -> f64 {
        self.scores[0]
    }

    pub fn mare(&self) -> f64 {
        self.scores[2]
    }

    pub fn constr_vios(&self) -> f64 {
        self.scores[3]
    }
}

/// Unbounded archive of mutually non-dominated candidates.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HallOfFame {
    pub members: Vec<HofEntry>,
}

impl HallOfFame {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Inserts `entry` unless it is a duplicate or weakly dominated, and
    /// drops the members it dominates. Returns whether it was inserted.
    pub fn insert(&mut self, entry: HofEntry) -> bool {
        if entry.scores.iter().any(|v| v.is_nan()) {
            return false;
        }
        let blocked = self.members.iter().any(|m| {
            m.canonical == entry.canonical || m.scores.iter().zip(&entry.scores).all(|(a, b)| a <= b)
        });
        if blocked {
            return false;
        }
        self.members.retain(|m| !dominates(&entry.scores, &m.scores));
        self.members.push(entry);
        true
    }

    pub fn update<'a>(&mut self, candidates: impl IntoIterator<Item = &'a Individual>) {
        for ind in candidates {
            if ind.is_valid() {
                self.insert(HofEntry::from_individual(ind));
            }
        }
    }
}

/// One line of the per-generation progress log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: u64,
    pub best_ms_processed_e: f64,
    pub best_mare: f64,
    pub hof_size: usize,
    pub min_constr_vios: f64,
    pub median_constr_vios: f64,
    pub feasible_share: f64,
}

/// Population, archive and the loop that advances them.
pub struct Engine<'a> {
    cfg: EvolutionConfig,
    data: &'a Dataset,
    constraints: &'a ShapeConstraints,
    seed: u64,
    generation: u64,
    population: Vec<Individual>,
    hof: HallOfFame,
}

const TAG_INIT: u64 = 1;
const TAG_OFFSPRING: u64 = 2;

impl<'a> Engine<'a> {
    /// Random initial population, fitted and archived.
    pub fn new(cfg: EvolutionConfig, data: &'a Dataset, constraints: &'a ShapeConstraints, seed: u64) -> Self {
        let raw: Vec<(Expression, Vec<f64>)> = (0..cfg.pop_size)
            .map(|i| random_tree(&cfg.limits, cfg.init_depth, &mut stream(&[seed, TAG_INIT, i as u64])))
            .collect();
        let mut engine = Self {
            cfg,
            data,
            constraints,
            seed,
            generation: 0,
            population: Vec::new(),
            hof: HallOfFame::default(),
        };
        let mut pop = engine.evaluate_all(&raw);
        pop.retain(Individual::is_valid);
        engine.hof.update(&pop);
        let objs: Vec<[f64; N_OBJECTIVES]> = pop.iter().map(|i| i.objectives).collect();
        let sel = select_indices(&objs, usize::MAX, 0.0);
        for (i, ind) in pop.iter_mut().enumerate() {
            ind.rank = sel.rank[i];
            ind.crowding = sel.crowding[i];
        }
        engine.population = pop;
        engine
    }

    fn evaluate_all(&self, raw: &[(Expression, Vec<f64>)]) -> Vec<Individual> {
        raw.par_iter()
            .map(|(e, p)| evaluate_candidate(e, p, self.data, self.constraints, &self.cfg))
            .collect()
    }

    pub fn config(&self) -> &EvolutionConfig {
        &self.cfg
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn population(&self) -> &[Individual] {
        &self.population
    }

    pub fn hall_of_fame(&self) -> &HallOfFame {
        &self.hof
    }

    pub fn data(&self) -> &Dataset {
        self.data
    }

    /// Fits a given expression and adds it to the population and archive.
    pub fn plant(&mut self, expr: &Expression, p0: &[f64]) {
        let ind = evaluate_candidate(expr, p0, self.data, self.constraints, &self.cfg);
        if ind.is_valid() {
            self.hof.update(std::iter::once(&ind));
            self.population.push(ind);
        }
    }

    fn tournament<'p>(&'p self, rng: &mut ChaCha8Rng) -> &'p Individual {
        let pop = &self.population;
        let a = &pop[rng.random_range(0..pop.len())];
        let b = &pop[rng.random_range(0..pop.len())];
        match a.rank.cmp(&b.rank).then(b.crowding.total_cmp(&a.crowding)) {
            Ordering::Greater => b,
            _ => a,
        }
    }

    fn offspring(&self, index: usize) -> (Expression, Vec<f64>) {
        let mut rng = stream(&[self.seed, TAG_OFFSPRING, self.generation, index as u64]);
        if self.population.is_empty() {
            return random_tree(&self.cfg.limits, self.cfg.init_depth, &mut rng);
        }
        if rng.random_bool(self.cfg.crossover_prob) {
            let a = self.tournament(&mut rng);
            let b = self.tournament(&mut rng);
            crossover((&a.expr, a.params()), (&b.expr, b.params()), &self.cfg.limits, &mut rng)
        } else {
            let a = self.tournament(&mut rng);
            mutate((&a.expr, a.params()), &self.cfg.limits, &mut rng)
        }
    }

    /// Breeds, fits and selects one generation.
    pub fn step(&mut self) -> GenerationStats {
        let raw: Vec<(Expression, Vec<f64>)> = (0..self.cfg.pop_size).map(|i| self.offspring(i)).collect();
        let mut children = self.evaluate_all(&raw);
        children.retain(Individual::is_valid);
        self.hof.update(&children);

        let mut seen = HashSet::new();
        let pool: Vec<Individual> = std::mem::take(&mut self.population)
            .into_iter()
            .chain(children)
            .filter(|ind| seen.insert(ind.canonical.clone()))
            .collect();
        self.population = select(pool, self.cfg.pop_size, self.cfg.fitness_fraction);
        self.generation += 1;
        self.stats()
    }

    pub fn stats(&self) -> GenerationStats {
        let pop = &self.population;
        let best_mse = pop.iter().map(|i| i.fit.ms_processed_e).fold(f64::INFINITY, f64::min);
        let best_mare = pop.iter().map(|i| i.fit.mare).fold(f64::INFINITY, f64::min);
        let mut vios: Vec<f64> = pop.iter().map(|i| i.fit.constr_vios).collect();
        vios.sort_by(f64::total_cmp);
        let median = if vios.is_empty() { f64::NAN } else { vios[vios.len() / 2] };
        let feasible = vios.iter().filter(|v| **v == 0.0).count();
        GenerationStats {
            generation: self.generation,
            best_ms_processed_e: best_mse,
            best_mare,
            hof_size: self.hof.len(),
            min_constr_vios: vios.first().copied().unwrap_or(f64::NAN),
            median_constr_vios: median,
            feasible_share: feasible as f64 / pop.len().max(1) as f64,
        }
    }
}
