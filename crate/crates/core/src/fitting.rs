//! Parameter identification: Levenberg–Marquardt on relative residuals,
//! a penalty Newton method for constrained refinement, and the staged
//! budgets that tell the three algorithm variants apart.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::autodiff::{eval_row, hessian, seed_first, Dual, Objective, Scalar};
use crate::constraints::ShapeConstraints;
use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::exprtree::Expression;
use crate::with_dim;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Data fit only; constraints are ignored.
    Base,
    /// Constraint violation is an extra selection objective.
    Obj,
    /// As `Obj`, with a penalized Newton refinement for good fits.
    Minimobj,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Base, Variant::Obj, Variant::Minimobj];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::Obj => "obj",
            Variant::Minimobj => "minimobj",
        }
    }

    pub fn code(self) -> u64 {
        match self {
            Variant::Base => 1,
            Variant::Obj => 2,
            Variant::Minimobj => 3,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Squared,
    Absolute,
}

/// Mean of `f((y_i − m_i) / y_i)`; `+∞` if any prediction is undefined.
pub fn loss(expr: &Expression, p: &[f64], data: &Dataset, kind: LossKind) -> f64 {
    let mut sum = 0.0;
    for (row, (&y, &w)) in data.rows().zip(data.targets().iter().zip(data.weights())) {
        let r = (y - expr.evaluate(row, p)) * w;
        if r.is_nan() {
            return f64::INFINITY;
        }
        sum += match kind {
            LossKind::Squared => r * r,
            LossKind::Absolute => r.abs(),
        };
    }
    let v = sum / data.len() as f64;
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

/// `Σ |p_j|`, differentiable away from zero.
fn l1<S: Scalar>(p: &[S]) -> S {
    p.iter().fold(S::zero(), |acc, &v| acc + v.abs())
}

/// Mean squared relative error for any scalar type; NaN if undefined at a row.
pub fn mse_generic<S: Scalar>(expr: &Expression, data: &Dataset, p: &[S]) -> S {
    let mut sum = S::zero();
    for (row, (&y, &w)) in data.rows().zip(data.targets().iter().zip(data.weights())) {
        let r = (S::from_f64(y) - eval_row(expr, row, p)) * S::from_f64(w);
        if r.value().is_nan() {
            return S::nan();
        }
        sum = sum + r * r;
    }
    sum / S::from_f64(data.len() as f64)
}

/// Everything a single fit needs.
#[derive(Clone, Copy, Debug)]
pub struct FitProblem<'a> {
    pub expr: &'a Expression,
    pub data: &'a Dataset,
    pub constraints: Option<&'a ShapeConstraints>,
    /// Weight of the constraint violation in the penalty objective.
    pub rho: f64,
    /// Weight of the squared ℓ1 norm of the parameters.
    pub lambda: f64,
}

impl<'a> FitProblem<'a> {
    pub fn new(expr: &'a Expression, data: &'a Dataset) -> Self {
        Self {
            expr,
            data,
            constraints: None,
            rho: 1.0,
            lambda: FitConfig::default().lambda,
        }
    }

    pub fn with_constraints(mut self, constraints: &'a ShapeConstraints) -> Self {
        self.constraints = Some(constraints);
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho = rho;
        self
    }

    /// Least-squares cost minimized by [`fit_lm`].
    pub fn lm_cost(&self, p: &[f64]) -> f64 {
        let mse = loss(self.expr, p, self.data, LossKind::Squared);
        let reg = l1(p);
        mse + self.lambda * reg * reg
    }

    /// Penalty objective minimized by [`fit_penalty_newton`].
    pub fn phi(&self, p: &[f64]) -> f64 {
        let v = PenaltyObjective(self).eval(p);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }

    fn violation(&self, p: &[f64]) -> f64 {
        self.constraints.map_or(0.0, |c| c.violation(self.expr, p))
    }

    fn result(&self, params: Vec<f64>, iterations: usize, converged: bool, trace: Vec<f64>) -> FitResult {
        let ms_processed_e = loss(self.expr, &params, self.data, LossKind::Squared);
        let mare = loss(self.expr, &params, self.data, LossKind::Absolute);
        FitResult {
            failed: !ms_processed_e.is_finite(),
            params,
            ms_processed_e,
            mare,
            constr_vios: 0.0,
            iterations,
            converged,
            trace,
        }
    }
}

struct PenaltyObjective<'p, 'a>(&'p FitProblem<'a>);

impl Objective for PenaltyObjective<'_, '_> {
    fn eval<S: Scalar>(&self, p: &[S]) -> S {
        let prob = self.0;
        let mut phi = mse_generic(prob.expr, prob.data, p);
        if phi.value().is_nan() {
            return phi;
        }
        if let Some(c) = prob.constraints {
            phi = phi + S::from_f64(prob.rho) * c.penalty(prob.expr, p);
        }
        let reg = l1(p);
        phi + S::from_f64(prob.lambda) * reg * reg
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: Vec<f64>,
    pub ms_processed_e: f64,
    pub mare: f64,
    pub constr_vios: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Set when the fitted model is undefined on the data.
    pub failed: bool,
    /// Objective value after each accepted step, starting at `p0`.
    #[serde(skip)]
    pub trace: Vec<f64>,
}

impl FitResult {
    fn failed(params: Vec<f64>) -> Self {
        Self {
            params,
            ms_processed_e: f64::INFINITY,
            mare: f64::INFINITY,
            constr_vios: f64::INFINITY,
            iterations: 0,
            converged: false,
            failed: true,
            trace: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// LM budget for the base and obj variants.
    pub max_iter: usize,
    /// LM budget of the first minimobj stage.
    pub stage_one_iter: usize,
    /// Newton budget of the second minimobj stage.
    pub newton_iter: usize,
    pub constr_penalty_factor: f64,
    /// Added to the noise level to obtain the stage-two MARE gate.
    pub mare_margin: f64,
    /// Absolute stage-two MARE gate; overrides `noise + mare_margin`.
    pub max_mare_for_constr_fit: Option<f64>,
    pub lambda: f64,
}

impl FitConfig {
    pub fn constr_fit_gate(&self, noise: f64) -> f64 {
        self.max_mare_for_constr_fit.unwrap_or(noise + self.mare_margin)
    }
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iter: 30,
            stage_one_iter: 20,
            newton_iter: 10,
            constr_penalty_factor: 1.0,
            mare_margin: 0.05,
            max_mare_for_constr_fit: None,
            lambda: 1e-6,
        }
    }
}

const GRAD_TOL: f64 = 1e-8;
const STEP_TOL: f64 = 1e-12;
const LM_INITIAL_DAMPING: f64 = 1e-3;
const LM_MAX_DAMPING: f64 = 1e16;

/// `JᵀJ` and `Jᵀe` of the scaled residual vector, accumulated row by row.
/// `None` when the model or its derivatives are undefined somewhere.
fn normal_equations<const N: usize>(prob: &FitProblem, p: &[f64]) -> Option<(DMatrix<f64>, DVector<f64>)> {
    let k = p.len();
    let dual = seed_first::<N>(p);
    let scale = 1.0 / (prob.data.len() as f64).sqrt();
    let mut jtj = DMatrix::zeros(k, k);
    let mut jte = DVector::zeros(k);
    let mut jac = [0.0; N];
    for (row, (&y, &w)) in prob.data.rows().zip(prob.data.targets().iter().zip(prob.data.weights())) {
        let m: Dual<f64, N> = eval_row(prob.expr, row, &dual);
        let e = (y - m.value) * w * scale;
        for (j, t) in jac[..k].iter_mut().zip(&m.tangents) {
            *j = -t * w * scale;
        }
        if !e.is_finite() || jac[..k].iter().any(|j| !j.is_finite()) {
            return None;
        }
        for a in 0..k {
            jte[a] += jac[a] * e;
            for b in a..k {
                jtj[(a, b)] += jac[a] * jac[b];
            }
        }
    }
    if prob.lambda > 0.0 {
        let s = prob.lambda.sqrt();
        let e = s * l1(p);
        for a in 0..k {
            let ja = s * sign(p[a]);
            jte[a] += ja * e;
            for b in a..k {
                jtj[(a, b)] += ja * s * sign(p[b]);
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            jtj[(a, b)] = jtj[(b, a)];
        }
    }
    Some((jtj, jte))
}

fn sign(v: f64) -> f64 {
    if v < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Damped Gauss–Newton with Marquardt diagonal scaling. Each iteration
/// builds one Jacobian and retries with growing damping until the cost
/// decreases, so the returned cost never exceeds the starting cost.
pub fn fit_lm(prob: &FitProblem, p0: &[f64], max_iter: usize) -> FitResult {
    let k = p0.len();
    let mut p = p0.to_vec();
    let mut cost = prob.lm_cost(&p);
    if !cost.is_finite() {
        return FitResult::failed(p);
    }
    let mut trace = vec![cost];
    if k == 0 {
        return prob.result(p, 0, true, trace);
    }
    let mut mu = LM_INITIAL_DAMPING;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        let Some((jtj, jte)) = with_dim!(k, normal_equations::<N>(prob, &p)) else {
            break;
        };
        // cost = ‖e‖², so its gradient is 2 Jᵀe
        if 2.0 * jte.amax() < GRAD_TOL {
            converged = true;
            break;
        }
        iterations += 1;
        let diag: Vec<f64> = (0..k).map(|a| jtj[(a, a)].max(1e-30)).collect();
        let mut accepted = false;
        let mut tiny_step = false;
        while mu < LM_MAX_DAMPING {
            let mut a = jtj.clone();
            for (j, d) in diag.iter().enumerate() {
                a[(j, j)] += mu * d;
            }
            let Some(chol) = a.cholesky() else {
                mu *= 2.0;
                continue;
            };
            let step = chol.solve(&(-&jte));
            let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(x, d)| x + d).collect();
            let trial_cost = prob.lm_cost(&trial);
            if trial_cost < cost {
                tiny_step = step.norm() < STEP_TOL;
                p = trial;
                cost = trial_cost;
                mu = (mu * 0.5).max(1e-12);
                accepted = true;
                break;
            }
            if step.norm() < STEP_TOL {
                tiny_step = true;
                break;
            }
            mu *= 2.0;
        }
        if accepted {
            trace.push(cost);
        }
        if tiny_step || !accepted {
            converged = tiny_step;
            break;
        }
    }
    prob.result(p, iterations, converged, trace)
}

/// Outcome of [`minimize_newton`].
#[derive(Clone, Debug, PartialEq)]
pub struct NewtonOutcome {
    pub p: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<f64>,
}

const ARMIJO_C: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 20;

/// Newton's method with a positive definite eigenvalue-modified Hessian and
/// Armijo backtracking. `None` when the objective is undefined at `p0`.
pub fn minimize_newton<O: Objective>(obj: &O, p0: &[f64], max_iter: usize) -> Option<NewtonOutcome> {
    let eval = |p: &[f64]| {
        let v: f64 = obj.eval(p);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut p = p0.to_vec();
    let mut value = eval(&p);
    if !value.is_finite() {
        return None;
    }
    let mut trace = vec![value];
    let mut converged = false;
    let mut iterations = 0;
    if p.is_empty() {
        return Some(NewtonOutcome { p, value, iterations, converged: true, trace });
    }
    while iterations < max_iter {
        let (_, grad, hess) = hessian(obj, &p);
        let g = DVector::from_vec(grad);
        if !g.iter().all(|v| v.is_finite()) || !hess.iter().all(|v| v.is_finite()) {
            break;
        }
        if g.amax() < GRAD_TOL {
            converged = true;
            break;
        }
        iterations += 1;
        let dir = newton_direction(hess, &g);
        let slope = g.dot(&dir);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_BACKTRACKS {
            let trial: Vec<f64> = p.iter().zip(dir.iter()).map(|(x, d)| x + t * d).collect();
            let v = eval(&trial);
            if v <= value + ARMIJO_C * t * slope {
                accepted = Some((trial, v));
                break;
            }
            t *= 0.5;
        }
        let Some((trial, v)) = accepted else {
            break;
        };
        let moved = t * dir.norm();
        p = trial;
        value = v;
        trace.push(value);
        if moved < STEP_TOL {
            converged = true;
            break;
        }
    }
    Some(NewtonOutcome { p, value, iterations, converged, trace })
}

/// Solves `H̃ d = −g` where `H̃` has the eigenvectors of `H` and the absolute
/// values of its eigenvalues, floored relative to the largest one.
fn newton_direction(hess: DMatrix<f64>, g: &DVector<f64>) -> DVector<f64> {
    let eig = SymmetricEigen::new(hess);
    let largest = eig.eigenvalues.amax();
    let floor = (largest * 1e-10).max(1e-12);
    let proj = eig.eigenvectors.transpose() * g;
    let scaled = DVector::from_iterator(
        proj.len(),
        proj.iter()
            .zip(eig.eigenvalues.iter())
            .map(|(c, l)| -c / l.abs().max(floor)),
    );
    eig.eigenvectors * scaled
}

/// Newton refinement of `Φ = mse + ρ·violation + λ(Σ|p|)²`.
pub fn fit_penalty_newton(prob: &FitProblem, p0: &[f64], max_iter: usize) -> FitResult {
    match minimize_newton(&PenaltyObjective(prob), p0, max_iter) {
        None => FitResult::failed(p0.to_vec()),
        Some(out) => {
            let mut r = prob.result(out.p, out.iterations, out.converged, out.trace);
            r.constr_vios = prob.violation(&r.params);
            r
        }
    }
}

/// Fits `expr` with the budget and constraint handling of `variant`.
pub fn staged_fit(
    variant: Variant,
    expr: &Expression,
    p0: &[f64],
    data: &Dataset,
    constraints: &ShapeConstraints,
    noise: f64,
    cfg: &FitConfig,
) -> FitResult {
    let prob = FitProblem::new(expr, data)
        .with_lambda(cfg.lambda)
        .with_rho(cfg.constr_penalty_factor);
    match variant {
        Variant::Base => {
            let mut r = fit_lm(&prob, p0, cfg.max_iter);
            r.constr_vios = 0.0;
            r
        }
        Variant::Obj => {
            let mut r = fit_lm(&prob, p0, cfg.max_iter);
            if !r.failed {
                r.constr_vios = constraints.violation(expr, &r.params);
            }
            r
        }
        Variant::Minimobj => {
            let mut first = fit_lm(&prob, p0, cfg.stage_one_iter);
            if first.failed {
                return first;
            }
            first.constr_vios = constraints.violation(expr, &first.params);
            let gate = cfg.constr_fit_gate(noise);
            if first.mare >= gate {
                return first;
            }
            let prob = prob.with_constraints(constraints);
            let second = fit_penalty_newton(&prob, &first.params, cfg.newton_iter);
            if second.failed || !second.constr_vios.is_finite() {
                return first;
            }
            FitResult {
                iterations: first.iterations + second.iterations,
                trace: first.trace.into_iter().chain(second.trace).collect(),
                ..second
            }
        }
    }
}
