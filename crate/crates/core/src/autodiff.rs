//! Forward-mode algorithmic differentiation.
//!
//! [`Dual`] carries a value and `N` tangent slots. Because the tangent and
//! value types are themselves generic over [`Scalar`], duals nest:
//! `Dual<Dual<f64, N>, N>` (see [`HyperDual`]) yields exact second
//! derivatives, and wrapping one more level in a single-direction dual over an
//! input variable yields parameter derivatives of `∂m/∂x_j`.
//!
//! Parameter vectors are short, so the number of tangent slots is a const
//! generic picked at runtime by bucketing the parameter count
//! (see [`with_dim!`](crate::with_dim)).

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

use nalgebra::DMatrix;

use crate::exprtree::Expression;

/// Largest parameter count the differentiation routines accept.
pub const MAX_PARAMS: usize = 32;

/// Number type the expression evaluator, the losses and the constraint
/// penalties are written against.
pub trait Scalar:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn from_f64(v: f64) -> Self;
    /// Plain real value, with all tangent information dropped.
    fn value(&self) -> f64;
    fn exp(self) -> Self;
    fn sqrt(self) -> Self;
    fn ln(self) -> Self;
    fn powf(self, exponent: Self) -> Self;
    /// True when every tangent component (recursively) is exactly zero.
    fn is_constant(&self) -> bool;

    fn is_zero(&self) -> bool {
        self.value() == 0.0 && self.is_constant()
    }

    fn zero() -> Self {
        Self::from_f64(0.0)
    }

    fn one() -> Self {
        Self::from_f64(1.0)
    }

    fn nan() -> Self {
        Self::from_f64(f64::NAN)
    }

    fn abs(self) -> Self {
        if self.value() < 0.0 {
            -self
        } else {
            self
        }
    }

    /// True when any component (value or tangent) is NaN or infinite.
    fn has_non_finite(&self) -> bool;
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(&self) -> f64 {
        *self
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn powf(self, exponent: Self) -> Self {
        f64::powf(self, exponent)
    }
    #[inline]
    fn is_constant(&self) -> bool {
        true
    }
    #[inline]
    fn has_non_finite(&self) -> bool {
        !self.is_finite()
    }
}

/// A value together with `N` directional derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<S: Scalar, const N: usize> {
    pub value: S,
    pub tangents: [S; N],
}

/// Second-order forward number: nested dual over the same directions.
pub type HyperDual<const N: usize> = Dual<Dual<f64, N>, N>;

impl<S: Scalar, const N: usize> Dual<S, N> {
    pub fn constant(value: S) -> Self {
        Self {
            value,
            tangents: [S::zero(); N],
        }
    }

    /// Seeds direction `direction` with a unit tangent.
    pub fn variable(value: S, direction: usize) -> Self {
        let mut tangents = [S::zero(); N];
        tangents[direction] = S::one();
        Self { value, tangents }
    }

    #[inline]
    fn map_tangents(self, f: impl Fn(S) -> S) -> [S; N] {
        let mut out = self.tangents;
        for t in out.iter_mut() {
            *t = f(*t);
        }
        out
    }
}

impl<S: Scalar, const N: usize> Add for Dual<S, N> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        let mut tangents = self.tangents;
        for (t, r) in tangents.iter_mut().zip(rhs.tangents) {
            *t = *t + r;
        }
        Self {
            value: self.value + rhs.value,
            tangents,
        }
    }
}

impl<S: Scalar, const N: usize> Sub for Dual<S, N> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        let mut tangents = self.tangents;
        for (t, r) in tangents.iter_mut().zip(rhs.tangents) {
            *t = *t - r;
        }
        Self {
            value: self.value - rhs.value,
            tangents,
        }
    }
}

impl<S: Scalar, const N: usize> Mul for Dual<S, N> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        let mut tangents = self.tangents;
        for (t, r) in tangents.iter_mut().zip(rhs.tangents) {
            *t = *t * rhs.value + self.value * r;
        }
        Self {
            value: self.value * rhs.value,
            tangents,
        }
    }
}

impl<S: Scalar, const N: usize> Div for Dual<S, N> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        let value = self.value / rhs.value;
        let mut tangents = self.tangents;
        for (t, r) in tangents.iter_mut().zip(rhs.tangents) {
            *t = (*t - value * r) / rhs.value;
        }
        Self { value, tangents }
    }
}

impl<S: Scalar, const N: usize> Neg for Dual<S, N> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self {
            value: -self.value,
            tangents: self.map_tangents(|t| -t),
        }
    }
}

impl<S: Scalar, const N: usize> Scalar for Dual<S, N> {
    #[inline]
    fn from_f64(v: f64) -> Self {
        Self::constant(S::from_f64(v))
    }

    #[inline]
    fn value(&self) -> f64 {
        self.value.value()
    }

    #[inline]
    fn exp(self) -> Self {
        let e = self.value.exp();
        Self {
            value: e,
            tangents: self.map_tangents(|t| t * e),
        }
    }

    fn sqrt(self) -> Self {
        let s = self.value.sqrt();
        if self.is_constant() {
            return Self::constant(s);
        }
        // Not differentiable at zero.
        if s.value() == 0.0 {
            return Self {
                value: s,
                tangents: [S::nan(); N],
            };
        }
        let two_s = s + s;
        Self {
            value: s,
            tangents: self.map_tangents(|t| t / two_s),
        }
    }

    fn ln(self) -> Self {
        let v = self.value;
        Self {
            value: v.ln(),
            tangents: self.map_tangents(|t| t / v),
        }
    }

    fn powf(self, exponent: Self) -> Self {
        let value = self.value.powf(exponent.value);
        let mut tangents = [S::zero(); N];
        if !self.is_constant() {
            let slope = exponent.value * self.value.powf(exponent.value - S::one());
            for (t, d) in tangents.iter_mut().zip(self.tangents) {
                *t = *t + slope * d;
            }
        }
        if !exponent.is_constant() {
            let slope = value * self.value.ln();
            for (t, d) in tangents.iter_mut().zip(exponent.tangents) {
                *t = *t + slope * d;
            }
        }
        Self { value, tangents }
    }

    #[inline]
    fn is_constant(&self) -> bool {
        self.tangents.iter().all(|t| t.is_zero())
    }

    fn has_non_finite(&self) -> bool {
        self.value.has_non_finite() || self.tangents.iter().any(|t| t.has_non_finite())
    }
}

/// Dispatches a generic `fn name<const N: usize>(..)` on a runtime parameter
/// count, choosing the smallest tangent bucket that fits.
#[macro_export]
macro_rules! with_dim {
    ($k:expr, $f:ident :: < N $(, $g:ty)* > ( $($arg:expr),* $(,)? )) => {{
        let k: usize = $k;
        assert!(k <= $crate::autodiff::MAX_PARAMS, "too many parameters: {k}");
        match k {
            0..=1 => $f::<1 $(, $g)*>($($arg),*),
            2 => $f::<2 $(, $g)*>($($arg),*),
            3 => $f::<3 $(, $g)*>($($arg),*),
            4 => $f::<4 $(, $g)*>($($arg),*),
            5..=6 => $f::<6 $(, $g)*>($($arg),*),
            7..=8 => $f::<8 $(, $g)*>($($arg),*),
            9..=12 => $f::<12 $(, $g)*>($($arg),*),
            13..=16 => $f::<16 $(, $g)*>($($arg),*),
            _ => $f::<32 $(, $g)*>($($arg),*),
        }
    }};
}

/// Scalar function of a parameter vector, written once against [`Scalar`]
/// so it can be evaluated plainly or differentiated to first or second order.
pub trait Objective {
    fn eval<S: Scalar>(&self, p: &[S]) -> S;
}

/// Lifts parameters into first-order duals seeded along the identity.
pub fn seed_first<const N: usize>(p: &[f64]) -> Vec<Dual<f64, N>> {
    p.iter()
        .enumerate()
        .map(|(i, &v)| Dual::variable(v, i))
        .collect()
}

/// Lifts parameters into hyper-duals seeded along the identity at both levels.
pub fn seed_second<const N: usize>(p: &[f64]) -> Vec<HyperDual<N>> {
    p.iter()
        .enumerate()
        .map(|(i, &v)| Dual {
            value: Dual::variable(v, i),
            tangents: std::array::from_fn(|j| {
                Dual::constant(if i == j { 1.0 } else { 0.0 })
            }),
        })
        .collect()
}

/// Value and gradient of an objective.
pub fn gradient<O: Objective>(objective: &O, p: &[f64]) -> (f64, Vec<f64>) {
    fn inner<const N: usize, O: Objective>(objective: &O, p: &[f64]) -> (f64, Vec<f64>) {
        let out = objective.eval(&seed_first::<N>(p));
        (out.value, out.tangents[..p.len()].to_vec())
    }
    with_dim!(p.len(), inner::<N, O>(objective, p))
}

/// Value, gradient and exactly symmetric Hessian of an objective.
pub fn hessian<O: Objective>(objective: &O, p: &[f64]) -> (f64, Vec<f64>, DMatrix<f64>) {
    fn inner<const N: usize, O: Objective>(
        objective: &O,
        p: &[f64],
    ) -> (f64, Vec<f64>, DMatrix<f64>) {
        let k = p.len();
        let out = objective.eval(&seed_second::<N>(p));
        let grad = out.value.tangents[..k].to_vec();
        let mut hess = DMatrix::zeros(k, k);
        for i in 0..k {
            for j in i..k {
                let h = out.tangents[i].tangents[j];
                hess[(i, j)] = h;
                hess[(j, i)] = h;
            }
        }
        (out.value.value, grad, hess)
    }
    with_dim!(p.len(), inner::<N, O>(objective, p))
}

/// Evaluates `m` at a data row with parameters of any scalar type.
pub fn eval_row<S: Scalar>(expr: &Expression, row: &[f64], p: &[S]) -> S {
    expr.eval_with(&|j| S::from_f64(row[j]), &|i| p[i])
}

/// Value of `∂m/∂x_var` at a data row, carrying whatever parameter tangents
/// `p` holds.
pub fn partial_x_generic<S: Scalar>(expr: &Expression, row: &[f64], p: &[S], var: usize) -> S {
    let out: Dual<S, 1> = expr.eval_with(
        &|j| {
            if j == var {
                Dual::variable(S::from_f64(row[j]), 0)
            } else {
                Dual::constant(S::from_f64(row[j]))
            }
        },
        &|i| Dual::constant(p[i]),
    );
    if out.value.value().is_nan() {
        return S::nan();
    }
    out.tangents[0]
}

struct RowModel<'a> {
    expr: &'a Expression,
    row: &'a [f64],
}

impl Objective for RowModel<'_> {
    fn eval<S: Scalar>(&self, p: &[S]) -> S {
        eval_row(self.expr, self.row, p)
    }
}

/// `∇_p m(row, p)`; NaN components mark non-differentiable points.
pub fn grad_p(expr: &Expression, row: &[f64], p: &[f64]) -> Vec<f64> {
    gradient(&RowModel { expr, row }, p).1
}

/// `∇²_p m(row, p)`.
pub fn hess_p(expr: &Expression, row: &[f64], p: &[f64]) -> DMatrix<f64> {
    hessian(&RowModel { expr, row }, p).2
}

/// `∂m/∂x_var` at `(row, p)`.
pub fn partial_x(expr: &Expression, row: &[f64], p: &[f64], var: usize) -> f64 {
    partial_x_generic::<f64>(expr, row, p, var)
}

/// `∇_p (∂m/∂x_var)` at `(row, p)`.
pub fn partial_x_grad_p(expr: &Expression, row: &[f64], p: &[f64], var: usize) -> Vec<f64> {
    fn inner<const N: usize>(expr: &Expression, row: &[f64], p: &[f64], var: usize) -> Vec<f64> {
        let out = partial_x_generic(expr, row, &seed_first::<N>(p), var);
        if out.value.is_nan() {
            return vec![f64::NAN; p.len()];
        }
        out.tangents[..p.len()].to_vec()
    }
    with_dim!(p.len(), inner::<N>(expr, row, p, var))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprtree::{BinaryOp, Node};

    struct Square;
    impl Objective for Square {
        fn eval<S: Scalar>(&self, p: &[S]) -> S {
            p[0] * p[0]
        }
    }

    struct Linear;
    impl Objective for Linear {
        fn eval<S: Scalar>(&self, p: &[S]) -> S {
            p[0] * S::from_f64(3.0) - p[1] + S::from_f64(7.0)
        }
    }

    #[test]
    fn quadratic_hessian_is_two() {
        let (v, g, h) = hessian(&Square, &[1.5]);
        assert_eq!(v, 2.25);
        assert_eq!(g, vec![3.0]);
        assert_eq!(h[(0, 0)], 2.0);
    }

    #[test]
    fn linear_objective_has_zero_hessian() {
        let (_, g, h) = hessian(&Linear, &[0.3, -2.0]);
        assert_eq!(g, vec![3.0, -1.0]);
        assert!(h.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn linear_in_parameter() {
        let e = Expression::new(Node::binary(BinaryOp::Mul, Node::Param(0), Node::Var(0)));
        assert_eq!(grad_p(&e, &[3.0], &[2.0]), vec![3.0]);
        assert_eq!(partial_x_grad_p(&e, &[3.0], &[2.0], 0), vec![1.0]);
    }

    #[test]
    fn structural_zero_for_unused_parameter() {
        // p0 * x0 + p1 * 0-free: second parameter appears only in an unused branch.
        let e = Expression::new(Node::binary(
            BinaryOp::Add,
            Node::binary(BinaryOp::Mul, Node::Param(0), Node::Var(0)),
            Node::Param(1),
        ));
        let g = grad_p(&e, &[2.0], &[1.0, 4.0]);
        assert_eq!(g, vec![2.0, 1.0]);
        let e2 = Expression::new(Node::binary(BinaryOp::Mul, Node::Param(0), Node::Var(0)));
        let g2 = grad_p(&e2, &[2.0], &[1.0, 4.0]);
        assert_eq!(g2[1], 0.0);
    }

    #[test]
    fn sum_of_inputs_has_unit_partial() {
        let e = Expression::new(Node::binary(BinaryOp::Add, Node::Var(0), Node::Var(1)));
        assert_eq!(partial_x(&e, &[0.7, -3.0], &[], 0), 1.0);
        assert_eq!(partial_x_grad_p(&e, &[0.7, -3.0], &[1.0], 0), vec![0.0]);
    }

    #[test]
    fn sqrt_at_zero_has_nan_tangent() {
        let e = Expression::new(Node::unary(
            crate::exprtree::UnaryOp::Sqrt,
            Node::binary(BinaryOp::Add, Node::Param(0), Node::Var(0)),
        ));
        let g = grad_p(&e, &[-2.0], &[2.0]);
        assert!(g[0].is_nan());
    }
}
