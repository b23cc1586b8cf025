//! Expression trees: representation, evaluation, complexity and the
//! parameter-rounding simplification applied after every fit.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::autodiff::Scalar;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnaryOp {
    Exp,
    Sqrt,
    Pow2,
    Pow3,
}

impl BinaryOp {
    pub const ALL: [BinaryOp; 5] = [Self::Add, Self::Sub, Self::Mul, Self::Div, Self::Pow];

    pub fn symbol(self) -> &'static str {
        match self {
            Self::Add => "+",
            Self::Sub => "-",
            Self::Mul => "*",
            Self::Div => "/",
            Self::Pow => "^",
        }
    }

    #[inline]
    pub fn apply<S: Scalar>(self, a: S, b: S) -> S {
        match self {
            Self::Add => a + b,
            Self::Sub => a - b,
            Self::Mul => a * b,
            Self::Div => a / b,
            Self::Pow => a.powf(b),
        }
    }
}

impl UnaryOp {
    pub const ALL: [UnaryOp; 4] = [Self::Exp, Self::Sqrt, Self::Pow2, Self::Pow3];

    pub fn name(self) -> &'static str {
        match self {
            Self::Exp => "exp",
            Self::Sqrt => "sqrt",
            Self::Pow2 => "pow2",
            Self::Pow3 => "pow3",
        }
    }

    #[inline]
    pub fn apply<S: Scalar>(self, a: S) -> S {
        match self {
            Self::Exp => a.exp(),
            Self::Sqrt => a.sqrt(),
            Self::Pow2 => a * a,
            Self::Pow3 => a * a * a,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Binary(BinaryOp, Box<Node>, Box<Node>),
    Unary(UnaryOp, Box<Node>),
    /// 0-based column into the data matrix.
    Var(usize),
    /// Index into the parameter vector.
    Param(usize),
    Const(f64),
}

impl Node {
    pub fn binary(op: BinaryOp, left: Node, right: Node) -> Node {
        Node::Binary(op, Box::new(left), Box::new(right))
    }

    pub fn unary(op: UnaryOp, child: Node) -> Node {
        Node::Unary(op, Box::new(child))
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, Node::Var(_) | Node::Param(_) | Node::Const(_))
    }

    /// Number of operator and operand nodes.
    pub fn size(&self) -> usize {
        match self {
            Node::Binary(_, l, r) => 1 + l.size() + r.size(),
            Node::Unary(_, c) => 1 + c.size(),
            _ => 1,
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Node::Binary(_, l, r) => 1 + l.depth().max(r.depth()),
            Node::Unary(_, c) => 1 + c.depth(),
            _ => 1,
        }
    }

    pub fn contains_var(&self) -> bool {
        match self {
            Node::Binary(_, l, r) => l.contains_var() || r.contains_var(),
            Node::Unary(_, c) => c.contains_var(),
            Node::Var(_) => true,
            _ => false,
        }
    }

    fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Node)) {
        f(self);
        match self {
            Node::Binary(_, l, r) => {
                l.visit(f);
                r.visit(f);
            }
            Node::Unary(_, c) => c.visit(f),
            _ => {}
        }
    }

    fn visit_mut(&mut self, f: &mut impl FnMut(&mut Node)) {
        f(self);
        match self {
            Node::Binary(_, l, r) => {
                l.visit_mut(f);
                r.visit_mut(f);
            }
            Node::Unary(_, c) => c.visit_mut(f),
            _ => {}
        }
    }

    /// Subtree at preorder position `index`.
    pub fn get(&self, index: usize) -> Option<&Node> {
        let mut seen = 0;
        self.find(index, &mut seen)
    }

    fn find(&self, index: usize, seen: &mut usize) -> Option<&Node> {
        if *seen == index {
            return Some(self);
        }
        *seen += 1;
        match self {
            Node::Binary(_, l, r) => l.find(index, seen).or_else(|| r.find(index, seen)),
            Node::Unary(_, c) => c.find(index, seen),
            _ => None,
        }
    }

    pub fn get_mut(&mut self, index: usize) -> Option<&mut Node> {
        let mut seen = 0;
        self.find_mut(index, &mut seen)
    }

    fn find_mut(&mut self, index: usize, seen: &mut usize) -> Option<&mut Node> {
        if *seen == index {
            return Some(self);
        }
        *seen += 1;
        match self {
            Node::Binary(_, l, r) => match l.find_mut(index, seen) {
                Some(n) => Some(n),
                None => r.find_mut(index, seen),
            },
            Node::Unary(_, c) => c.find_mut(index, seen),
            _ => None,
        }
    }

    /// Preorder positions of every node that is the exponent of a `pow`.
    pub fn exponent_positions(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut pos = 0;
        self.collect_exponents(&mut pos, false, &mut out);
        out
    }

    fn collect_exponents(&self, pos: &mut usize, is_exponent: bool, out: &mut Vec<usize>) {
        if is_exponent {
            out.push(*pos);
        }
        *pos += 1;
        match self {
            Node::Binary(op, l, r) => {
                l.collect_exponents(pos, false, out);
                r.collect_exponents(pos, *op == BinaryOp::Pow, out);
            }
            Node::Unary(_, c) => c.collect_exponents(pos, false, out),
            _ => {}
        }
    }

    /// Every `pow` exponent is a parameter or constant.
    pub fn exponents_are_params(&self) -> bool {
        match self {
            Node::Binary(op, l, r) => {
                if *op == BinaryOp::Pow && !matches!(**r, Node::Param(_) | Node::Const(_)) {
                    return false;
                }
                l.exponents_are_params() && r.exponents_are_params()
            }
            Node::Unary(_, c) => c.exponents_are_params(),
            _ => true,
        }
    }

    #[inline]
    fn eval<S, V, P>(&self, var: &V, par: &P) -> S
    where
        S: Scalar,
        V: Fn(usize) -> S,
        P: Fn(usize) -> S,
    {
        let out = match self {
            Node::Binary(op, l, r) => {
                let a = l.eval(var, par);
                if a.value().is_nan() {
                    return a;
                }
                let b = r.eval(var, par);
                if b.value().is_nan() {
                    return b;
                }
                op.apply(a, b)
            }
            Node::Unary(op, c) => {
                let a = c.eval(var, par);
                if a.value().is_nan() {
                    return a;
                }
                op.apply(a)
            }
            Node::Var(j) => var(*j),
            Node::Param(i) => par(*i),
            Node::Const(c) => S::from_f64(*c),
        };
        if out.value().is_finite() {
            out
        } else {
            S::nan()
        }
    }
}

/// A candidate model: an operator tree over variables, parameters and
/// constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Expression {
    root: Node,
}

impl Expression {
    pub fn new(root: Node) -> Self {
        Self { root }
    }

    /// Renumbers parameters in left-to-right order, pulling their values from
    /// `pool` (indexed by the parameter ids currently in `root`).
    pub fn normalize(mut root: Node, pool: &[f64]) -> (Expression, Vec<f64>) {
        let mut values = Vec::new();
        root.visit_mut(&mut |n| {
            if let Node::Param(i) = n {
                values.push(pool[*i]);
                *i = values.len() - 1;
            }
        });
        (Expression { root }, values)
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn into_root(self) -> Node {
        self.root
    }

    pub fn complexity(&self) -> usize {
        self.root.size()
    }

    pub fn n_params(&self) -> usize {
        let mut n = 0;
        self.root.visit(&mut |node| {
            if let Node::Param(i) = node {
                n = n.max(i + 1);
            }
        });
        n
    }

    /// Highest variable index used, plus one.
    pub fn n_vars_used(&self) -> usize {
        let mut n = 0;
        self.root.visit(&mut |node| {
            if let Node::Var(j) = node {
                n = n.max(j + 1);
            }
        });
        n
    }

    pub fn validate(&self, n_vars: usize, n_params: usize) -> Result<()> {
        let mut err = None;
        self.root.visit(&mut |node| match node {
            Node::Var(j) if *j >= n_vars => {
                err.get_or_insert(Error::InvalidExpression(format!(
                    "variable index {j} out of range for {n_vars} variables"
                )));
            }
            Node::Param(i) if *i >= n_params => {
                err.get_or_insert(Error::InvalidExpression(format!(
                    "parameter index {i} out of range for {n_params} parameters"
                )));
            }
            _ => {}
        });
        err.map_or(Ok(()), Err)
    }

    pub fn exponents_are_params(&self) -> bool {
        self.root.exponents_are_params()
    }

    /// Generic evaluation; `var` and `par` supply leaf values.
    #[inline]
    pub fn eval_with<S, V, P>(&self, var: &V, par: &P) -> S
    where
        S: Scalar,
        V: Fn(usize) -> S,
        P: Fn(usize) -> S,
    {
        self.root.eval(var, par)
    }

    /// `m(row, p)`; NaN when the expression leaves its real domain.
    pub fn evaluate(&self, row: &[f64], p: &[f64]) -> f64 {
        self.eval_with(&|j| row[j], &|i| p[i])
    }

    /// Infix text with explicit parentheses. Parameters print as their values
    /// (17 significant digits) when `p` is given, otherwise as `p<i>`.
    pub fn to_text(&self, p: Option<&[f64]>, var_names: Option<&[String]>) -> String {
        let mut out = String::new();
        write_node(&self.root, p, var_names, &mut out);
        out
    }

    /// Canonical serialization used in logs, result files and hall-of-fame
    /// deduplication.
    pub fn canonical(&self, p: &[f64]) -> String {
        self.to_text(Some(p), None)
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text(None, None))
    }
}

fn write_number(v: f64, out: &mut String) {
    let _ = write!(out, "{v:.16e}");
}

fn write_node(node: &Node, p: Option<&[f64]>, names: Option<&[String]>, out: &mut String) {
    match node {
        Node::Binary(op, l, r) => {
            out.push('(');
            write_node(l, p, names, out);
            let _ = write!(out, " {} ", op.symbol());
            write_node(r, p, names, out);
            out.push(')');
        }
        Node::Unary(op, c) => {
            out.push_str(op.name());
            out.push('(');
            write_node(c, p, names, out);
            out.push(')');
        }
        Node::Var(j) => match names.and_then(|n| n.get(*j)) {
            Some(name) => out.push_str(name),
            None => {
                let _ = write!(out, "x{j}");
            }
        },
        Node::Param(i) => match p.and_then(|p| p.get(*i)) {
            Some(&v) => write_number(v, out),
            None => {
                let _ = write!(out, "p{i}");
            }
        },
        Node::Const(c) => write_number(*c, out),
    }
}

/// Operator kinds available to the search for one problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionSet {
    pub binary: Vec<BinaryOp>,
    pub unary: Vec<UnaryOp>,
}

impl FunctionSet {
    pub fn new(binary: Vec<BinaryOp>, unary: Vec<UnaryOp>) -> Result<Self> {
        if binary.is_empty() && unary.is_empty() {
            return Err(Error::Config("function set is empty".into()));
        }
        Ok(Self { binary, unary })
    }

    /// Parses operator names such as `+`, `^`, `exp`, `pow2`.
    pub fn parse(names: &[&str]) -> Result<Self> {
        let mut binary = Vec::new();
        let mut unary = Vec::new();
        for &name in names {
            match name.trim() {
                "+" => binary.push(BinaryOp::Add),
                "-" => binary.push(BinaryOp::Sub),
                "*" => binary.push(BinaryOp::Mul),
                "/" => binary.push(BinaryOp::Div),
                "^" => binary.push(BinaryOp::Pow),
                "exp" => unary.push(UnaryOp::Exp),
                "sqrt" => unary.push(UnaryOp::Sqrt),
                "pow2" => unary.push(UnaryOp::Pow2),
                "pow3" => unary.push(UnaryOp::Pow3),
                other => return Err(Error::Config(format!("unknown operator `{other}`"))),
            }
        }
        Self::new(binary, unary)
    }
}

/// Rounds parameters within `threshold` of zero or one to constants, then
/// collapses the resulting algebraic identities and folds constant subtrees.
/// Returns the simplified tree with its surviving parameters renumbered.
pub fn drastic_simplify(expr: &Expression, p: &[f64], threshold: f64) -> (Expression, Vec<f64>) {
    let mut root = expr.root.clone();
    let mut changed = false;
    root.visit_mut(&mut |n| {
        if let Node::Param(i) = n {
            let v = p[*i];
            if v.abs() < threshold {
                *n = Node::Const(0.0);
                changed = true;
            } else if (v - 1.0).abs() < threshold {
                *n = Node::Const(1.0);
                changed = true;
            }
        }
    });
    if !changed {
        return (expr.clone(), p.to_vec());
    }
    let root = collapse(root);
    Expression::normalize(root, p)
}

fn is_const(n: &Node, c: f64) -> bool {
    matches!(n, Node::Const(v) if *v == c)
}

fn collapse(node: Node) -> Node {
    match node {
        Node::Binary(op, l, r) => {
            let l = collapse(*l);
            let r = collapse(*r);
            if let (Node::Const(a), Node::Const(b)) = (&l, &r) {
                let v = op.apply(*a, *b);
                if v.is_finite() {
                    return Node::Const(v);
                }
            }
            match op {
                BinaryOp::Add if is_const(&r, 0.0) => l,
                BinaryOp::Add if is_const(&l, 0.0) => r,
                BinaryOp::Sub if is_const(&r, 0.0) => l,
                BinaryOp::Mul if is_const(&r, 1.0) => l,
                BinaryOp::Mul if is_const(&l, 1.0) => r,
                BinaryOp::Mul if is_const(&l, 0.0) || is_const(&r, 0.0) => Node::Const(0.0),
                BinaryOp::Div if is_const(&r, 1.0) => l,
                BinaryOp::Div if is_const(&l, 0.0) => Node::Const(0.0),
                BinaryOp::Pow if is_const(&r, 1.0) => l,
                BinaryOp::Pow if is_const(&r, 0.0) => Node::Const(1.0),
                BinaryOp::Pow if is_const(&l, 1.0) => Node::Const(1.0),
                _ => Node::Binary(op, Box::new(l), Box::new(r)),
            }
        }
        Node::Unary(op, c) => {
            let c = collapse(*c);
            if let Node::Const(a) = c {
                let v = op.apply(a);
                if v.is_finite() {
                    return Node::Const(v);
                }
            }
            Node::Unary(op, Box::new(c))
        }
        leaf => leaf,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use BinaryOp::*;
    use UnaryOp::*;

    fn magman() -> Expression {
        Expression::new(Node::binary(
            Div,
            Node::binary(Mul, Node::binary(Mul, Node::Param(0), Node::Var(0)), Node::Var(1)),
            Node::unary(
                Pow3,
                Node::binary(Add, Node::unary(Pow2, Node::Var(0)), Node::Param(1)),
            ),
        ))
    }

    fn gaussian() -> Expression {
        Expression::new(Node::binary(
            Div,
            Node::unary(
                Exp,
                Node::binary(
                    Mul,
                    Node::Param(0),
                    Node::unary(Pow2, Node::binary(Div, Node::Var(0), Node::Var(1))),
                ),
            ),
            Node::binary(Mul, Node::Param(1), Node::Var(1)),
        ))
    }

    #[test]
    fn magman_ground_truth_value() {
        let v = magman().evaluate(&[1.0, 1.0], &[5.25, 1.75]);
        assert!((v - 5.25 / 2.75f64.powi(3)).abs() < 1e-15);
        assert!((v - 0.252442).abs() < 1e-6);
    }

    #[test]
    fn gaussian_ground_truth_value() {
        let p = [-0.5, (2.0 * std::f64::consts::PI).sqrt()];
        let v = gaussian().evaluate(&[0.0, 1.0], &p);
        assert!((v - 0.398942).abs() < 1e-6);
        assert_eq!(gaussian().complexity(), 11);
    }

    #[test]
    fn unused_nan_input_is_ignored() {
        let e = Expression::new(Node::binary(Mul, Node::Param(0), Node::Var(0)));
        assert_eq!(e.evaluate(&[2.0, f64::NAN], &[3.0]), 6.0);
    }

    #[test]
    fn domain_violations_give_nan() {
        let div0 = Expression::new(Node::binary(Div, Node::Var(0), Node::Const(0.0)));
        assert!(div0.evaluate(&[1.0], &[]).is_nan());
        let sqrt_neg = Expression::new(Node::unary(Sqrt, Node::Var(0)));
        assert!(sqrt_neg.evaluate(&[-1.0], &[]).is_nan());
        let zero_neg = Expression::new(Node::binary(Pow, Node::Var(0), Node::Param(0)));
        assert!(zero_neg.evaluate(&[0.0], &[-1.0]).is_nan());
        assert!(zero_neg.evaluate(&[-2.0], &[0.5]).is_nan());
        assert_eq!(zero_neg.evaluate(&[-2.0], &[3.0]), -8.0);
        // inf never escapes, even when a later op would map it back to a finite value
        let inv_inv = Expression::new(Node::binary(
            Div,
            Node::Const(1.0),
            Node::binary(Div, Node::Const(1.0), Node::Var(0)),
        ));
        assert!(inv_inv.evaluate(&[0.0], &[]).is_nan());
    }

    #[test]
    fn single_leaf_complexity() {
        assert_eq!(Expression::new(Node::Var(0)).complexity(), 1);
    }

    #[test]
    fn validate_catches_bad_indices() {
        assert!(magman().validate(2, 2).is_ok());
        assert!(magman().validate(1, 2).is_err());
        assert!(magman().validate(2, 1).is_err());
    }

    #[test]
    fn normalize_renumbers_left_to_right() {
        let root = Node::binary(Add, Node::Param(3), Node::binary(Mul, Node::Param(0), Node::Param(3)));
        let (e, p) = Expression::normalize(root, &[10.0, 11.0, 12.0, 13.0]);
        assert_eq!(p, vec![13.0, 10.0, 13.0]);
        assert_eq!(e.to_text(None, None), "(p0 + (p1 * p2))");
    }

    #[test]
    fn exponent_rule() {
        let ok = Node::binary(Pow, Node::Var(0), Node::Param(0));
        let bad = Node::binary(Pow, Node::Var(0), Node::Var(1));
        assert!(ok.exponents_are_params());
        assert!(!bad.exponents_are_params());
        assert_eq!(ok.exponent_positions(), vec![2]);
    }

    #[test]
    fn canonical_text_round_trips_values() {
        let e = Expression::new(Node::binary(Mul, Node::Param(0), Node::Var(0)));
        let s = e.canonical(&[0.1 + 0.2]);
        let num: f64 = s[1..s.find(' ').unwrap()].parse().unwrap();
        assert_eq!(num, 0.1 + 0.2);
    }

    #[test]
    fn simplify_near_one_exponent() {
        let e = Expression::new(Node::binary(Pow, Node::Var(0), Node::Param(0)));
        let (s, p) = drastic_simplify(&e, &[1.0 + 3e-8], 1e-7);
        assert_eq!(s.root(), &Node::Var(0));
        assert!(p.is_empty());
    }

    #[test]
    fn simplify_untouched_when_threshold_not_met() {
        let e = magman();
        let (s, p) = drastic_simplify(&e, &[0.5, 0.5], 1e-7);
        assert_eq!(s, e);
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn simplify_near_zero_factor() {
        let e = Expression::new(Node::binary(Mul, Node::Var(0), Node::Param(0)));
        let (s, p) = drastic_simplify(&e, &[2e-8], 1e-7);
        assert_eq!(s.root(), &Node::Const(0.0));
        assert!(p.is_empty());
    }

    #[test]
    fn simplify_reindexes_survivors() {
        // p0 * x0 + p1 * x1 with p0 ≈ 1
        let e = Expression::new(Node::binary(
            Add,
            Node::binary(Mul, Node::Param(0), Node::Var(0)),
            Node::binary(Mul, Node::Param(1), Node::Var(1)),
        ));
        let (s, p) = drastic_simplify(&e, &[1.0 - 1e-9, 4.0], 1e-7);
        assert_eq!(s.to_text(None, None), "(x0 + (p0 * x1))");
        assert_eq!(p, vec![4.0]);
    }

    #[test]
    fn function_set_parsing() {
        let fs = FunctionSet::parse(&["+", "-", "*", "/", "^", "exp", "pow2", "sqrt"]).unwrap();
        assert_eq!(fs.binary.len(), 5);
        assert_eq!(fs.unary, vec![Exp, Pow2, Sqrt]);
        assert!(FunctionSet::parse(&["sin"]).is_err());
        assert!(FunctionSet::parse(&[]).is_err());
    }
}
