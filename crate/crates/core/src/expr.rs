//! Weighted expression trees.
//!
//! Every child edge carries a multiplicative weight, so a node computes
//! `op(w_1 * child_1, ..., w_k * child_k)`. Division, square root, logarithm
//! and exponential are protected, and every node output is bounded by
//! [`VALUE_LIMIT`], so evaluation of finite inputs never yields NaN or Inf.
//! Wherever a protection is active the local derivative is zero.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::rng::Rng;

/// Denominators and logarithm arguments at or below this magnitude are
/// protected.
pub const PROTECT_EPS: f64 = 1e-12;
/// Largest argument passed to `exp`.
pub const EXP_ARG_MAX: f64 = 32.0;
/// Node outputs are clamped to `[-VALUE_LIMIT, VALUE_LIMIT]`.
pub const VALUE_LIMIT: f64 = 1e30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("variable index {index} out of range for {n_features} features")]
    VarOutOfRange { index: usize, n_features: usize },
    #[error("{op} expects {expected} children, got {got}")]
    Arity {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite edge weight")]
    NonFiniteWeight,
}

pub type Result<T> = std::result::Result<T, ExprError>;

/// Payload-free operator kind, used as the key of cost tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    Div,
    Square,
    Cube,
    Sqrt,
    Sin,
    Cos,
    Exp,
    Log,
    Var,
    Const,
}

impl OpKind {
    pub const ALL: [OpKind; 13] = [
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Div,
        OpKind::Square,
        OpKind::Cube,
        OpKind::Sqrt,
        OpKind::Sin,
        OpKind::Cos,
        OpKind::Exp,
        OpKind::Log,
        OpKind::Var,
        OpKind::Const,
    ];

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Square,
    Cube,
    Sqrt,
    Sin,
    Cos,
    Exp,
    Log,
    Var(usize),
    Const(f64),
}

impl Op {
    pub const BINARY: [Op; 4] = [Op::Add, Op::Sub, Op::Mul, Op::Div];
    pub const UNARY: [Op; 7] = [Op::Square, Op::Cube, Op::Sqrt, Op::Sin, Op::Cos, Op::Exp, Op::Log];

    pub fn arity(&self) -> usize {
        match self {
            Op::Add | Op::Sub | Op::Mul | Op::Div => 2,
            Op::Square | Op::Cube | Op::Sqrt | Op::Sin | Op::Cos | Op::Exp | Op::Log => 1,
            Op::Var(_) | Op::Const(_) => 0,
        }
    }

    pub fn kind(&self) -> OpKind {
        match self {
            Op::Add => OpKind::Add,
            Op::Sub => OpKind::Sub,
            Op::Mul => OpKind::Mul,
            Op::Div => OpKind::Div,
            Op::Square => OpKind::Square,
            Op::Cube => OpKind::Cube,
            Op::Sqrt => OpKind::Sqrt,
            Op::Sin => OpKind::Sin,
            Op::Cos => OpKind::Cos,
            Op::Exp => OpKind::Exp,
            Op::Log => OpKind::Log,
            Op::Var(_) => OpKind::Var,
            Op::Const(_) => OpKind::Const,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Square => "square",
            Op::Cube => "cube",
            Op::Sqrt => "sqrt",
            Op::Sin => "sin",
            Op::Cos => "cos",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Var(_) => "var",
            Op::Const(_) => "const",
        }
    }

    /// Protected scalar semantics. `b` is ignored by unary operators.
    fn apply(&self, a: f64, b: f64) -> f64 {
        match self {
            Op::Add => a + b,
            Op::Sub => a - b,
            Op::Mul => a * b,
            Op::Div => {
                if b.abs() > PROTECT_EPS {
                    a / b
                } else {
                    1.0
                }
            }
            Op::Square => a * a,
            Op::Cube => a * a * a,
            Op::Sqrt => a.abs().sqrt(),
            Op::Sin => a.sin(),
            Op::Cos => a.cos(),
            Op::Exp => a.min(EXP_ARG_MAX).exp(),
            Op::Log => {
                if a.abs() > PROTECT_EPS {
                    a.abs().ln()
                } else {
                    0.0
                }
            }
            Op::Var(_) | Op::Const(_) => unreachable!("leaves have no inputs"),
        }
    }

    /// Partial derivatives of [`Op::apply`] with respect to its inputs, zero
    /// where a protection is active.
    fn partials(&self, a: f64, b: f64) -> (f64, f64) {
        match self {
            Op::Add => (1.0, 1.0),
            Op::Sub => (1.0, -1.0),
            Op::Mul => (b, a),
            Op::Div => {
                if b.abs() > PROTECT_EPS {
                    (1.0 / b, -a / (b * b))
                } else {
                    (0.0, 0.0)
                }
            }
            Op::Square => (2.0 * a, 0.0),
            Op::Cube => (3.0 * a * a, 0.0),
            Op::Sqrt => {
                if a.abs() > PROTECT_EPS {
                    (a.signum() / (2.0 * a.abs().sqrt()), 0.0)
                } else {
                    (0.0, 0.0)
                }
            }
            Op::Sin => (a.cos(), 0.0),
            Op::Cos => (-a.sin(), 0.0),
            Op::Exp => {
                if a < EXP_ARG_MAX {
                    (a.exp(), 0.0)
                } else {
                    (0.0, 0.0)
                }
            }
            Op::Log => {
                if a.abs() > PROTECT_EPS {
                    (1.0 / a, 0.0)
                } else {
                    (0.0, 0.0)
                }
            }
            Op::Var(_) | Op::Const(_) => (0.0, 0.0),
        }
    }

    /// Distance of the inputs from the nearest protection boundary, scaled by
    /// the input magnitude where that is meaningful.
    fn protection_slack(&self, a: f64, b: f64) -> f64 {
        match self {
            Op::Div => b.abs(),
            Op::Sqrt | Op::Log => a.abs(),
            Op::Exp => EXP_ARG_MAX - a,
            _ => f64::INFINITY,
        }
    }
}

/// Clamps a node output to the value limit. The flag reports whether the
/// clamp was active.
fn guard(v: f64) -> (f64, bool) {
    if v.is_nan() {
        (0.0, true)
    } else if v > VALUE_LIMIT {
        (VALUE_LIMIT, true)
    } else if v < -VALUE_LIMIT {
        (-VALUE_LIMIT, true)
    } else {
        (v, false)
    }
}

/// Operator costs for the recursive complexity measure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComplexityTable {
    costs: [u64; 13],
}

impl Default for ComplexityTable {
    fn default() -> Self {
        let mut t = Self { costs: [1; 13] };
        for (kind, cost) in [
            (OpKind::Add, 1),
            (OpKind::Sub, 1),
            (OpKind::Mul, 2),
            (OpKind::Div, 2),
            (OpKind::Square, 2),
            (OpKind::Sqrt, 2),
            (OpKind::Sin, 3),
            (OpKind::Cos, 3),
            (OpKind::Cube, 3),
            (OpKind::Exp, 4),
            (OpKind::Log, 4),
            (OpKind::Var, 1),
            (OpKind::Const, 1),
        ] {
            t.costs[kind.index()] = cost;
        }
        t
    }
}

impl ComplexityTable {
    pub fn cost(&self, kind: OpKind) -> u64 {
        self.costs[kind.index()]
    }

    /// Sets a cost; zero is raised to 1 to keep costs positive.
    pub fn set(&mut self, kind: OpKind, cost: u64) {
        self.costs[kind.index()] = cost.max(1);
    }
}

/// Position of an edge weight: the path of child indices from the root to the
/// node owning the edge, then the edge index.
///
/// The derived ordering enumerates weights in the same order as
/// [`ExprTree::weights`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct WeightKey {
    pub path: Vec<usize>,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExprTree {
    op: Op,
    children: Vec<ExprTree>,
    weights: Vec<f64>,
}

/// Per-node forward values kept for the reverse pass.
struct Tape {
    values: Vec<f64>,
    clamped: Vec<bool>,
    children: Vec<Tape>,
}

impl ExprTree {
    /// Builds a node with unit weights on every child edge.
    pub fn new(op: Op, children: Vec<ExprTree>) -> Result<Self> {
        if children.len() != op.arity() {
            return Err(ExprError::Arity {
                op: op.name(),
                expected: op.arity(),
                got: children.len(),
            });
        }
        let weights = vec![1.0; children.len()];
        Ok(Self { op, children, weights })
    }

    pub fn var(index: usize) -> Self {
        Self {
            op: Op::Var(index),
            children: Vec::new(),
            weights: Vec::new(),
        }
    }

    pub fn constant(value: f64) -> Self {
        Self {
            op: Op::Const(value),
            children: Vec::new(),
            weights: Vec::new(),
        }
    }

    /// Panics if `op` is not unary.
    pub fn unary(op: Op, child: ExprTree) -> Self {
        Self::new(op, vec![child]).expect("unary operator")
    }

    /// Panics if `op` is not binary.
    pub fn binary(op: Op, left: ExprTree, right: ExprTree) -> Self {
        Self::new(op, vec![left, right]).expect("binary operator")
    }

    /// Replaces this node's edge weights. Length must equal the arity.
    pub fn with_weights(mut self, weights: &[f64]) -> Result<Self> {
        if weights.len() != self.weights.len() {
            return Err(ExprError::Arity {
                op: self.op.name(),
                expected: self.weights.len(),
                got: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(ExprError::NonFiniteWeight);
        }
        self.weights.copy_from_slice(weights);
        Ok(self)
    }

    pub fn op(&self) -> Op {
        self.op
    }

    pub fn children(&self) -> &[ExprTree] {
        &self.children
    }

    pub fn edge_weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// Node count, leaves included.
    pub fn size(&self) -> usize {
        1 + self.children.iter().map(ExprTree::size).sum::<usize>()
    }

    /// Depth of the tree; a single leaf has depth 1.
    pub fn depth(&self) -> usize {
        1 + self.children.iter().map(ExprTree::depth).max().unwrap_or(0)
    }

    /// Leaves cost their table entry; internal nodes cost their table entry
    /// times the sum of their children's complexities.
    pub fn complexity(&self, table: &ComplexityTable) -> u64 {
        let own = table.cost(self.op.kind());
        if self.children.is_empty() {
            own
        } else {
            let sum: u64 = self.children.iter().map(|c| c.complexity(table)).sum();
            own.saturating_mul(sum)
        }
    }

    pub fn max_var_index(&self) -> Option<usize> {
        let own = match self.op {
            Op::Var(i) => Some(i),
            _ => None,
        };
        self.children
            .iter()
            .filter_map(ExprTree::max_var_index)
            .chain(own)
            .max()
    }

    fn check_vars(&self, n_features: usize) -> Result<()> {
        match self.max_var_index() {
            Some(index) if index >= n_features => Err(ExprError::VarOutOfRange { index, n_features }),
            _ => Ok(()),
        }
    }

    /// Evaluates the tree on every row of `x`.
    pub fn evaluate(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        self.check_vars(x.ncols())?;
        Ok(self.forward(x, x.nrows()).values)
    }

    fn forward(&self, x: &DMatrix<f64>, rows: usize) -> Tape {
        match self.op {
            Op::Var(j) => Tape {
                values: x.as_slice()[j * rows..(j + 1) * rows].to_vec(),
                clamped: vec![false; rows],
                children: Vec::new(),
            },
            Op::Const(c) => Tape {
                values: vec![c; rows],
                clamped: vec![false; rows],
                children: Vec::new(),
            },
            op => {
                let children: Vec<Tape> = self.children.iter().map(|c| c.forward(x, rows)).collect();
                let mut values = Vec::with_capacity(rows);
                let mut clamped = Vec::with_capacity(rows);
                for r in 0..rows {
                    let (a, b) = self.inputs(&children, r);
                    let (v, hit) = guard(op.apply(a, b));
                    values.push(v);
                    clamped.push(hit);
                }
                Tape {
                    values,
                    clamped,
                    children,
                }
            }
        }
    }

    /// Weighted inputs to this node at row `r`.
    fn inputs(&self, children: &[Tape], r: usize) -> (f64, f64) {
        let a = self.weights[0] * children[0].values[r];
        let b = if children.len() > 1 {
            self.weights[1] * children[1].values[r]
        } else {
            0.0
        };
        (a, b)
    }

    /// Partial derivative of the tree output with respect to every edge
    /// weight, one value per row of `x`. Leaves have no edges, so a single
    /// leaf yields an empty map.
    pub fn gradient(&self, x: &DMatrix<f64>) -> Result<BTreeMap<WeightKey, Vec<f64>>> {
        self.check_vars(x.ncols())?;
        let rows = x.nrows();
        let tape = self.forward(x, rows);
        let mut out = BTreeMap::new();
        let mut path = Vec::new();
        self.backward(&tape, vec![1.0; rows], &mut path, &mut out);
        Ok(out)
    }

    fn backward(&self, tape: &Tape, adjoint: Vec<f64>, path: &mut Vec<usize>, out: &mut BTreeMap<WeightKey, Vec<f64>>) {
        if self.children.is_empty() {
            return;
        }
        let rows = adjoint.len();
        let arity = self.children.len();
        let mut child_adj = vec![vec![0.0; rows]; arity];
        let mut weight_grad = vec![vec![0.0; rows]; arity];
        for r in 0..rows {
            if tape.clamped[r] || adjoint[r] == 0.0 {
                continue;
            }
            let (a, b) = self.inputs(&tape.children, r);
            let (da, db) = self.op.partials(a, b);
            for (k, d) in [da, db].into_iter().take(arity).enumerate() {
                let g = adjoint[r] * d;
                weight_grad[k][r] = g * tape.children[k].values[r];
                child_adj[k][r] = g * self.weights[k];
            }
        }
        for (k, g) in weight_grad.into_iter().enumerate() {
            out.insert(
                WeightKey {
                    path: path.clone(),
                    index: k,
                },
                g,
            );
        }
        for (k, (child, adj)) in self.children.iter().zip(child_adj).enumerate() {
            path.push(k);
            child.backward(&tape.children[k], adj, path, out);
            path.pop();
        }
    }

    /// Per-row flag: true when some node's protected input lies within
    /// `margin` of a protection boundary, or some node output is within a
    /// factor of 2 of the value limit. Useful to exclude rows from
    /// derivative checks.
    pub fn near_protection(&self, x: &DMatrix<f64>, margin: f64) -> Result<Vec<bool>> {
        self.check_vars(x.ncols())?;
        let rows = x.nrows();
        let tape = self.forward(x, rows);
        let mut flags = vec![false; rows];
        self.mark_near(&tape, margin, &mut flags);
        Ok(flags)
    }

    fn mark_near(&self, tape: &Tape, margin: f64, flags: &mut [bool]) {
        if self.children.is_empty() {
            return;
        }
        for (r, flag) in flags.iter_mut().enumerate() {
            let (a, b) = self.inputs(&tape.children, r);
            if self.op.protection_slack(a, b) <= margin || tape.clamped[r] || tape.values[r].abs() >= VALUE_LIMIT / 2.0
            {
                *flag = true;
            }
        }
        for (child, t) in self.children.iter().zip(&tape.children) {
            child.mark_near(t, margin, flags);
        }
    }

    /// All edge weights in preorder: a node's own edges, then each child's
    /// subtree in order. Matches the ordering of [`WeightKey`].
    pub fn weights(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.collect_weights(&mut out);
        out
    }

    fn collect_weights(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.weights);
        for c in &self.children {
            c.collect_weights(out);
        }
    }

    pub fn n_weights(&self) -> usize {
        self.weights.len() + self.children.iter().map(ExprTree::n_weights).sum::<usize>()
    }

    /// Overwrites all edge weights from a preorder slice as produced by
    /// [`ExprTree::weights`]. Returns the number consumed.
    pub fn set_weights(&mut self, values: &[f64]) -> usize {
        let k = self.weights.len();
        self.weights.copy_from_slice(&values[..k]);
        let mut used = k;
        for c in &mut self.children {
            used += c.set_weights(&values[used..]);
        }
        used
    }

    /// Node at preorder position `idx`.
    pub fn node(&self, idx: usize) -> Option<&ExprTree> {
        if idx == 0 {
            return Some(self);
        }
        let mut offset = 1;
        for c in &self.children {
            let s = c.size();
            if idx < offset + s {
                return c.node(idx - offset);
            }
            offset += s;
        }
        None
    }

    pub fn node_mut(&mut self, idx: usize) -> Option<&mut ExprTree> {
        if idx == 0 {
            return Some(self);
        }
        let mut offset = 1;
        for c in &mut self.children {
            let s = c.size();
            if idx < offset + s {
                return c.node_mut(idx - offset);
            }
            offset += s;
        }
        None
    }

    /// Depth at which the node at preorder position `idx` sits (root = 1).
    pub fn level_of(&self, idx: usize) -> Option<usize> {
        if idx == 0 {
            return Some(1);
        }
        let mut offset = 1;
        for c in &self.children {
            let s = c.size();
            if idx < offset + s {
                return c.level_of(idx - offset).map(|l| l + 1);
            }
            offset += s;
        }
        None
    }

    /// Replaces the node at preorder position `idx` with `subtree`, returning
    /// the removed subtree.
    pub fn replace(&mut self, idx: usize, subtree: ExprTree) -> Option<ExprTree> {
        self.node_mut(idx).map(|slot| std::mem::replace(slot, subtree))
    }

    /// Replaces the operator of this node, keeping children and weights.
    /// Fails if the arity differs.
    pub fn set_op(&mut self, op: Op) -> Result<()> {
        if op.arity() != self.op.arity() {
            return Err(ExprError::Arity {
                op: op.name(),
                expected: self.op.arity(),
                got: op.arity(),
            });
        }
        self.op = op;
        Ok(())
    }

    pub(crate) fn into_children(self) -> Vec<ExprTree> {
        self.children
    }

    /// Infix rendering. Non-unit edge weights appear as explicit coefficients.
    /// Variables are named from `names` when given, otherwise `x<index>`.
    pub fn to_infix(&self, names: Option<&[String]>) -> String {
        let mut s = String::new();
        self.write_infix(&mut s, names);
        s
    }

    fn write_infix(&self, s: &mut String, names: Option<&[String]>) {
        use std::fmt::Write;
        match self.op {
            Op::Var(i) => match names.and_then(|n| n.get(i)) {
                Some(n) => s.push_str(n),
                None => {
                    let _ = write!(s, "x{i}");
                }
            },
            Op::Const(c) => {
                let _ = write!(s, "{c}");
            }
            Op::Add | Op::Sub | Op::Mul | Op::Div => {
                let sym = match self.op {
                    Op::Add => "+",
                    Op::Sub => "-",
                    Op::Mul => "*",
                    _ => "/",
                };
                s.push('(');
                self.write_arg(0, s, names);
                let _ = write!(s, " {sym} ");
                self.write_arg(1, s, names);
                s.push(')');
            }
            Op::Square | Op::Cube => {
                s.push('(');
                self.write_arg(0, s, names);
                s.push_str(if self.op == Op::Square { ")^2" } else { ")^3" });
            }
            op => {
                s.push_str(op.name());
                s.push('(');
                self.write_arg(0, s, names);
                s.push(')');
            }
        }
    }

    fn write_arg(&self, k: usize, s: &mut String, names: Option<&[String]>) {
        let w = self.weights[k];
        if w != 1.0 {
            use std::fmt::Write;
            let _ = write!(s, "{w}*");
        }
        self.children[k].write_infix(s, names);
    }
}

impl fmt::Display for ExprTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_infix(None))
    }
}

/// Probability that a leaf is a variable rather than a constant.
const VAR_LEAF_PROB: f64 = 0.8;
/// Probability that grow construction stops early at an interior position.
const EARLY_LEAF_PROB: f64 = 0.3;

pub fn random_leaf(n_features: usize, rng: &mut Rng) -> ExprTree {
    if n_features > 0 && rng.random_bool(VAR_LEAF_PROB) {
        ExprTree::var(rng.random_range(0..n_features))
    } else {
        ExprTree::constant(StandardNormal.sample(rng))
    }
}

/// A random operator of the given arity (1 or 2).
pub fn random_function(arity: usize, rng: &mut Rng) -> Op {
    if arity == 1 {
        Op::UNARY[rng.random_range(0..Op::UNARY.len())]
    } else {
        Op::BINARY[rng.random_range(0..Op::BINARY.len())]
    }
}

/// Grow-style random tree with unit weights and depth at most `max_depth`.
pub fn random_tree(max_depth: usize, n_features: usize, rng: &mut Rng) -> ExprTree {
    let max_depth = max_depth.max(1);
    if max_depth == 1 || rng.random_bool(EARLY_LEAF_PROB) {
        return random_leaf(n_features, rng);
    }
    let n_fn = Op::UNARY.len() + Op::BINARY.len();
    let op = if rng.random_range(0..n_fn) < Op::UNARY.len() {
        random_function(1, rng)
    } else {
        random_function(2, rng)
    };
    let children = (0..op.arity())
        .map(|_| random_tree(max_depth - 1, n_features, rng))
        .collect();
    ExprTree::new(op, children).expect("arity matches")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn row(values: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(1, values.len(), values)
    }

    fn add01() -> ExprTree {
        ExprTree::binary(Op::Add, ExprTree::var(0), ExprTree::var(1))
    }

    #[test]
    fn evaluates_weighted_nodes() {
        assert_eq!(add01().evaluate(&row(&[2.0, 3.0])).unwrap(), vec![5.0]);
        let div = ExprTree::binary(Op::Div, ExprTree::constant(1.0), ExprTree::constant(0.0));
        assert_eq!(div.evaluate(&row(&[0.0])).unwrap(), vec![1.0]);
        let sqrt = ExprTree::unary(Op::Sqrt, ExprTree::var(0))
            .with_weights(&[4.0])
            .unwrap();
        assert_eq!(sqrt.evaluate(&row(&[1.0])).unwrap(), vec![2.0]);
    }

    #[test]
    fn protected_forms() {
        let x = row(&[-4.0, 0.0, 100.0]);
        let eval = |op, j| ExprTree::unary(op, ExprTree::var(j)).evaluate(&x).unwrap()[0];
        assert_eq!(eval(Op::Sqrt, 0), 2.0);
        assert_eq!(eval(Op::Log, 0), 4f64.ln());
        assert_eq!(eval(Op::Log, 1), 0.0);
        assert_eq!(eval(Op::Exp, 2), EXP_ARG_MAX.exp());
        let cube3 = ExprTree::unary(
            Op::Cube,
            ExprTree::unary(Op::Cube, ExprTree::unary(Op::Exp, ExprTree::var(2))),
        );
        assert_eq!(cube3.evaluate(&x).unwrap()[0], VALUE_LIMIT);
    }

    #[test]
    fn rejects_out_of_range_var() {
        let t = ExprTree::var(3);
        assert_eq!(
            t.evaluate(&row(&[1.0, 2.0])),
            Err(ExprError::VarOutOfRange {
                index: 3,
                n_features: 2
            })
        );
        assert!(t.gradient(&row(&[1.0])).is_err());
    }

    #[test]
    fn arity_is_checked() {
        assert!(ExprTree::new(Op::Add, vec![ExprTree::var(0)]).is_err());
        assert!(ExprTree::var(0).with_weights(&[1.0]).is_err());
        assert!(add01().with_weights(&[1.0, f64::NAN]).is_err());
        let mut t = add01();
        assert!(t.set_op(Op::Sin).is_err());
        t.set_op(Op::Mul).unwrap();
        assert_eq!(t.op(), Op::Mul);
    }

    #[test]
    fn complexity_and_size() {
        let table = ComplexityTable::default();
        assert_eq!(ExprTree::var(0).complexity(&table), 1);
        assert_eq!(add01().complexity(&table), 2);
        let e = ExprTree::unary(Op::Exp, add01());
        assert_eq!(e.complexity(&table), 8);
        assert_eq!(ExprTree::var(0).size(), 1);
        assert_eq!(add01().size(), 3);
        assert_eq!(e.size(), 4);
        assert_eq!(e.depth(), 3);
    }

    #[test]
    fn table_costs() {
        let t = ComplexityTable::default();
        let expect = [
            (OpKind::Add, 1),
            (OpKind::Sub, 1),
            (OpKind::Div, 2),
            (OpKind::Mul, 2),
            (OpKind::Square, 2),
            (OpKind::Sqrt, 2),
            (OpKind::Cos, 3),
            (OpKind::Sin, 3),
            (OpKind::Cube, 3),
            (OpKind::Exp, 4),
            (OpKind::Log, 4),
            (OpKind::Var, 1),
            (OpKind::Const, 1),
        ];
        for (k, c) in expect {
            assert_eq!(t.cost(k), c, "{k:?}");
        }
        let mut t2 = t.clone();
        t2.set(OpKind::Var, 0);
        assert_eq!(t2.cost(OpKind::Var), 1);
    }

    #[test]
    fn mul_gradient_by_hand() {
        let t = ExprTree::binary(Op::Mul, ExprTree::var(0), ExprTree::var(1));
        let g = t.gradient(&row(&[2.0, 3.0])).unwrap();
        assert_eq!(g[&WeightKey { path: vec![], index: 0 }], vec![6.0]);
        assert_eq!(g[&WeightKey { path: vec![], index: 1 }], vec![6.0]);
        assert!(ExprTree::constant(5.0).gradient(&row(&[1.0])).unwrap().is_empty());
    }

    #[test]
    fn clamped_nodes_have_zero_gradient() {
        let t = ExprTree::unary(Op::Exp, ExprTree::var(0));
        let g = t.gradient(&row(&[40.0])).unwrap();
        assert_eq!(g.values().next().unwrap(), &vec![0.0]);
        let d = ExprTree::binary(Op::Div, ExprTree::var(0), ExprTree::var(1));
        let g = d.gradient(&row(&[1.0, 0.0])).unwrap();
        assert!(g.values().all(|v| v[0] == 0.0));
    }

    #[test]
    fn weight_order_matches_gradient_keys() {
        let mut r = rng::seeded(3);
        for _ in 0..50 {
            let t = random_tree(5, 3, &mut r);
            let x = DMatrix::from_fn(4, 3, |i, j| 0.3 + 0.1 * (i + j) as f64);
            let keys: Vec<WeightKey> = t.gradient(&x).unwrap().into_keys().collect();
            assert_eq!(keys.len(), t.n_weights());
            assert_eq!(t.weights().len(), t.n_weights());
            let mut t2 = t.clone();
            let w: Vec<f64> = (0..t.n_weights()).map(|i| i as f64 + 0.5).collect();
            assert_eq!(t2.set_weights(&w), w.len());
            assert_eq!(t2.weights(), w);
            // the key at position i addresses weight i
            for (i, k) in keys.iter().enumerate() {
                let mut node = &t2;
                for &p in &k.path {
                    node = &node.children()[p];
                }
                assert_eq!(node.edge_weights()[k.index], w[i]);
            }
        }
    }

    #[test]
    fn random_tree_bounds_and_determinism() {
        let mut r = rng::seeded(11);
        for _ in 0..200 {
            assert!(random_tree(1, 4, &mut r).is_leaf());
        }
        for _ in 0..1000 {
            let t = random_tree(6, 4, &mut r);
            assert!(t.depth() <= 6);
            assert!(t.weights().iter().all(|&w| w == 1.0));
            assert!(t.max_var_index().is_none_or(|i| i < 4));
        }
        let a = random_tree(6, 4, &mut rng::seeded(5));
        let b = random_tree(6, 4, &mut rng::seeded(5));
        assert_eq!(a, b);
    }

    #[test]
    fn node_addressing() {
        let e = ExprTree::unary(Op::Exp, add01());
        assert_eq!(e.node(0).unwrap().op(), Op::Exp);
        assert_eq!(e.node(1).unwrap().op(), Op::Add);
        assert_eq!(e.node(3).unwrap().op(), Op::Var(1));
        assert!(e.node(4).is_none());
        assert_eq!(e.level_of(3), Some(3));
        let mut e2 = e.clone();
        let old = e2.replace(1, ExprTree::var(0)).unwrap();
        assert_eq!(old, add01());
        assert_eq!(e2.size(), 2);
    }

    #[test]
    fn infix_shows_weights() {
        let t = ExprTree::binary(Op::Add, ExprTree::var(0), ExprTree::unary(Op::Sin, ExprTree::var(1)))
            .with_weights(&[2.5, 1.0])
            .unwrap();
        assert_eq!(t.to_string(), "(2.5*x0 + sin(x1))");
        let names = vec!["a".to_string(), "b".to_string()];
        assert_eq!(t.to_infix(Some(&names)), "(2.5*a + sin(b))");
        let sq = ExprTree::unary(Op::Square, ExprTree::constant(-1.5));
        assert_eq!(sq.to_string(), "(-1.5)^2");
    }
}
