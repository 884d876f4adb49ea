use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::Real;

/// Kind of elementary operation that produced a tape node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    Const,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Tanh,
    Exp,
    Square,
    Sum,
    Mean,
}

#[derive(Default)]
struct Nodes {
    kinds: Vec<OpKind>,
    values: Vec<f64>,
    // CSR layout: parents of node k live in parents[offsets[k]..offsets[k + 1]].
    offsets: Vec<usize>,
    parents: Vec<usize>,
    partials: Vec<f64>,
}

/// Append-only record of scalar operations for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so every parent index is smaller
/// than the index of its child. A tape is single-threaded; build one per data
/// point when evaluating in parallel.
pub struct Tape {
    nodes: RefCell<Nodes>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        let nodes = Nodes {
            offsets: vec![0],
            ..Default::default()
        };
        Tape {
            nodes: RefCell::new(nodes),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Creates an independent variable.
    pub fn var(&self, value: f64) -> Var<'_> {
        self.push(OpKind::Leaf, value, &[])
    }

    pub fn constant(&self, value: f64) -> Var<'_> {
        self.push(OpKind::Const, value, &[])
    }

    pub fn value(&self, idx: usize) -> f64 {
        self.nodes.borrow().values[idx]
    }

    pub fn kind(&self, idx: usize) -> OpKind {
        self.nodes.borrow().kinds[idx]
    }

    pub fn parents(&self, idx: usize) -> Vec<usize> {
        let n = self.nodes.borrow();
        n.parents[n.offsets[idx]..n.offsets[idx + 1]].to_vec()
    }

    /// Re-wraps a node index recorded earlier as a handle on this tape.
    pub fn handle(&self, idx: usize) -> Var<'_> {
        assert!(idx < self.len(), "node {idx} not on tape");
        Var { tape: self, idx }
    }

    fn push(&self, kind: OpKind, value: f64, parents: &[(usize, f64)]) -> Var<'_> {
        let mut n = self.nodes.borrow_mut();
        let idx = n.values.len();
        n.kinds.push(kind);
        n.values.push(value);
        for &(p, d) in parents {
            debug_assert!(p < idx);
            n.parents.push(p);
            n.partials.push(d);
        }
        let end = n.parents.len();
        n.offsets.push(end);
        Var { tape: self, idx }
    }

    /// Adjoints of every node with respect to the node `seed`.
    ///
    /// Visits each node at most once, from `seed` down to the first node.
    pub fn adjoints(&self, seed: usize) -> Vec<f64> {
        let n = self.nodes.borrow();
        let mut adj = vec![0.0; n.values.len()];
        adj[seed] = 1.0;
        for k in (0..=seed).rev() {
            let a = adj[k];
            if a == 0.0 {
                continue;
            }
            for j in n.offsets[k]..n.offsets[k + 1] {
                adj[n.parents[j]] += n.partials[j] * a;
            }
        }
        adj
    }

    /// Gradient of `output` with respect to each of `wrt`.
    pub fn gradient(&self, output: Var<'_>, wrt: &[Var<'_>]) -> Vec<f64> {
        let adj = self.adjoints(output.idx);
        wrt.iter()
            .map(|v| adj.get(v.idx).copied().unwrap_or(0.0))
            .collect()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}({})", self.idx, self.value())
    }
}

impl<'t> Var<'t> {
    pub fn index(&self) -> usize {
        self.idx
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    fn unary(self, kind: OpKind, value: f64, partial: f64) -> Self {
        self.tape.push(kind, value, &[(self.idx, partial)])
    }

    fn binary(self, other: Self, kind: OpKind, value: f64, da: f64, db: f64) -> Self {
        debug_assert!(std::ptr::eq(self.tape, other.tape), "mixing tapes");
        self.tape
            .push(kind, value, &[(self.idx, da), (other.idx, db)])
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Self) -> Self {
        let v = self.value() + rhs.value();
        self.binary(rhs, OpKind::Add, v, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Self) -> Self {
        let v = self.value() - rhs.value();
        self.binary(rhs, OpKind::Sub, v, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Self) -> Self {
        let (a, b) = (self.value(), rhs.value());
        self.binary(rhs, OpKind::Mul, a * b, b, a)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Self) -> Self {
        let (a, b) = (self.value(), rhs.value());
        let q = a / b;
        self.binary(rhs, OpKind::Div, q, 1.0 / b, -q / b)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Self {
        self.unary(OpKind::Neg, -self.value(), -1.0)
    }
}

impl<'t> Real for Var<'t> {
    fn lift(&self, c: f64) -> Self {
        self.tape.constant(c)
    }

    fn value(&self) -> f64 {
        self.tape.value(self.idx)
    }

    fn tanh(self) -> Self {
        let h = self.value().tanh();
        self.unary(OpKind::Tanh, h, 1.0 - h * h)
    }

    fn exp(self) -> Self {
        let e = self.value().exp();
        self.unary(OpKind::Exp, e, e)
    }

    fn square(self) -> Self {
        let x = self.value();
        self.unary(OpKind::Square, x * x, 2.0 * x)
    }

    fn sum(items: &[Self]) -> Self {
        let first = items.first().expect("sum of an empty list");
        let value = fold_sum(items.iter().map(|v| v.value()));
        let parents: Vec<(usize, f64)> = items.iter().map(|v| (v.idx, 1.0)).collect();
        first.tape.push(OpKind::Sum, value, &parents)
    }

    fn mean(items: &[Self]) -> Self {
        let first = items.first().expect("mean of an empty list");
        let n = items.len() as f64;
        let value = fold_sum(items.iter().map(|v| v.value())) / n;
        let parents: Vec<(usize, f64)> = items.iter().map(|v| (v.idx, 1.0 / n)).collect();
        first.tape.push(OpKind::Mean, value, &parents)
    }
}

/// Left fold starting from the first element. Shared with the `f64` path so
/// taped and plain evaluations agree bit for bit.
pub(crate) fn fold_sum(mut it: impl Iterator<Item = f64>) -> f64 {
    let first = it.next().expect("sum of an empty list");
    it.fold(first, |acc, x| acc + x)
}
