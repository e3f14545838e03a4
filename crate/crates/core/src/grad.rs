//! A small computation graph over [`DenseMatrix`] values with reverse-mode
//! differentiation.
//!
//! Nodes are appended to a [`Graph`] arena and may only reference nodes that
//! already exist, so every graph is acyclic by construction. Leaves
//! (constants and parameters) carry values from the moment they are
//! created; interior nodes are computed lazily by [`Graph::evaluate`] and
//! cached until a leaf value changes.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::matrix::{matmul, DenseMatrix, Trans};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Statistics used by a batch-normalization node.
#[derive(Clone, Debug, PartialEq)]
pub enum NormStats {
    /// Per-column mean and biased variance of the node's own input.
    Batch,
    /// Externally supplied mean and variance, treated as constants.
    Fixed { mean: Vec<f64>, var: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Constant,
    Parameter,
    Matmul(NodeId, NodeId),
    /// `a · bᵀ` without materializing the transpose.
    MatmulT(NodeId, NodeId),
    Transpose(NodeId),
    /// Elementwise sum; the right operand may also be a `1 × c` row that is
    /// broadcast over every row of the left operand.
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Relu(NodeId),
    /// Row-wise softmax.
    Softmax(NodeId),
    /// Sum of all entries, producing `1 × 1`.
    Sum(NodeId),
    /// Column-wise maximum over rows, producing `1 × c`.
    MaxRows(NodeId),
    BatchNorm {
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
        stats: NormStats,
    },
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Parameter => "parameter",
            Op::Matmul(..) => "matmul",
            Op::MatmulT(..) => "matmul_t",
            Op::Transpose(..) => "transpose",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Relu(..) => "relu",
            Op::Softmax(..) => "softmax",
            Op::Sum(..) => "sum",
            Op::MaxRows(..) => "max_rows",
            Op::BatchNorm { .. } => "batchnorm",
        }
    }

    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Constant | Op::Parameter => Vec::new(),
            Op::Matmul(a, b) | Op::MatmulT(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Transpose(a)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Relu(a)
            | Op::Softmax(a)
            | Op::Sum(a)
            | Op::MaxRows(a) => vec![*a],
            Op::BatchNorm {
                input, gamma, beta, ..
            } => vec![*input, *gamma, *beta],
        }
    }

    fn is_leaf(&self) -> bool {
        matches!(self, Op::Constant | Op::Parameter)
    }
}

/// Per-column statistics recorded by a batch-mode normalization node.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance.
    pub var: Vec<f64>,
    pub count: usize,
}

#[derive(Clone, Debug)]
enum Aux {
    Norm {
        normalized: DenseMatrix,
        inv_std: Vec<f64>,
        batch: Option<BatchStats>,
    },
    ArgMax(Vec<usize>),
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Option<DenseMatrix>,
    aux: Option<Aux>,
    requires_grad: bool,
    leaf_checked: bool,
}

/// Gradients of a root with respect to every parameter node of a graph.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    by_node: HashMap<NodeId, DenseMatrix>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&DenseMatrix> {
        self.by_node.get(&id)
    }

    pub fn remove(&mut self, id: NodeId) -> Option<DenseMatrix> {
        self.by_node.remove(&id)
    }

    pub fn len(&self) -> usize {
        self.by_node.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_node.is_empty()
    }
}

#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id.0].op
    }

    fn push(&mut self, op: Op, value: Option<DenseMatrix>) -> NodeId {
        for input in op.inputs() {
            assert!(input.0 < self.nodes.len(), "node {} does not exist", input.0);
        }
        let requires_grad = match &op {
            Op::Parameter => true,
            Op::Constant => false,
            other => other.inputs().iter().any(|i| self.nodes[i.0].requires_grad),
        };
        self.nodes.push(Node {
            op,
            value,
            aux: None,
            requires_grad,
            leaf_checked: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: DenseMatrix) -> NodeId {
        self.push(Op::Constant, Some(value))
    }

    pub fn parameter(&mut self, value: DenseMatrix) -> NodeId {
        self.push(Op::Parameter, Some(value))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Matmul(a, b), None)
    }

    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatmulT(a, b), None)
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Transpose(a), None)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b), None)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Sub(a, b), None)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul(a, b), None)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Tanh(a), None)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sigmoid(a), None)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Relu(a), None)
    }

    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Softmax(a), None)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sum(a), None)
    }

    pub fn max_rows(&mut self, a: NodeId) -> NodeId {
        self.push(Op::MaxRows(a), None)
    }

    pub fn batch_norm(&mut self, input: NodeId, gamma: NodeId, beta: NodeId, eps: f64, stats: NormStats) -> NodeId {
        self.push(
            Op::BatchNorm {
                input,
                gamma,
                beta,
                eps,
                stats,
            },
            None,
        )
    }

    /// Replaces the value of a leaf and invalidates every cached interior value.
    pub fn set_value(&mut self, id: NodeId, value: DenseMatrix) -> Result<()> {
        let node = &mut self.nodes[id.0];
        if !node.op.is_leaf() {
            return Err(Error::InvalidConfig(format!(
                "node {} ({}) is not a leaf",
                id.0,
                node.op.name()
            )));
        }
        node.value = Some(value);
        node.leaf_checked = false;
        for node in &mut self.nodes {
            if !node.op.is_leaf() {
                node.value = None;
                node.aux = None;
            }
        }
        Ok(())
    }

    /// Cached forward value, if computed.
    pub fn value(&self, id: NodeId) -> Option<&DenseMatrix> {
        self.nodes[id.0].value.as_ref()
    }

    /// Batch statistics recorded by a batch-mode normalization node.
    pub fn batch_stats(&self, id: NodeId) -> Option<&BatchStats> {
        match &self.nodes[id.0].aux {
            Some(Aux::Norm { batch, .. }) => batch.as_ref(),
            _ => None,
        }
    }

    fn ancestors(&self, root: NodeId) -> Vec<bool> {
        let mut needed = vec![false; root.0 + 1];
        needed[root.0] = true;
        for i in (0..=root.0).rev() {
            if needed[i] {
                for input in self.nodes[i].op.inputs() {
                    needed[input.0] = true;
                }
            }
        }
        needed
    }

    /// Computes (or reuses) the forward value of `root`.
    pub fn evaluate(&mut self, root: NodeId) -> Result<&DenseMatrix> {
        let needed = self.ancestors(root);
        for i in 0..=root.0 {
            if !needed[i] {
                continue;
            }
            if self.nodes[i].op.is_leaf() {
                if !self.nodes[i].leaf_checked {
                    let finite = self.nodes[i].value.as_ref().is_some_and(DenseMatrix::is_finite);
                    if !finite {
                        return Err(Error::NonFinite(format!("leaf node {i}")));
                    }
                    self.nodes[i].leaf_checked = true;
                }
                continue;
            }
            if self.nodes[i].value.is_none() {
                let (value, aux) = self.forward_node(i)?;
                self.nodes[i].value = Some(value);
                self.nodes[i].aux = aux;
            }
        }
        Ok(self.nodes[root.0].value.as_ref().expect("root evaluated"))
    }

    fn input_value(&self, id: NodeId) -> &DenseMatrix {
        self.nodes[id.0].value.as_ref().expect("inputs are evaluated first")
    }

    fn forward_node(&self, i: usize) -> Result<(DenseMatrix, Option<Aux>)> {
        let op = &self.nodes[i].op;
        let mismatch = |detail: String| Error::NodeShape {
            node: i,
            op: op.name(),
            detail,
        };
        let out = match op {
            Op::Constant | Op::Parameter => unreachable!("leaves carry their own values"),
            Op::Matmul(a, b) => {
                let (a, b) = (self.input_value(*a), self.input_value(*b));
                if a.cols() != b.rows() {
                    return Err(mismatch(format!("{:?} x {:?}", a.shape(), b.shape())));
                }
                (matmul(a, Trans::No, b, Trans::No), None)
            }
            Op::MatmulT(a, b) => {
                let (a, b) = (self.input_value(*a), self.input_value(*b));
                if a.cols() != b.cols() {
                    return Err(mismatch(format!("{:?} x {:?}ᵀ", a.shape(), b.shape())));
                }
                (matmul(a, Trans::No, b, Trans::Yes), None)
            }
            Op::Transpose(a) => (self.input_value(*a).transpose(), None),
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(op, Op::Add(..)) { 1.0 } else { -1.0 };
                let (a, b) = (self.input_value(*a), self.input_value(*b));
                let mut out = a.clone();
                if a.shape() == b.shape() {
                    for (o, y) in out.values_mut().iter_mut().zip(b.values()) {
                        *o += sign * y;
                    }
                } else if matches!(op, Op::Add(..)) && b.rows() == 1 && b.cols() == a.cols() {
                    for r in 0..out.rows() {
                        for (o, y) in out.row_mut(r).iter_mut().zip(b.values()) {
                            *o += y;
                        }
                    }
                } else {
                    return Err(mismatch(format!("{:?} vs {:?}", a.shape(), b.shape())));
                }
                (out, None)
            }
            Op::Mul(a, b) => {
                let (a, b) = (self.input_value(*a), self.input_value(*b));
                if a.shape() != b.shape() {
                    return Err(mismatch(format!("{:?} vs {:?}", a.shape(), b.shape())));
                }
                let mut out = a.clone();
                for (o, y) in out.values_mut().iter_mut().zip(b.values()) {
                    *o *= y;
                }
                (out, None)
            }
            Op::Tanh(a) => (self.input_value(*a).map(f64::tanh), None),
            Op::Sigmoid(a) => (self.input_value(*a).map(sigmoid), None),
            Op::Relu(a) => (self.input_value(*a).map(|v| v.max(0.0)), None),
            Op::Softmax(a) => {
                let mut out = self.input_value(*a).clone();
                for r in 0..out.rows() {
                    softmax_in_place(out.row_mut(r));
                }
                (out, None)
            }
            Op::Sum(a) => (DenseMatrix::scalar(self.input_value(*a).values().iter().sum()), None),
            Op::MaxRows(a) => {
                let a = self.input_value(*a);
                if a.rows() == 0 {
                    return Err(mismatch("max over zero rows".into()));
                }
                let mut best = a.row(0).to_vec();
                let mut arg = vec![0usize; a.cols()];
                for r in 1..a.rows() {
                    for (c, &v) in a.row(r).iter().enumerate() {
                        if v > best[c] {
                            best[c] = v;
                            arg[c] = r;
                        }
                    }
                }
                (DenseMatrix::row_vector(best), Some(Aux::ArgMax(arg)))
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                eps,
                stats,
            } => {
                let x = self.input_value(*input);
                let (g, b) = (self.input_value(*gamma), self.input_value(*beta));
                let (n, c) = x.shape();
                if g.shape() != (1, c) || b.shape() != (1, c) {
                    return Err(mismatch(format!(
                        "input {:?}, gamma {:?}, beta {:?}",
                        x.shape(),
                        g.shape(),
                        b.shape()
                    )));
                }
                if n == 0 {
                    return Err(mismatch("normalization over zero rows".into()));
                }
                let (mean, var, batch) = match stats {
                    NormStats::Batch => {
                        let (mean, var) = column_moments(x);
                        let batch = BatchStats {
                            mean: mean.clone(),
                            var: var.clone(),
                            count: n,
                        };
                        (mean, var, Some(batch))
                    }
                    NormStats::Fixed { mean, var } => {
                        if mean.len() != c || var.len() != c {
                            return Err(mismatch(format!(
                                "{} columns but {} means / {} variances",
                                c,
                                mean.len(),
                                var.len()
                            )));
                        }
                        (mean.clone(), var.clone(), None)
                    }
                };
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
                let mut normalized = x.clone();
                for r in 0..n {
                    for (j, v) in normalized.row_mut(r).iter_mut().enumerate() {
                        *v = (*v - mean[j]) * inv_std[j];
                    }
                }
                let mut out = normalized.clone();
                for r in 0..n {
                    for (j, v) in out.row_mut(r).iter_mut().enumerate() {
                        *v = g.values()[j] * *v + b.values()[j];
                    }
                }
                (
                    out,
                    Some(Aux::Norm {
                        normalized,
                        inv_std,
                        batch,
                    }),
                )
            }
        };
        Ok(out)
    }

    /// Reverse-mode pass from `root`, seeded with `seed` (same shape as the
    /// root value). Returns the gradient of every parameter node; parameters
    /// the root does not depend on receive zeros.
    pub fn gradient(&self, root: NodeId, seed: &DenseMatrix) -> Result<Gradients> {
        let needed = self.ancestors(root);
        for (i, &need) in needed.iter().enumerate() {
            if need && self.nodes[i].value.is_none() {
                return Err(Error::BackwardBeforeForward(i));
            }
        }
        let root_value = self.nodes[root.0].value.as_ref().expect("checked above");
        if root_value.shape() != seed.shape() {
            return Err(Error::Shape(format!(
                "seed {:?} does not match root {:?}",
                seed.shape(),
                root_value.shape()
            )));
        }

        let mut adjoint: Vec<Option<DenseMatrix>> = vec![None; root.0 + 1];
        adjoint[root.0] = Some(seed.clone());
        for i in (0..=root.0).rev() {
            if !needed[i] || !self.nodes[i].requires_grad || self.nodes[i].op.is_leaf() {
                continue;
            }
            let Some(upstream) = adjoint[i].take() else {
                continue;
            };
            self.backward_node(i, &upstream, &mut adjoint);
        }

        let mut by_node = HashMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if node.op == Op::Parameter {
                let grad = adjoint
                    .get_mut(i)
                    .and_then(Option::take)
                    .unwrap_or_else(|| {
                        let (r, c) = node.value.as_ref().map_or((0, 0), DenseMatrix::shape);
                        DenseMatrix::zeros(r, c)
                    });
                by_node.insert(NodeId(i), grad);
            }
        }
        Ok(Gradients { by_node })
    }

    fn accumulate(&self, adjoint: &mut [Option<DenseMatrix>], id: NodeId, grad: DenseMatrix) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        match &mut adjoint[id.0] {
            Some(existing) => existing.add_assign(&grad),
            slot @ None => *slot = Some(grad),
        }
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn backward_node(&self, i: usize, dy: &DenseMatrix, adjoint: &mut [Option<DenseMatrix>]) {
        let node = &self.nodes[i];
        let y = node.value.as_ref().expect("evaluated");
        match &node.op {
            Op::Constant | Op::Parameter => {}
            Op::Matmul(a, b) => {
                if self.wants(*a) {
                    let bv = self.input_value(*b);
                    self.accumulate(adjoint, *a, matmul(dy, Trans::No, bv, Trans::Yes));
                }
                if self.wants(*b) {
                    let av = self.input_value(*a);
                    self.accumulate(adjoint, *b, matmul(av, Trans::Yes, dy, Trans::No));
                }
            }
            Op::MatmulT(a, b) => {
                if self.wants(*a) {
                    let bv = self.input_value(*b);
                    self.accumulate(adjoint, *a, matmul(dy, Trans::No, bv, Trans::No));
                }
                if self.wants(*b) {
                    let av = self.input_value(*a);
                    self.accumulate(adjoint, *b, matmul(dy, Trans::Yes, av, Trans::No));
                }
            }
            Op::Transpose(a) => self.accumulate(adjoint, *a, dy.transpose()),
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Add(..)) { 1.0 } else { -1.0 };
                if self.wants(*a) {
                    self.accumulate(adjoint, *a, dy.clone());
                }
                if self.wants(*b) {
                    let bv = self.input_value(*b);
                    let mut g = if bv.shape() == dy.shape() {
                        dy.clone()
                    } else {
                        column_sums(dy)
                    };
                    g.scale_in_place(sign);
                    self.accumulate(adjoint, *b, g);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.input_value(*a), self.input_value(*b));
                if self.wants(*a) {
                    self.accumulate(adjoint, *a, zip_map(dy, bv, |g, v| g * v));
                }
                if self.wants(*b) {
                    self.accumulate(adjoint, *b, zip_map(dy, av, |g, v| g * v));
                }
            }
            Op::Tanh(a) => self.accumulate(adjoint, *a, zip_map(dy, y, |g, t| g * (1.0 - t * t))),
            Op::Sigmoid(a) => self.accumulate(adjoint, *a, zip_map(dy, y, |g, s| g * s * (1.0 - s))),
            Op::Relu(a) => {
                let x = self.input_value(*a);
                self.accumulate(adjoint, *a, zip_map(dy, x, |g, v| if v > 0.0 { g } else { 0.0 }));
            }
            Op::Softmax(a) => {
                let mut g = zip_map(dy, y, |g, s| g * s);
                for r in 0..g.rows() {
                    let dot: f64 = g.row(r).iter().sum();
                    for (gv, s) in g.row_mut(r).iter_mut().zip(y.row(r)) {
                        *gv -= s * dot;
                    }
                }
                self.accumulate(adjoint, *a, g);
            }
            Op::Sum(a) => {
                let (r, c) = self.input_value(*a).shape();
                self.accumulate(adjoint, *a, DenseMatrix::filled(r, c, dy.values()[0]));
            }
            Op::MaxRows(a) => {
                let Some(Aux::ArgMax(arg)) = &node.aux else {
                    unreachable!("max_rows records its argmax")
                };
                let (r, c) = self.input_value(*a).shape();
                let mut g = DenseMatrix::zeros(r, c);
                for (col, &row) in arg.iter().enumerate() {
                    g.set(row, col, dy.values()[col]);
                }
                self.accumulate(adjoint, *a, g);
            }
            Op::BatchNorm {
                input, gamma, beta, ..
            } => {
                let Some(Aux::Norm {
                    normalized,
                    inv_std,
                    batch,
                }) = &node.aux
                else {
                    unreachable!("batchnorm records its normalized input")
                };
                let (n, c) = normalized.shape();
                let mut sum_dy = vec![0.0; c];
                let mut sum_dy_xhat = vec![0.0; c];
                for r in 0..n {
                    for j in 0..c {
                        let g = dy.get(r, j);
                        sum_dy[j] += g;
                        sum_dy_xhat[j] += g * normalized.get(r, j);
                    }
                }
                if self.wants(*gamma) {
                    self.accumulate(adjoint, *gamma, DenseMatrix::row_vector(sum_dy_xhat.clone()));
                }
                if self.wants(*beta) {
                    self.accumulate(adjoint, *beta, DenseMatrix::row_vector(sum_dy.clone()));
                }
                if self.wants(*input) {
                    let g = self.input_value(*gamma).values();
                    let mut dx = DenseMatrix::zeros(n, c);
                    let nf = n as f64;
                    for r in 0..n {
                        for j in 0..c {
                            let scale = g[j] * inv_std[j];
                            let v = if batch.is_some() {
                                scale / nf * (nf * dy.get(r, j) - sum_dy[j] - normalized.get(r, j) * sum_dy_xhat[j])
                            } else {
                                scale * dy.get(r, j)
                            };
                            dx.set(r, j, v);
                        }
                    }
                    self.accumulate(adjoint, *input, dx);
                }
            }
        }
    }

    /// Largest relative disagreement between the analytic gradient of a
    /// scalar `root` with respect to `param` and central differences.
    ///
    /// Each entry contributes `|analytic − numeric| / max(|analytic|, |numeric|, 1e-8)`.
    pub fn finite_diff_check(&mut self, root: NodeId, param: NodeId, step: f64) -> Result<f64> {
        if !(step > 0.0) {
            return Err(Error::InvalidConfig(format!("finite-difference step must be positive, got {step}")));
        }
        let value = self.evaluate(root)?;
        if value.shape() != (1, 1) {
            return Err(Error::NonScalarRoot {
                rows: value.rows(),
                cols: value.cols(),
            });
        }
        let analytic = self
            .gradient(root, &DenseMatrix::scalar(1.0))?
            .remove(param)
            .ok_or_else(|| Error::InvalidConfig(format!("node {} is not a parameter", param.0)))?;
        let original = self.value(param).expect("parameters carry values").clone();
        let mut worst: f64 = 0.0;
        for k in 0..original.len() {
            let mut probe = original.clone();
            probe.values_mut()[k] += step;
            self.set_value(param, probe.clone())?;
            let up = self.evaluate(root)?.values()[0];
            probe.values_mut()[k] = original.values()[k] - step;
            self.set_value(param, probe)?;
            let down = self.evaluate(root)?.values()[0];
            let numeric = (up - down) / (2.0 * step);
            let a = analytic.values()[k];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / denom);
        }
        self.set_value(param, original)?;
        self.evaluate(root)?;
        Ok(worst)
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softmax with max subtraction.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

pub fn softmax(values: &[f64]) -> Vec<f64> {
    let mut out = values.to_vec();
    softmax_in_place(&mut out);
    out
}

fn column_moments(x: &DenseMatrix) -> (Vec<f64>, Vec<f64>) {
    let (n, c) = x.shape();
    let mut mean = vec![0.0; c];
    for r in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(r)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut var = vec![0.0; c];
    for r in 0..n {
        for (j, v) in x.row(r).iter().enumerate() {
            let d = v - mean[j];
            var[j] += d * d;
        }
    }
    for v in &mut var {
        *v /= n as f64;
    }
    (mean, var)
}

fn column_sums(m: &DenseMatrix) -> DenseMatrix {
    let mut out = vec![0.0; m.cols()];
    for r in 0..m.rows() {
        for (o, v) in out.iter_mut().zip(m.row(r)) {
            *o += v;
        }
    }
    DenseMatrix::row_vector(out)
}

fn zip_map(a: &DenseMatrix, b: &DenseMatrix, f: impl Fn(f64, f64) -> f64) -> DenseMatrix {
    let values = a.values().iter().zip(b.values()).map(|(&x, &y)| f(x, y)).collect();
    DenseMatrix::new(a.rows(), a.cols(), values).expect("same shape")
}
