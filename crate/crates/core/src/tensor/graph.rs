//! Tape-style reverse-mode differentiation over matrices.
//!
//! Nodes are appended in evaluation order, so a reverse sweep over the node
//! list is a valid topological order for backpropagation.

use super::params::{Gradients, ParamGroup};
use super::{gemm_into, Result, Tensor, TensorError};
use crate::scalar::Scalar;

/// Negative-side slope of the leaky rectifier.
pub const LEAKY_SLOPE: f64 = 0.01;
/// Floor on the norm used by row-wise L2 normalization.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Input,
    Var,
    Param,
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    ConcatCols(Vec<NodeId>),
    StackRows(Vec<NodeId>),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddRowBias(NodeId, NodeId),
    Scale(NodeId, T),
    AddScalar(NodeId),
    LeakyRelu(NodeId),
    SoftmaxRows(NodeId),
    LogSoftmaxRows(NodeId),
    Exp(NodeId),
    Ln(NodeId),
    SquaredError(NodeId, NodeId),
    Mean(NodeId),
    Sum(NodeId),
    L2NormalizeRows(NodeId),
    RowDot(NodeId, NodeId),
    SliceRows(NodeId, usize),
    GatherRows(NodeId, Vec<usize>),
    SelectElems(NodeId, Vec<(usize, usize)>),
    Reshape(NodeId),
    Clamp(NodeId, T, T),
    StopGrad,
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// A single-use computation graph.
#[derive(Clone, Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: Vec<(String, NodeId)>,
}

/// Result of a backward sweep.
pub struct Backward<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(String, NodeId)>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Backward<T> {
    /// Gradient with respect to a node; zeros when the root does not depend on it.
    pub fn grad(&self, id: NodeId) -> Tensor<T> {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[id.0]),
        }
    }

    /// Gradients for every parameter in `group`; parameters the graph never
    /// touched get zeros.
    pub fn param_grads(&self, group: &ParamGroup<T>) -> Gradients<T> {
        let mut out = Gradients::new();
        for (name, entry) in group.iter() {
            let g = self
                .params
                .iter()
                .find(|(n, _)| n == name)
                .and_then(|(_, id)| self.grads[id.0].clone())
                .unwrap_or_else(|| Tensor::zeros(entry.value.shape()));
            out.insert(name.clone(), g);
        }
        out
    }
}

fn mismatch<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id.0].value.dims2()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Constant input; never receives a gradient.
    pub fn input(&mut self, t: Tensor<T>) -> NodeId {
        self.push(t, Op::Input, false)
    }

    /// Free differentiable leaf, not tied to any parameter group.
    pub fn var(&mut self, t: Tensor<T>) -> NodeId {
        self.push(t, Op::Var, true)
    }

    /// Leaf for a named parameter; repeated calls return the same node.
    pub fn param(&mut self, group: &ParamGroup<T>, name: &str) -> Result<NodeId> {
        if let Some((_, id)) = self.params.iter().find(|(n, _)| n == name) {
            return Ok(*id);
        }
        let value = group
            .get(name)
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))?
            .clone();
        let id = self.push(value, Op::Param, true);
        self.params.push((name.to_string(), id));
        Ok(id)
    }

    /// Cuts the gradient path: same value, no backward flow.
    pub fn stop_gradient(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).clone();
        self.push(v, Op::StopGrad, false)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = av.dims2();
        let (k2, n) = bv.dims2();
        if k != k2 {
            return Err(mismatch("matmul", av, bv));
        }
        let mut out = vec![T::zero(); m * n];
        gemm_into(m, k, n, av.data(), false, bv.data(), false, &mut out, T::zero());
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(v, Op::Transpose(a), rg)
    }

    /// Concatenation along the last axis.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Invalid("concat of nothing".into()))?;
        let rows = self.value(*first).rows();
        for p in parts {
            if self.value(*p).rows() != rows {
                return Err(mismatch("concat_cols", self.value(*first), self.value(*p)));
            }
        }
        let total: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                out.extend_from_slice(self.value(*p).row(r));
            }
        }
        let rg = parts.iter().any(|p| self.rg(*p));
        Ok(self.push(
            Tensor::matrix(rows, total, out)?,
            Op::ConcatCols(parts.to_vec()),
            rg,
        ))
    }

    /// Vertical stacking of matrices with equal column counts.
    pub fn stack_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Invalid("stack of nothing".into()))?;
        let cols = self.value(*first).cols();
        let mut out = Vec::new();
        for p in parts {
            let v = self.value(*p);
            if v.cols() != cols {
                return Err(mismatch("stack_rows", self.value(*first), v));
            }
            out.extend_from_slice(v.data());
        }
        let rows = out.len() / cols;
        let rg = parts.iter().any(|p| self.rg(*p));
        Ok(self.push(
            Tensor::matrix(rows, cols, out)?,
            Op::StackRows(parts.to_vec()),
            rg,
        ))
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.dims2() != bv.dims2() {
            return Err(mismatch(op, av, bv));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    /// Elementwise (hadamard) product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    /// `a + bias` with a `1 x n` bias added to every row of the `m x n` operand.
    pub fn add_row_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(bias));
        let (m, n) = av.dims2();
        if bv.dims2() != (1, n) {
            return Err(mismatch("add_row_bias", av, bv));
        }
        let mut out = av.data().to_vec();
        for r in 0..m {
            for (o, &b) in out[r * n..(r + 1) * n].iter_mut().zip(bv.data()) {
                *o = *o + b;
            }
        }
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::AddRowBias(a, bias), rg))
    }

    pub fn scale(&mut self, a: NodeId, s: T) -> NodeId {
        let v = self.value(a).map(|x| x * s);
        let rg = self.rg(a);
        self.push(v, Op::Scale(a, s), rg)
    }

    pub fn add_scalar(&mut self, a: NodeId, s: T) -> NodeId {
        let v = self.value(a).map(|x| x + s);
        let rg = self.rg(a);
        self.push(v, Op::AddScalar(a), rg)
    }

    pub fn leaky_relu(&mut self, a: NodeId) -> NodeId {
        let slope = T::c(LEAKY_SLOPE);
        let v = self
            .value(a)
            .map(|x| if x > T::zero() { x } else { x * slope });
        let rg = self.rg(a);
        self.push(v, Op::LeakyRelu(a), rg)
    }

    /// Row-wise softmax, stabilized by subtracting each row's maximum.
    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let v = softmax_rows(self.value(a));
        let rg = self.rg(a);
        self.push(v, Op::SoftmaxRows(a), rg)
    }

    pub fn log_softmax_rows(&mut self, a: NodeId) -> NodeId {
        let x = self.value(a);
        let (m, n) = x.dims2();
        let mut out = x.data().to_vec();
        for r in 0..m {
            let row = &mut out[r * n..(r + 1) * n];
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = mx + row.iter().map(|&v| (v - mx).exp()).sum::<T>().ln();
            for v in row.iter_mut() {
                *v = *v - lse;
            }
        }
        let rg = self.rg(a);
        self.push(
            Tensor::matrix(m, n, out).expect("same shape"),
            Op::LogSoftmaxRows(a),
            rg,
        )
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.exp());
        let rg = self.rg(a);
        self.push(v, Op::Exp(a), rg)
    }

    pub fn ln(&mut self, a: NodeId) -> Result<NodeId> {
        let x = self.value(a);
        if let Some((index, v)) = x.data().iter().enumerate().find(|(_, v)| **v <= T::zero()) {
            return Err(TensorError::NonPositive {
                op: "ln",
                value: v.f64(),
                index,
            });
        }
        let v = x.map(|x| x.ln());
        let rg = self.rg(a);
        Ok(self.push(v, Op::Ln(a), rg))
    }

    /// Scalar `sum((a - b)^2)`.
    pub fn squared_error(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("squared_error", a, b)?;
        let s = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::scalar(s), Op::SquaredError(a, b), rg))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let x = self.value(a);
        let s = x.sum() / T::c(x.len() as f64);
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Row-wise `x / max(|x|, NORM_EPS)`.
    pub fn l2_normalize_rows(&mut self, a: NodeId) -> NodeId {
        let x = self.value(a);
        let (m, n) = x.dims2();
        let eps = T::c(NORM_EPS);
        let mut out = x.data().to_vec();
        for r in 0..m {
            let row = &mut out[r * n..(r + 1) * n];
            let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt().max(eps);
            for v in row.iter_mut() {
                *v = *v / norm;
            }
        }
        let rg = self.rg(a);
        self.push(
            Tensor::matrix(m, n, out).expect("same shape"),
            Op::L2NormalizeRows(a),
            rg,
        )
    }

    /// `m x n`, `m x n` -> `m x 1` of per-row dot products.
    pub fn row_dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("row_dot", a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let (m, _) = av.dims2();
        let out = (0..m)
            .map(|r| av.row(r).iter().zip(bv.row(r)).map(|(&x, &y)| x * y).sum())
            .collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(m, 1, out)?, Op::RowDot(a, b), rg))
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let x = self.value(a);
        let (m, n) = x.dims2();
        if len == 0 || start + len > m {
            return Err(TensorError::OutOfRange {
                op: "slice_rows",
                index: start + len,
                bound: m,
            });
        }
        let out = x.data()[start * n..(start + len) * n].to_vec();
        let rg = self.rg(a);
        Ok(self.push(Tensor::matrix(len, n, out)?, Op::SliceRows(a, start), rg))
    }

    /// Rows of `a` in `index` order; indices may repeat.
    pub fn gather_rows(&mut self, a: NodeId, index: &[usize]) -> Result<NodeId> {
        let x = self.value(a);
        let (m, n) = x.dims2();
        let mut out = Vec::with_capacity(index.len() * n);
        for &i in index {
            if i >= m {
                return Err(TensorError::OutOfRange {
                    op: "gather_rows",
                    index: i,
                    bound: m,
                });
            }
            out.extend_from_slice(x.row(i));
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::matrix(index.len(), n, out)?,
            Op::GatherRows(a, index.to_vec()),
            rg,
        ))
    }

    /// Picks `(row, col)` entries into a `k x 1` column.
    pub fn select_elems(&mut self, a: NodeId, at: &[(usize, usize)]) -> Result<NodeId> {
        let x = self.value(a);
        let (m, n) = x.dims2();
        let mut out = Vec::with_capacity(at.len());
        for &(r, c) in at {
            if r >= m || c >= n {
                return Err(TensorError::OutOfRange {
                    op: "select_elems",
                    index: r * n + c,
                    bound: m * n,
                });
            }
            out.push(x.at(r, c));
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::matrix(at.len(), 1, out)?,
            Op::SelectElems(a, at.to_vec()),
            rg,
        ))
    }

    pub fn reshape(&mut self, a: NodeId, rows: usize, cols: usize) -> Result<NodeId> {
        let v = self.value(a).clone().reshaped(vec![rows, cols])?;
        let rg = self.rg(a);
        Ok(self.push(v, Op::Reshape(a), rg))
    }

    pub fn clamp(&mut self, a: NodeId, lo: T, hi: T) -> NodeId {
        let v = self.value(a).map(|x| x.max(lo).min(hi));
        let rg = self.rg(a);
        self.push(v, Op::Clamp(a, lo, hi), rg)
    }

    /// Dense layer `x @ w + b`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let h = self.matmul(x, w)?;
        self.add_row_bias(h, b)
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: NodeId) -> Result<Backward<T>> {
        let rv = self.value(root);
        if rv.len() != 1 {
            return Err(TensorError::NonScalarRoot(rv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::full(rv.shape(), T::one()));
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Backward {
            grads,
            params: self.params.clone(),
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], id: NodeId, g: Tensor<T>) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        let shape = self.nodes[id.0].value.shape().to_vec();
        let g = if g.shape() == shape.as_slice() {
            g
        } else {
            g.reshaped(shape).expect("gradient length matches value")
        };
        match &mut grads[id.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, idx: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[idx];
        let y = &node.value;
        match &node.op {
            Op::Input | Op::Var | Op::Param | Op::StopGrad => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = av.dims2();
                let n = bv.cols();
                if self.rg(*a) {
                    let mut da = vec![T::zero(); m * k];
                    gemm_into(m, n, k, g.data(), false, bv.data(), true, &mut da, T::zero());
                    self.accumulate(grads, *a, Tensor::matrix(m, k, da).unwrap());
                }
                if self.rg(*b) {
                    let mut db = vec![T::zero(); k * n];
                    gemm_into(k, m, n, av.data(), true, g.data(), false, &mut db, T::zero());
                    self.accumulate(grads, *b, Tensor::matrix(k, n, db).unwrap());
                }
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.transpose()),
            Op::ConcatCols(parts) => {
                let rows = y.rows();
                let mut offset = 0;
                for p in parts {
                    let c = self.value(*p).cols();
                    if self.rg(*p) {
                        let mut d = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            d.extend_from_slice(&g.row(r)[offset..offset + c]);
                        }
                        self.accumulate(grads, *p, Tensor::matrix(rows, c, d).unwrap());
                    }
                    offset += c;
                }
            }
            Op::StackRows(parts) => {
                let cols = y.cols();
                let mut offset = 0;
                for p in parts {
                    let r = self.value(*p).rows();
                    if self.rg(*p) {
                        let d = g.data()[offset * cols..(offset + r) * cols].to_vec();
                        self.accumulate(grads, *p, Tensor::matrix(r, cols, d).unwrap());
                    }
                    offset += r;
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g.zip_map(self.value(*b), |d, x| d * x));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, g.zip_map(self.value(*a), |d, x| d * x));
                }
            }
            Op::AddRowBias(a, bias) => {
                self.accumulate(grads, *a, g.clone());
                if self.rg(*bias) {
                    let (m, n) = g.dims2();
                    let mut db = vec![T::zero(); n];
                    for r in 0..m {
                        for (acc, &v) in db.iter_mut().zip(g.row(r)) {
                            *acc = *acc + v;
                        }
                    }
                    self.accumulate(grads, *bias, Tensor::matrix(1, n, db).unwrap());
                }
            }
            Op::Scale(a, s) => {
                let s = *s;
                self.accumulate(grads, *a, g.map(|v| v * s));
            }
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::LeakyRelu(a) => {
                let slope = T::c(LEAKY_SLOPE);
                let d = g.zip_map(self.value(*a), |d, x| if x > T::zero() { d } else { d * slope });
                self.accumulate(grads, *a, d);
            }
            Op::SoftmaxRows(a) => {
                let (m, n) = y.dims2();
                let mut d = vec![T::zero(); m * n];
                for r in 0..m {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                    for c in 0..n {
                        d[r * n + c] = yr[c] * (gr[c] - dot);
                    }
                }
                self.accumulate(grads, *a, Tensor::matrix(m, n, d).unwrap());
            }
            Op::LogSoftmaxRows(a) => {
                let (m, n) = y.dims2();
                let mut d = vec![T::zero(); m * n];
                for r in 0..m {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let gsum: T = gr.iter().copied().sum();
                    for c in 0..n {
                        d[r * n + c] = gr[c] - yr[c].exp() * gsum;
                    }
                }
                self.accumulate(grads, *a, Tensor::matrix(m, n, d).unwrap());
            }
            Op::Exp(a) => self.accumulate(grads, *a, g.zip_map(y, |d, v| d * v)),
            Op::Ln(a) => self.accumulate(grads, *a, g.zip_map(self.value(*a), |d, x| d / x)),
            Op::SquaredError(a, b) => {
                let two = T::c(2.0) * g.item();
                let diff = self.value(*a).zip_map(self.value(*b), |x, z| two * (x - z));
                if self.rg(*b) {
                    self.accumulate(grads, *b, diff.map(|v| -v));
                }
                self.accumulate(grads, *a, diff);
            }
            Op::Mean(a) => {
                let x = self.value(*a);
                let v = g.item() / T::c(x.len() as f64);
                self.accumulate(grads, *a, Tensor::full(x.shape(), v));
            }
            Op::Sum(a) => {
                let x = self.value(*a);
                self.accumulate(grads, *a, Tensor::full(x.shape(), g.item()));
            }
            Op::L2NormalizeRows(a) => {
                let x = self.value(*a);
                let (m, n) = x.dims2();
                let eps = T::c(NORM_EPS);
                let mut d = vec![T::zero(); m * n];
                for r in 0..m {
                    let (xr, yr, gr) = (x.row(r), y.row(r), g.row(r));
                    let raw = xr.iter().map(|&v| v * v).sum::<T>().sqrt();
                    let norm = raw.max(eps);
                    let proj: T = if raw > eps {
                        yr.iter().zip(gr).map(|(&p, &q)| p * q).sum()
                    } else {
                        T::zero()
                    };
                    for c in 0..n {
                        d[r * n + c] = (gr[c] - yr[c] * proj) / norm;
                    }
                }
                self.accumulate(grads, *a, Tensor::matrix(m, n, d).unwrap());
            }
            Op::RowDot(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, n) = av.dims2();
                let scale_rows = |src: &Tensor<T>| {
                    let mut d = Vec::with_capacity(m * n);
                    for r in 0..m {
                        let gr = g.data()[r];
                        d.extend(src.row(r).iter().map(|&v| v * gr));
                    }
                    Tensor::matrix(m, n, d).unwrap()
                };
                if self.rg(*a) {
                    self.accumulate(grads, *a, scale_rows(bv));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, scale_rows(av));
                }
            }
            Op::SliceRows(a, start) => {
                let x = self.value(*a);
                let (_, n) = x.dims2();
                let mut d = Tensor::zeros(x.shape());
                d.data_mut()[start * n..start * n + g.len()].copy_from_slice(g.data());
                self.accumulate(grads, *a, d);
            }
            Op::GatherRows(a, index) => {
                let x = self.value(*a);
                let n = x.cols();
                let mut d = Tensor::zeros(x.shape());
                for (k, &i) in index.iter().enumerate() {
                    let dst = &mut d.data_mut()[i * n..(i + 1) * n];
                    for (o, &v) in dst.iter_mut().zip(g.row(k)) {
                        *o = *o + v;
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::SelectElems(a, at) => {
                let x = self.value(*a);
                let n = x.cols();
                let mut d = Tensor::zeros(x.shape());
                for (k, &(r, c)) in at.iter().enumerate() {
                    let slot = &mut d.data_mut()[r * n + c];
                    *slot = *slot + g.data()[k];
                }
                self.accumulate(grads, *a, d);
            }
            Op::Reshape(a) => self.accumulate(grads, *a, g.clone()),
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                let d = g.zip_map(self.value(*a), |d, x| {
                    if x >= lo && x <= hi {
                        d
                    } else {
                        T::zero()
                    }
                });
                self.accumulate(grads, *a, d);
            }
        }
    }
}

/// Row-wise stabilized softmax outside of a graph.
pub fn softmax_rows<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (m, n) = x.dims2();
    let mut out = x.data().to_vec();
    for r in 0..m {
        let row = &mut out[r * n..(r + 1) * n];
        let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            total = total + *v;
        }
        for v in row.iter_mut() {
            *v = *v / total;
        }
    }
    Tensor::matrix(m, n, out).expect("same shape")
}
