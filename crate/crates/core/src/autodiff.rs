//! Reverse-mode differentiation over a per-pass computation graph.
//!
//! A [`Graph`] records every operation of one forward pass. Learnable weights
//! live in a [`ParamStore`]; the graph copies their values in when
//! [`Graph::param`] is called and [`Graph::backward`] accumulates gradients
//! back into the store. The graph is dropped after the pass.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{matmul, matmul_at, matmul_bt, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

/// Named learnable tensors, in insertion order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::contract(format!("duplicate parameter `{name}`")));
        }
        let id = ParamId(self.params.len());
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter {
            name: name.clone(),
            value,
            grad,
        });
        self.by_name.insert(name, id);
        Ok(id)
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn names(&self) -> Vec<&str> {
        self.params.iter().map(|p| p.name.as_str()).collect()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn apply<T: Scalar>(self, v: T) -> T {
        match self {
            Activation::Relu => v.max(T::zero()),
            Activation::Sigmoid => sigmoid(v),
            Activation::Tanh => v.tanh(),
        }
    }

    /// Local derivative expressed through the activation output `y`.
    fn derivative<T: Scalar>(self, y: T) -> T {
        match self {
            Activation::Relu => {
                if y > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Sigmoid => y * (T::one() - y),
            Activation::Tanh => T::one() - y * y,
        }
    }
}

pub fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + e^v)` without overflow.
fn softplus<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        v + (-v).exp().ln_1p()
    } else {
        v.exp().ln_1p()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op<T> {
    Constant,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    MatMulBt(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, T),
    Act(NodeId, Activation),
    RowSoftmax(NodeId),
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    SliceCols(NodeId, usize),
    GatherRows(NodeId, Vec<usize>),
    MaskMul(NodeId, Vec<T>),
    CrossEntropy {
        logits: NodeId,
        targets: Vec<usize>,
        weights: Vec<T>,
        probs: Vec<T>,
    },
    Logistic {
        logits: NodeId,
        targets: Vec<T>,
        weights: Vec<T>,
    },
    SmoothL1 {
        pred: NodeId,
        target: Vec<T>,
        weights: Vec<T>,
    },
    Sum(NodeId),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// One recorded forward pass.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    param_nodes: HashMap<ParamId, NodeId>,
}

fn dim_err(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::Dimension {
        op,
        left: a.to_vec(),
        right: b.to_vec(),
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
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

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Constant)
    }

    /// Leaf bound to a stored parameter. Repeated calls within one pass return
    /// the same node, so a shared weight has a single gradient path.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> NodeId {
        if let Some(&n) = self.param_nodes.get(&id) {
            return n;
        }
        let n = self.push(store.get(id).value.clone(), Op::Param(id));
        self.param_nodes.insert(id, n);
        n
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        let (m, k, k2, n) = (va.rows(), va.cols(), vb.rows(), vb.cols());
        if k != k2 {
            return Err(dim_err("matmul", va.shape(), vb.shape()));
        }
        let out = matmul(va.data(), vb.data(), m, k, n);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`
    pub fn matmul_bt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        let (m, k, n, k2) = (va.rows(), va.cols(), vb.rows(), vb.cols());
        if k != k2 {
            return Err(dim_err("matmul_bt", va.shape(), vb.shape()));
        }
        let out = matmul_bt(va.data(), vb.data(), m, k, n);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMulBt(a, b)))
    }

    /// Adds a `[1×n]` (or length-`n`) bias to every row of `x`.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (vx, vb) = (self.value(x), self.value(bias));
        let n = vx.cols();
        if vb.len() != n {
            return Err(dim_err("add_bias", vx.shape(), vb.shape()));
        }
        let mut out = vx.clone();
        for r in 0..vx.rows() {
            for (o, &b) in out.data_mut()[r * n..(r + 1) * n].iter_mut().zip(vb.data()) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddBias(x, bias)))
    }

    /// `x · w + bias`.
    pub fn affine(&mut self, x: NodeId, w: NodeId, bias: NodeId) -> Result<NodeId> {
        let xw = self.matmul(x, w)?;
        self.add_bias(xw, bias)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(dim_err("add", va.shape(), vb.shape()));
        }
        let mut out = va.clone();
        out.add_assign(vb);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(dim_err("mul", va.shape(), vb.shape()));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: NodeId, c: T) -> NodeId {
        let out = self.value(a).map(|v| v * c);
        self.push(out, Op::Scale(a, c))
    }

    pub fn activation(&mut self, x: NodeId, kind: Activation) -> NodeId {
        let out = self.value(x).map(|v| kind.apply(v));
        self.push(out, Op::Act(x, kind))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.activation(x, Activation::Relu)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        self.activation(x, Activation::Tanh)
    }

    pub fn row_softmax(&mut self, x: NodeId) -> NodeId {
        let out = row_softmax_values(self.value(x));
        self.push(out, Op::RowSoftmax(x))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("concat of zero tensors"))?;
        let rows = self.value(*first).rows();
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(dim_err(
                    "concat_cols",
                    self.value(*first).shape(),
                    self.value(p).shape(),
                ));
            }
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let out = Tensor::matrix(rows, total, data)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("concat of zero tensors"))?;
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.cols() != cols {
                return Err(dim_err("concat_rows", self.value(*first).shape(), v.shape()));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let out = Tensor::matrix(rows, cols, data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    /// Columns `start..end` of every row.
    pub fn slice_cols(&mut self, x: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let v = self.value(x);
        if start >= end || end > v.cols() {
            return Err(dim_err("slice_cols", v.shape(), &[start, end]));
        }
        let rows = v.rows();
        let mut data = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            data.extend_from_slice(&v.row_slice(r)[start..end]);
        }
        let out = Tensor::matrix(rows, end - start, data)?;
        Ok(self.push(out, Op::SliceCols(x, start)))
    }

    /// Row lookup; also used as the embedding-table gather.
    pub fn gather_rows(&mut self, x: NodeId, rows: &[usize]) -> Result<NodeId> {
        let v = self.value(x);
        if rows.is_empty() {
            return Err(Error::contract("gather of zero rows"));
        }
        let mut data = Vec::with_capacity(rows.len() * v.cols());
        for &r in rows {
            if r >= v.rows() {
                return Err(Error::Index {
                    what: "gather_rows",
                    index: r,
                    len: v.rows(),
                });
            }
            data.extend_from_slice(v.row_slice(r));
        }
        let out = Tensor::matrix(rows.len(), v.cols(), data)?;
        Ok(self.push(out, Op::GatherRows(x, rows.to_vec())))
    }

    /// Elementwise product with a fixed mask (dropout).
    pub fn mask_mul(&mut self, x: NodeId, mask: Vec<T>) -> Result<NodeId> {
        let v = self.value(x);
        if mask.len() != v.len() {
            return Err(dim_err("mask_mul", v.shape(), &[mask.len()]));
        }
        let data = v.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        let out = Tensor::new(v.shape().to_vec(), data)?;
        Ok(self.push(out, Op::MaskMul(x, mask)))
    }

    /// Mean of `-log softmax(logits)[t, target_t]` over rows with `mask == 1`.
    /// Zero (with zero gradient) when every row is masked.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize], mask: &[bool]) -> Result<NodeId> {
        if mask.len() != targets.len() {
            return Err(dim_err("cross_entropy", &[targets.len()], &[mask.len()]));
        }
        let count = mask.iter().filter(|&&m| m).count();
        let w = if count == 0 {
            T::zero()
        } else {
            T::one() / T::lit(count as f64)
        };
        let weights: Vec<T> = mask.iter().map(|&m| if m { w } else { T::zero() }).collect();
        self.weighted_cross_entropy(logits, targets, &weights)
    }

    /// `Σ_t weights[t] · -log softmax(logits)[t, target_t]`.
    pub fn weighted_cross_entropy(
        &mut self,
        logits: NodeId,
        targets: &[usize],
        weights: &[T],
    ) -> Result<NodeId> {
        let v = self.value(logits);
        let (rows, cols) = (v.rows(), v.cols());
        if targets.len() != rows || weights.len() != rows {
            return Err(dim_err("cross_entropy", v.shape(), &[targets.len()]));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= cols) {
            return Err(Error::Index {
                what: "cross_entropy target",
                index: bad,
                len: cols,
            });
        }
        let probs = row_softmax_values(v);
        let mut loss = T::zero();
        for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
            if w == T::zero() {
                continue;
            }
            let row = v.row_slice(r);
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = mx + row.iter().map(|&z| (z - mx).exp()).sum::<T>().ln();
            loss += w * (lse - row[t]);
        }
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                probs: probs.into_data(),
            },
        ))
    }

    /// Weighted binary logistic loss on a column of logits.
    pub fn logistic_loss(&mut self, logits: NodeId, targets: &[T], weights: &[T]) -> Result<NodeId> {
        let v = self.value(logits);
        if v.len() != targets.len() || weights.len() != targets.len() {
            return Err(dim_err("logistic_loss", v.shape(), &[targets.len()]));
        }
        let loss = v
            .data()
            .iter()
            .zip(targets)
            .zip(weights)
            .map(|((&z, &y), &w)| w * (softplus(z) - y * z))
            .sum();
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Logistic {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
            },
        ))
    }

    /// `Σ_rows w_r Σ_cols smooth_l1(pred - target)`.
    pub fn smooth_l1(&mut self, pred: NodeId, target: &Tensor<T>, row_weights: &[T]) -> Result<NodeId> {
        let v = self.value(pred);
        if v.shape() != target.shape() || row_weights.len() != v.rows() {
            return Err(dim_err("smooth_l1", v.shape(), target.shape()));
        }
        let cols = v.cols();
        let mut loss = T::zero();
        for (i, (&p, &t)) in v.data().iter().zip(target.data()).enumerate() {
            loss += row_weights[i / cols] * smooth_l1_value(p - t);
        }
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SmoothL1 {
                pred,
                target: target.data().to_vec(),
                weights: row_weights.to_vec(),
            },
        ))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// Back-propagates from a scalar node, accumulating into `store` gradients.
    /// Parameters not reachable from `loss` are left untouched.
    pub fn backward(&self, loss: NodeId, store: &mut ParamStore<T>) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let mut acc = |id: NodeId, delta: Vec<T>| match &mut grads[id.0] {
                Some(existing) => {
                    for (e, d) in existing.iter_mut().zip(delta) {
                        *e += d;
                    }
                }
                slot @ None => *slot = Some(delta),
            };
            match &node.op {
                Op::Constant => {}
                Op::Param(pid) => {
                    let p = store.get_mut(*pid);
                    for (e, d) in p.grad.data_mut().iter_mut().zip(&g) {
                        *e += *d;
                    }
                }
                Op::MatMul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (va.rows(), va.cols(), vb.cols());
                    acc(*a, matmul_bt(&g, vb.data(), m, n, k));
                    acc(*b, matmul_at(va.data(), &g, m, k, n));
                }
                Op::MatMulBt(a, b) => {
                    // out = a bᵀ ; da = g b ; db = gᵀ a
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (va.rows(), va.cols(), vb.rows());
                    acc(*a, matmul(&g, vb.data(), m, n, k));
                    acc(*b, matmul_at(&g, va.data(), m, n, k));
                }
                Op::AddBias(x, b) => {
                    let n = self.value(*b).len();
                    let mut db = vec![T::zero(); n];
                    for (i, &v) in g.iter().enumerate() {
                        db[i % n] += v;
                    }
                    acc(*b, db);
                    acc(*x, g);
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                    acc(*a, g.iter().zip(vb).map(|(&d, &y)| d * y).collect());
                    acc(*b, g.iter().zip(va).map(|(&d, &x)| d * x).collect());
                }
                Op::Scale(a, c) => acc(*a, g.iter().map(|&d| d * *c).collect()),
                Op::Act(x, kind) => {
                    let y = node.value.data();
                    acc(
                        *x,
                        g.iter().zip(y).map(|(&d, &y)| d * kind.derivative(y)).collect(),
                    );
                }
                Op::RowSoftmax(x) => {
                    let y = &node.value;
                    let cols = y.cols();
                    let mut dx = vec![T::zero(); g.len()];
                    for r in 0..y.rows() {
                        let yr = y.row_slice(r);
                        let gr = &g[r * cols..(r + 1) * cols];
                        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for c in 0..cols {
                            dx[r * cols + c] = yr[c] * (gr[c] - dot);
                        }
                    }
                    acc(*x, dx);
                }
                Op::ConcatCols(parts) => {
                    let rows = node.value.rows();
                    let total = node.value.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        let mut dp = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            dp.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                        }
                        acc(p, dp);
                        offset += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.value(p).len();
                        acc(p, g[offset..offset + n].to_vec());
                        offset += n;
                    }
                }
                Op::SliceCols(x, start) => {
                    let vx = self.value(*x);
                    let (rows, cols) = (vx.rows(), vx.cols());
                    let w = node.value.cols();
                    let mut dx = vec![T::zero(); rows * cols];
                    for r in 0..rows {
                        dx[r * cols + start..r * cols + start + w]
                            .copy_from_slice(&g[r * w..(r + 1) * w]);
                    }
                    acc(*x, dx);
                }
                Op::GatherRows(x, idx_rows) => {
                    let vx = self.value(*x);
                    let cols = vx.cols();
                    let mut dx = vec![T::zero(); vx.len()];
                    for (i, &r) in idx_rows.iter().enumerate() {
                        for c in 0..cols {
                            dx[r * cols + c] += g[i * cols + c];
                        }
                    }
                    acc(*x, dx);
                }
                Op::MaskMul(x, mask) => {
                    acc(*x, g.iter().zip(mask).map(|(&d, &m)| d * m).collect());
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    weights,
                    probs,
                } => {
                    let cols = self.value(*logits).cols();
                    let mut dx = vec![T::zero(); probs.len()];
                    for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                        if w == T::zero() {
                            continue;
                        }
                        let scale = g[0] * w;
                        for c in 0..cols {
                            let onehot = if c == t { T::one() } else { T::zero() };
                            dx[r * cols + c] = scale * (probs[r * cols + c] - onehot);
                        }
                    }
                    acc(*logits, dx);
                }
                Op::Logistic {
                    logits,
                    targets,
                    weights,
                } => {
                    let z = self.value(*logits).data();
                    let dx = z
                        .iter()
                        .zip(targets)
                        .zip(weights)
                        .map(|((&z, &y), &w)| g[0] * w * (sigmoid(z) - y))
                        .collect();
                    acc(*logits, dx);
                }
                Op::SmoothL1 {
                    pred,
                    target,
                    weights,
                } => {
                    let p = self.value(*pred);
                    let cols = p.cols();
                    let dx = p
                        .data()
                        .iter()
                        .zip(target)
                        .enumerate()
                        .map(|(i, (&a, &b))| {
                            let d = a - b;
                            let local = if d.abs() < T::one() { d } else { d.signum() };
                            g[0] * weights[i / cols] * local
                        })
                        .collect();
                    acc(*pred, dx);
                }
                Op::Sum(x) => {
                    let n = self.value(*x).len();
                    acc(*x, vec![g[0]; n]);
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn smooth_l1_value<T: Scalar>(d: T) -> T {
    let a = d.abs();
    if a < T::one() {
        T::half() * d * d
    } else {
        a - T::half()
    }
}

/// Row-wise softmax with per-row max subtraction.
pub fn row_softmax_values<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let cols = x.cols();
    let mut out = x.clone();
    for r in 0..x.rows() {
        let row = &mut out.data_mut()[r * cols..(r + 1) * cols];
        let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut s = T::zero();
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: usize, cols: usize, v: &[f64]) -> Tensor<f64> {
        Tensor::matrix(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn affine_examples() {
        let mut store = ParamStore::new();
        let w = store.add("w", t(2, 2, &[1.0, 0.0, 0.0, 1.0])).unwrap();
        let b = store.add("b", t(1, 2, &[0.0, 0.0])).unwrap();
        let w0 = store.add("w0", t(2, 2, &[0.0; 4])).unwrap();
        let b34 = store.add("b34", t(1, 2, &[3.0, 4.0])).unwrap();
        let w1 = store.add("w1", t(2, 1, &[1.0, 1.0])).unwrap();
        let b1 = store.add("b1", t(1, 1, &[1.0])).unwrap();

        let mut g = Graph::new();
        let x = g.constant(t(1, 2, &[1.0, 2.0]));
        let (wn, bn) = (g.param(&store, w), g.param(&store, b));
        let y = g.affine(x, wn, bn).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0]);

        let (wn, bn) = (g.param(&store, w0), g.param(&store, b34));
        let y = g.affine(x, wn, bn).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, 4.0]);

        let x2 = g.constant(t(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let (wn, bn) = (g.param(&store, w1), g.param(&store, b1));
        let y = g.affine(x2, wn, bn).unwrap();
        assert_eq!(g.value(y).data(), &[4.0, 8.0]);
    }

    #[test]
    fn affine_shape_error_names_both_shapes() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(1, 3, &[1.0, 2.0, 3.0]));
        let w = g.constant(t(2, 2, &[1.0; 4]));
        let b = g.constant(t(1, 2, &[0.0; 2]));
        match g.affine(x, w, b) {
            Err(Error::Dimension { left, right, .. }) => {
                assert_eq!(left, vec![1, 3]);
                assert_eq!(right, vec![2, 2]);
            }
            other => panic!("expected dimension error, got {other:?}"),
        }
    }

    #[test]
    fn activation_examples() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::row(vec![-1.0, 0.0, 2.0]));
        let r = g.relu(x);
        assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);
        let z = g.constant(Tensor::row(vec![0.0]));
        let s = g.sigmoid(z);
        assert_eq!(g.value(s).data(), &[0.5]);
        let th = g.tanh(z);
        assert_eq!(g.value(th).data(), &[0.0]);
    }

    #[test]
    fn relu_derivative_at_zero_is_zero() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::row(vec![0.0, 1.0])).unwrap();
        let mut g = Graph::new();
        let x = g.param(&store, p);
        let r = g.relu(x);
        let s = g.sum(r);
        g.backward(s, &mut store).unwrap();
        assert_eq!(store.get(p).grad.data(), &[0.0, 1.0]);
    }

    #[test]
    fn softmax_examples() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::row(vec![0.0, 0.0, 0.0]));
        let y = g.row_softmax(x);
        for &v in g.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let x = g.constant(Tensor::row(vec![1f64.ln(), 3f64.ln()]));
        let y = g.row_softmax(x);
        let d = g.value(y).data();
        assert!((d[0] - 0.25).abs() < 1e-15 && (d[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_examples() {
        let mut g = Graph::<f64>::new();
        let forced = g.constant(Tensor::row(vec![1000.0, 0.0, 0.0]));
        let l = g.cross_entropy(forced, &[0], &[true]).unwrap();
        assert_eq!(g.value(l).item(), 0.0);

        let uniform = g.constant(Tensor::row(vec![0.0; 4]));
        let l = g.cross_entropy(uniform, &[2], &[true]).unwrap();
        assert!((g.value(l).item() - 4f64.ln()).abs() < 1e-15);
        assert!((g.value(l).item() - 1.3863).abs() < 1e-4);

        let l = g.cross_entropy(uniform, &[9], &[true]);
        assert!(matches!(l, Err(Error::Index { .. })));
    }

    #[test]
    fn all_masked_cross_entropy_has_zero_grad() {
        let mut store = ParamStore::new();
        let p = store.add("logits", t(2, 3, &[0.3, -1.0, 2.0, 0.1, 0.2, 0.3])).unwrap();
        let mut g = Graph::new();
        let x = g.param(&store, p);
        let l = g.cross_entropy(x, &[0, 1], &[false, false]).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
        g.backward(l, &mut store).unwrap();
        assert!(store.get(p).grad.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_of_linear_sum_is_broadcast_input() {
        let mut store = ParamStore::new();
        let w = store.add("w", t(3, 2, &[0.5; 6])).unwrap();
        let unused = store.add("unused", t(1, 1, &[2.0])).unwrap();
        let mut g = Graph::new();
        let x = g.constant(t(1, 3, &[1.0, -2.0, 3.0]));
        let wn = g.param(&store, w);
        let y = g.matmul(x, wn).unwrap();
        let l = g.sum(y);
        g.backward(l, &mut store).unwrap();
        assert_eq!(store.get(w).grad.data(), &[1.0, 1.0, -2.0, -2.0, 3.0, 3.0]);
        assert_eq!(store.get(unused).grad.data(), &[0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut store = ParamStore::<f64>::new();
        let mut g = Graph::new();
        let x = g.constant(Tensor::row(vec![1.0, 2.0]));
        assert!(matches!(g.backward(x, &mut store), Err(Error::Contract(_))));
    }

    #[test]
    fn shared_param_is_one_node() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::row(vec![1.0])).unwrap();
        let mut g = Graph::<f64>::new();
        let a = g.param(&store, p);
        let b = g.param(&store, p);
        assert_eq!(a, b);
        assert!(store.add("p", Tensor::row(vec![1.0])).is_err());
    }

    #[test]
    fn smooth_l1_piecewise() {
        assert_eq!(smooth_l1_value(0.0), 0.0);
        assert_eq!(smooth_l1_value(1.0), 0.5);
        assert_eq!(smooth_l1_value(-2.0), 1.5);
        assert_eq!(smooth_l1_value(0.5), 0.125);
    }
}
