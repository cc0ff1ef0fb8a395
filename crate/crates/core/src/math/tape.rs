//! Tape-based reverse-mode automatic differentiation over matrices.
//!
//! Every operation appends a node to the [`Tape`]; node inputs always
//! precede the node itself, so walking the tape backwards is a reverse
//! topological order and each node is visited once.
//!
//! ```
//! use grace::math::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let theta = tape.param(0, Tensor::scalar(3.0)).unwrap();
//! let sq = tape.mul(theta, theta).unwrap();
//! let grads = tape.backward(sq).unwrap();
//! assert_eq!(grads.param(0).unwrap().item().unwrap(), 6.0);
//! ```

use std::collections::BTreeMap;
use std::sync::Arc;

use super::tensor::{
    matmul_a_bt_into, matmul_at_b_into, matmul_into, sigmoid, softmax_in_place, Tensor,
};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// A user-defined differentiable operation.
///
/// `backward` returns one adjoint contribution per input, shaped like the input.
pub trait CustomOp {
    fn name(&self) -> &'static str;
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, adjoint: &Tensor) -> Vec<Tensor>;
}

/// Sparse linear map from a vector to a matrix: `out[o] = sum of w[i]` over entries `(o, i)`.
#[derive(Debug, Clone)]
pub struct SparseMap {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<(usize, usize)>,
}

enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    AddBroadcast(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Arc<Tensor>),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    ConcatCols(Var, Var),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    MaskedSoftmaxRows(Var, Arc<Vec<bool>>),
    Sparse(Var, Arc<SparseMap>),
    Custom(Vec<Var>, Box<dyn CustomOp>),
}

struct Node {
    value: Tensor,
    op: Op,
    /// Depends on at least one parameter.
    grad: bool,
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf | Op::Param => Vec::new(),
            Op::MatMul(a, b) | Op::Add(a, b) | Op::AddBroadcast(a, b) | Op::Mul(a, b) | Op::ConcatCols(a, b) => vec![*a, *b],
            Op::MulConst(a, _)
            | Op::Scale(a, _)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::SliceCols(a, _)
            | Op::SliceRows(a, _)
            | Op::Reshape(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::MaskedSoftmaxRows(a, _)
            | Op::Sparse(a, _) => vec![*a],
            Op::Custom(v, _) => v.clone(),
        }
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<usize, Var>,
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    params: BTreeMap<usize, Tensor>,
    leaves: BTreeMap<usize, Tensor>,
}

impl Gradients {
    /// Gradient with respect to the parameter registered under `id`.
    pub fn param(&self, id: usize) -> Option<&Tensor> {
        self.params.get(&id)
    }

    /// Adjoint accumulated at `v`, if the sweep reached it.
    pub fn of(&self, v: Var) -> Option<&Tensor> {
        self.leaves.get(&v.0)
    }

    pub fn into_params(self) -> BTreeMap<usize, Tensor> {
        self.params
    }
}

fn shape_err<T>(msg: String) -> Result<T> {
    Err(Error::Shape(msg))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let grad = match op {
            Op::Leaf => false,
            Op::Param => true,
            ref other => other.inputs().iter().any(|v| self.nodes[v.0].grad),
        };
        self.nodes.push(Node { value, op, grad });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn dims(&self, v: Var) -> Result<(usize, usize)> {
        self.value(v).dims2()
    }

    /// A constant input; gradients are still reported for it via [`Gradients::of`].
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// A trainable parameter identified by `id`.
    pub fn param(&mut self, id: usize, value: Tensor) -> Result<Var> {
        if self.params.contains_key(&id) {
            return Err(Error::Usage(format!("parameter id {id} registered twice")));
        }
        let v = self.push(value, Op::Param);
        self.params.insert(id, v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a)?;
        let (k2, n) = self.dims(b)?;
        if k != k2 {
            return shape_err(format!("matmul {m}x{k} * {k2}x{n}"));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        Ok(self.push(Tensor::from_raw(vec![m, n], out), Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return shape_err(format!(
                "elementwise op on {:?} and {:?}",
                ta.shape(),
                tb.shape()
            ));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(Tensor::from_raw(ta.shape().to_vec(), data))
    }

    /// `a + b` where `b` is `1 x n` (row), `m x 1` (column) or `1 x 1`.
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = self.dims(a)?;
        let (bm, bn) = self.dims(b)?;
        let bv = self.value(b).data();
        let av = self.value(a).data();
        let mut out = av.to_vec();
        match (bm, bn) {
            (1, 1) => out.iter_mut().for_each(|x| *x += bv[0]),
            (1, c) if c == n => {
                for row in out.chunks_mut(n) {
                    row.iter_mut().zip(bv).for_each(|(x, y)| *x += y);
                }
            }
            (r, 1) if r == m => {
                for (row, y) in out.chunks_mut(n).zip(bv) {
                    row.iter_mut().for_each(|x| *x += y);
                }
            }
            _ => return shape_err(format!("cannot broadcast {bm}x{bn} onto {m}x{n}")),
        }
        Ok(self.push(Tensor::from_raw(vec![m, n], out), Op::AddBroadcast(a, b)))
    }

    /// Elementwise product with a constant tensor of the same shape.
    pub fn mul_const(&mut self, a: Var, c: Arc<Tensor>) -> Result<Var> {
        let ta = self.value(a);
        if ta.shape() != c.shape() {
            return shape_err(format!("mul_const {:?} vs {:?}", ta.shape(), c.shape()));
        }
        let data = ta.data().iter().zip(c.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::from_raw(ta.shape().to_vec(), data);
        Ok(self.push(out, Op::MulConst(a, c)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let ta = self.value(a);
        let out = Tensor::from_raw(ta.shape().to_vec(), ta.data().iter().map(|x| x * c).collect());
        self.push(out, Op::Scale(a, c))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let out = Tensor::from_raw(ta.shape().to_vec(), ta.data().iter().map(|x| x.tanh()).collect());
        self.push(out, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let out = Tensor::from_raw(
            ta.shape().to_vec(),
            ta.data().iter().map(|&x| sigmoid(x)).collect(),
        );
        self.push(out, Op::Sigmoid(a))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var> {
        let (m, n) = self.dims(a)?;
        if start + width > n {
            return shape_err(format!("column slice {start}..{} of {m}x{n}", start + width));
        }
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(m * width);
        for i in 0..m {
            out.extend_from_slice(&src[i * n + start..i * n + start + width]);
        }
        Ok(self.push(Tensor::from_raw(vec![m, width], out), Op::SliceCols(a, start)))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, count: usize) -> Result<Var> {
        let (m, n) = self.dims(a)?;
        if start + count > m {
            return shape_err(format!("row slice {start}..{} of {m}x{n}", start + count));
        }
        let out = self.value(a).data()[start * n..(start + count) * n].to_vec();
        Ok(self.push(Tensor::from_raw(vec![count, n], out), Op::SliceRows(a, start)))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, na) = self.dims(a)?;
        let (mb, nb) = self.dims(b)?;
        if m != mb {
            return shape_err(format!("concat {m}x{na} with {mb}x{nb}"));
        }
        let (ta, tb) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(m * (na + nb));
        for i in 0..m {
            out.extend_from_slice(&ta[i * na..(i + 1) * na]);
            out.extend_from_slice(&tb[i * nb..(i + 1) * nb]);
        }
        Ok(self.push(Tensor::from_raw(vec![m, na + nb], out), Op::ConcatCols(a, b)))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        Ok(self.push(out, Op::Reshape(a)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.sum() / t.len().max(1) as f64;
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    /// Row-wise softmax restricted to entries where `mask` is true.
    /// Masked-out entries are exactly zero; rows with no active entry are all zero.
    pub fn masked_softmax_rows(&mut self, a: Var, mask: Arc<Vec<bool>>) -> Result<Var> {
        let (m, n) = self.dims(a)?;
        if mask.len() != m * n {
            return shape_err(format!("mask of length {} for {m}x{n}", mask.len()));
        }
        let src = self.value(a).data();
        let mut out = vec![0.0; m * n];
        let mut buf = Vec::with_capacity(n);
        for i in 0..m {
            buf.clear();
            for j in 0..n {
                if mask[i * n + j] {
                    buf.push(src[i * n + j]);
                }
            }
            softmax_in_place(&mut buf);
            let mut it = buf.iter();
            for j in 0..n {
                if mask[i * n + j] {
                    out[i * n + j] = *it.next().unwrap();
                }
            }
        }
        Ok(self.push(Tensor::from_raw(vec![m, n], out), Op::MaskedSoftmaxRows(a, mask)))
    }

    /// Applies a [`SparseMap`] to the vector held by `w`.
    pub fn sparse(&mut self, w: Var, map: Arc<SparseMap>) -> Result<Var> {
        let wv = self.value(w).data();
        let mut out = vec![0.0; map.rows * map.cols];
        for &(o, i) in &map.entries {
            if o >= out.len() || i >= wv.len() {
                return shape_err(format!("sparse entry ({o},{i}) out of range"));
            }
            out[o] += wv[i];
        }
        Ok(self.push(Tensor::from_raw(vec![map.rows, map.cols], out), Op::Sparse(w, map)))
    }

    /// Records a node whose value was computed by the caller.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor, op: Box<dyn CustomOp>) -> Var {
        self.push(value, Op::Custom(inputs.to_vec(), op))
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar root, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut adj: Vec<Option<Tensor>> = (0..=root.0).map(|_| None).collect();
        adj[root.0] = Some(Tensor::full(self.value(root).shape(), 1.0));

        for idx in (0..=root.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.grad {
                adj[idx] = Some(g);
                continue;
            }
            match &node.op {
                Op::Leaf | Op::Param => {
                    adj[idx] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let (m, k) = self.value(*a).dims2()?;
                    let n = self.value(*b).cols();
                    if self.nodes[a.0].grad {
                        let ga = accum(&mut adj, *a, self.value(*a).shape());
                        matmul_a_bt_into(g.data(), self.value(*b).data(), ga, m, n, k);
                    }
                    if self.nodes[b.0].grad {
                        let gb = accum(&mut adj, *b, self.value(*b).shape());
                        matmul_at_b_into(self.value(*a).data(), g.data(), gb, m, k, n);
                    }
                }
                Op::Add(a, b) => {
                    add_into(accum(&mut adj, *a, self.value(*a).shape()), g.data());
                    add_into(accum(&mut adj, *b, self.value(*b).shape()), g.data());
                }
                Op::AddBroadcast(a, b) => {
                    add_into(accum(&mut adj, *a, self.value(*a).shape()), g.data());
                    let (m, n) = g.dims2()?;
                    let (bm, bn) = self.value(*b).dims2()?;
                    let gb = accum(&mut adj, *b, self.value(*b).shape());
                    match (bm, bn) {
                        (1, 1) => gb[0] += g.sum(),
                        (1, _) => {
                            for row in g.data().chunks(n) {
                                add_into(gb, row);
                            }
                        }
                        _ => {
                            for (i, row) in g.data().chunks(n).enumerate().take(m) {
                                gb[i] += row.iter().sum::<f64>();
                            }
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                    let ga = accum(&mut adj, *a, self.value(*a).shape());
                    for ((x, gi), y) in ga.iter_mut().zip(g.data()).zip(vb) {
                        *x += gi * y;
                    }
                    let gb = accum(&mut adj, *b, self.value(*b).shape());
                    for ((x, gi), y) in gb.iter_mut().zip(g.data()).zip(va) {
                        *x += gi * y;
                    }
                }
                Op::MulConst(a, c) => {
                    let ga = accum(&mut adj, *a, self.value(*a).shape());
                    for ((x, gi), y) in ga.iter_mut().zip(g.data()).zip(c.data()) {
                        *x += gi * y;
                    }
                }
                Op::Scale(a, c) => {
                    let ga = accum(&mut adj, *a, self.value(*a).shape());
                    for (x, gi) in ga.iter_mut().zip(g.data()) {
                        *x += gi * c;
                    }
                }
                Op::Tanh(a) => {
                    let ga = accum(&mut adj, *a, self.value(*a).shape());
                    for ((x, gi), y) in ga.iter_mut().zip(g.data()).zip(node.value.data()) {
                        *x += gi * (1.0 - y * y);
                    }
                }
                Op::Sigmoid(a) => {
                    let ga = accum(&mut adj, *a, self.value(*a).shape());
                    for ((x, gi), y) in ga.iter_mut().zip(g.data()).zip(node.value.data()) {
                        *x += gi * y * (1.0 - y);
                    }
                }
                Op::SliceCols(a, start) => {
                    let (m, w) = g.dims2()?;
                    let n = self.value(*a).cols();
                    let ga = accum(&mut adj, *a, self.value(*a).shape());
                    for i in 0..m {
                        add_into(&mut ga[i * n + start..i * n + start + w], &g.data()[i * w..(i + 1) * w]);
                    }
                }
                Op::SliceRows(a, start) => {
                    let n = g.cols();
                    let ga = accum(&mut adj, *a, self.value(*a).shape());
                    add_into(&mut ga[start * n..start * n + g.len()], g.data());
                }
                Op::ConcatCols(a, b) => {
                    let na = self.value(*a).cols();
                    let nb = self.value(*b).cols();
                    let m = g.rows();
                    {
                        let ga = accum(&mut adj, *a, self.value(*a).shape());
                        for i in 0..m {
                            add_into(&mut ga[i * na..(i + 1) * na], &g.data()[i * (na + nb)..i * (na + nb) + na]);
                        }
                    }
                    let gb = accum(&mut adj, *b, self.value(*b).shape());
                    for i in 0..m {
                        add_into(
                            &mut gb[i * nb..(i + 1) * nb],
                            &g.data()[i * (na + nb) + na..(i + 1) * (na + nb)],
                        );
                    }
                }
                Op::Reshape(a) => {
                    add_into(accum(&mut adj, *a, self.value(*a).shape()), g.data());
                }
                Op::Sum(a) => {
                    let gv = g.data()[0];
                    accum(&mut adj, *a, self.value(*a).shape())
                        .iter_mut()
                        .for_each(|x| *x += gv);
                }
                Op::Mean(a) => {
                    let n = self.value(*a).len().max(1) as f64;
                    let gv = g.data()[0] / n;
                    accum(&mut adj, *a, self.value(*a).shape())
                        .iter_mut()
                        .for_each(|x| *x += gv);
                }
                Op::MaskedSoftmaxRows(a, mask) => {
                    let (m, n) = g.dims2()?;
                    let y = node.value.data();
                    let ga = accum(&mut adj, *a, self.value(*a).shape());
                    for i in 0..m {
                        let r = i * n..(i + 1) * n;
                        let dot: f64 = y[r.clone()]
                            .iter()
                            .zip(&g.data()[r.clone()])
                            .map(|(p, q)| p * q)
                            .sum();
                        for j in r {
                            if mask[j] {
                                ga[j] += y[j] * (g.data()[j] - dot);
                            }
                        }
                    }
                }
                Op::Sparse(w, map) => {
                    let gw = accum(&mut adj, *w, self.value(*w).shape());
                    for &(o, i) in &map.entries {
                        gw[i] += g.data()[o];
                    }
                }
                Op::Custom(inputs, op) => {
                    let ins: Vec<&Tensor> = inputs.iter().map(|v| self.value(*v)).collect();
                    let parts = op.backward(&ins, &node.value, &g);
                    if parts.len() != inputs.len() {
                        return Err(Error::Usage(format!(
                            "custom op {} returned {} adjoints for {} inputs",
                            op.name(),
                            parts.len(),
                            inputs.len()
                        )));
                    }
                    for (v, part) in inputs.iter().zip(parts) {
                        add_into(accum(&mut adj, *v, self.value(*v).shape()), part.data());
                    }
                }
            }
        }

        let mut params = BTreeMap::new();
        for (&id, &v) in &self.params {
            let g = match v.0 <= root.0 {
                true => adj[v.0].clone(),
                false => None,
            };
            params.insert(id, g.unwrap_or_else(|| Tensor::zeros(self.value(v).shape())));
        }
        let leaves = adj
            .into_iter()
            .enumerate()
            .filter_map(|(i, g)| g.map(|g| (i, g)))
            .collect();
        Ok(Gradients { params, leaves })
    }
}

fn accum<'a>(adj: &'a mut [Option<Tensor>], v: Var, shape: &[usize]) -> &'a mut [f64] {
    adj[v.0]
        .get_or_insert_with(|| Tensor::zeros(shape))
        .data_mut()
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
