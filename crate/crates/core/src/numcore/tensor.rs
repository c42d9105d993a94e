//! Dense `f64` tensors with a dynamic reverse-mode graph.
//!
//! Every op produces a new immutable [`Tensor`]. When at least one input
//! requires a gradient the result keeps references to its inputs, so the
//! graph is exactly the set of values reachable from the output. Node ids
//! grow monotonically on each thread, which gives a topological order for
//! free during [`Tensor::backward`].
//!
//! Tensors are `!Send`: one graph per thread. Parameters live in plain
//! vectors (see [`crate::numcore::ParamStore`]) and are bound to fresh leaf
//! tensors for every forward pass.

use std::cell::Cell;
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use super::kernels::{self, numel};
use crate::error::{Error, Result};

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

#[derive(Clone)]
pub struct Tensor(Rc<Node>);

struct Node {
    id: u64,
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    op: Op,
}

#[derive(Clone, Copy, Debug)]
enum Unary {
    Neg,
    Exp,
    Log,
    Tanh,
    Sigmoid,
    Softplus,
    Relu,
    Abs,
    Sqrt,
    Square,
    Scale(f64),
    AddScalar(f64),
}

#[derive(Clone, Copy, Debug)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

enum Op {
    Leaf,
    Unary(Unary, Tensor),
    Binary(Binary, Tensor, Tensor),
    SumAll(Tensor),
    SumAxis { x: Tensor, axis: usize },
    MatMul(Tensor, Tensor),
    TransposeLast(Tensor),
    Reshape(Tensor),
    IndexRows(Tensor, Rc<Vec<usize>>),
    NarrowLast { x: Tensor, start: usize },
    CatLast(Vec<Tensor>),
    Softmax(Tensor),
    LogSoftmax(Tensor),
    LayerNorm { x: Tensor, eps: f64 },
    PickLast(Tensor, Rc<Vec<usize>>),
    Diagonal(Tensor),
    DiagEmbed(Tensor),
    LogAbsDet(Tensor),
}

impl Op {
    fn parents(&self) -> Vec<&Tensor> {
        match self {
            Op::Leaf => vec![],
            Op::Unary(_, x)
            | Op::SumAll(x)
            | Op::SumAxis { x, .. }
            | Op::TransposeLast(x)
            | Op::Reshape(x)
            | Op::IndexRows(x, _)
            | Op::NarrowLast { x, .. }
            | Op::Softmax(x)
            | Op::LogSoftmax(x)
            | Op::LayerNorm { x, .. }
            | Op::PickLast(x, _)
            | Op::Diagonal(x)
            | Op::DiagEmbed(x)
            | Op::LogAbsDet(x) => vec![x],
            Op::Binary(_, a, b) | Op::MatMul(a, b) => vec![a, b],
            Op::CatLast(xs) => xs.iter().collect(),
        }
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("values", &self.0.data)
            .finish()
    }
}

/// Gradients of a scalar with respect to every leaf that requires one.
#[derive(Debug, Default)]
pub struct Gradients {
    by_id: HashMap<u64, Vec<f64>>,
}

impl Gradients {
    pub fn get(&self, leaf: &Tensor) -> Option<&[f64]> {
        self.by_id.get(&leaf.0.id).map(Vec::as_slice)
    }

    /// Gradient of `leaf`, or zeros when the output does not depend on it.
    pub fn get_or_zeros(&self, leaf: &Tensor) -> Vec<f64> {
        self.get(leaf).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; leaf.numel()])
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }
}

fn make(data: Vec<f64>, shape: Vec<usize>, op: Op) -> Tensor {
    debug_assert_eq!(data.len(), numel(&shape));
    let requires_grad = op.parents().iter().any(|p| p.0.requires_grad);
    let op = if requires_grad { op } else { Op::Leaf };
    Tensor(Rc::new(Node {
        id: next_id(),
        shape,
        data,
        requires_grad,
        op,
    }))
}

impl Tensor {
    /// A constant (no gradient) tensor.
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        if data.len() != numel(shape) {
            return Err(Error::invalid_shape(
                "Tensor::new",
                shape,
                format!("{} values supplied", data.len()),
            ));
        }
        Ok(make(data, shape.to_vec(), Op::Leaf))
    }

    /// A leaf that collects a gradient during [`Tensor::backward`].
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        let t = Self::new(data, shape)?;
        Ok(t.into_param())
    }

    fn into_param(self) -> Self {
        let node = Rc::try_unwrap(self.0).unwrap_or_else(|rc| Node {
            id: rc.id,
            shape: rc.shape.clone(),
            data: rc.data.clone(),
            requires_grad: false,
            op: Op::Leaf,
        });
        Tensor(Rc::new(Node {
            id: next_id(),
            shape: node.shape,
            data: node.data,
            requires_grad: true,
            op: Op::Leaf,
        }))
    }

    pub fn scalar(v: f64) -> Self {
        make(vec![v], vec![], Op::Leaf)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        make(vec![0.0; numel(shape)], shape.to_vec(), Op::Leaf)
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        make(vec![v; numel(shape)], shape.to_vec(), Op::Leaf)
    }

    pub fn vector(data: &[f64]) -> Self {
        make(data.to_vec(), vec![data.len()], Op::Leaf)
    }

    pub fn eye(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        make(data, vec![n, n], Op::Leaf)
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Self {
        make(self.0.data.clone(), self.0.shape.clone(), Op::Leaf)
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.0.data
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    fn last_dim(&self) -> usize {
        *self.0.shape.last().unwrap_or(&1)
    }

    // ----- elementwise ---------------------------------------------------

    fn unary(&self, kind: Unary) -> Tensor {
        let f: fn(f64, Unary) -> f64 = |x, k| match k {
            Unary::Neg => -x,
            Unary::Exp => x.exp(),
            Unary::Log => x.ln(),
            Unary::Tanh => x.tanh(),
            Unary::Sigmoid => kernels::stable_sigmoid(x),
            Unary::Softplus => kernels::stable_softplus(x),
            Unary::Relu => x.max(0.0),
            Unary::Abs => x.abs(),
            Unary::Sqrt => x.sqrt(),
            Unary::Square => x * x,
            Unary::Scale(c) => c * x,
            Unary::AddScalar(c) => x + c,
        };
        let data = self.0.data.iter().map(|&x| f(x, kind)).collect();
        make(data, self.0.shape.clone(), Op::Unary(kind, self.clone()))
    }

    pub fn neg(&self) -> Tensor {
        self.unary(Unary::Neg)
    }
    pub fn exp(&self) -> Tensor {
        self.unary(Unary::Exp)
    }
    pub fn log(&self) -> Tensor {
        self.unary(Unary::Log)
    }
    pub fn tanh(&self) -> Tensor {
        self.unary(Unary::Tanh)
    }
    pub fn sigmoid(&self) -> Tensor {
        self.unary(Unary::Sigmoid)
    }
    /// `ln(1 + eˣ)`, evaluated without overflow.
    pub fn softplus(&self) -> Tensor {
        self.unary(Unary::Softplus)
    }
    pub fn relu(&self) -> Tensor {
        self.unary(Unary::Relu)
    }
    pub fn abs(&self) -> Tensor {
        self.unary(Unary::Abs)
    }
    pub fn sqrt(&self) -> Tensor {
        self.unary(Unary::Sqrt)
    }
    pub fn square(&self) -> Tensor {
        self.unary(Unary::Square)
    }
    pub fn scale(&self, c: f64) -> Tensor {
        self.unary(Unary::Scale(c))
    }
    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.unary(Unary::AddScalar(c))
    }

    fn binary(&self, other: &Tensor, kind: Binary, name: &'static str) -> Result<Tensor> {
        let f = |a: f64, b: f64| match kind {
            Binary::Add => a + b,
            Binary::Sub => a - b,
            Binary::Mul => a * b,
            Binary::Div => a / b,
        };
        let (a, b) = (self.values(), other.values());
        if self.shape() == other.shape() {
            let data = a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect();
            return Ok(make(data, self.0.shape.clone(), Op::Binary(kind, self.clone(), other.clone())));
        }
        let out_shape = kernels::broadcast_shape(self.shape(), other.shape())
            .ok_or_else(|| Error::shape(name, self.shape(), other.shape()))?;
        let ia = kernels::broadcast_index(self.shape(), &out_shape);
        let ib = kernels::broadcast_index(other.shape(), &out_shape);
        let data = ia.iter().zip(&ib).map(|(&i, &j)| f(a[i], b[j])).collect();
        Ok(make(data, out_shape, Op::Binary(kind, self.clone(), other.clone())))
    }

    /// Elementwise sum with right-aligned broadcasting.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Binary::Add, "add")
    }
    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Binary::Sub, "sub")
    }
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Binary::Mul, "mul")
    }
    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Binary::Div, "div")
    }

    // ----- reductions ----------------------------------------------------

    /// Sum of all entries; shape `[]`.
    pub fn sum(&self) -> Tensor {
        let s = self.values().iter().sum();
        make(vec![s], vec![], Op::SumAll(self.clone()))
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel().max(1) as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sum over `axis`, keeping it as a size-1 dimension.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(Error::invalid_shape("sum_axis", shape, format!("axis {axis} out of range")));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut data = vec![0.0; outer * inner];
        let x = self.values();
        for o in 0..outer {
            for a in 0..len {
                let base = (o * len + a) * inner;
                for i in 0..inner {
                    data[o * inner + i] += x[base + i];
                }
            }
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = 1;
        Ok(make(data, out_shape, Op::SumAxis { x: self.clone(), axis }))
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Tensor> {
        let n = *self
            .shape()
            .get(axis)
            .ok_or_else(|| Error::invalid_shape("mean_axis", self.shape(), "axis out of range"))?;
        Ok(self.sum_axis(axis)?.scale(1.0 / n as f64))
    }

    /// Sum over the last axis, keeping it with size 1.
    pub fn sum_last(&self) -> Result<Tensor> {
        if self.rank() == 0 {
            return Ok(self.clone());
        }
        self.sum_axis(self.rank() - 1)
    }

    // ----- linear algebra ------------------------------------------------

    /// `[.., m, k] × [k, n]` (shared right operand) or `[b.., m, k] × [b.., k, n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (self.shape(), other.shape());
        let err = || Error::shape("matmul", sa, sb);
        if sa.len() < 2 || sb.len() < 2 {
            return Err(err());
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != k2 {
            return Err(err());
        }
        let mut out_shape = sa[..sa.len() - 2].to_vec();
        out_shape.extend([m, n]);
        let mut data = vec![0.0; numel(&out_shape)];
        if sb.len() == 2 {
            let rows = numel(sa) / k;
            kernels::matmul_acc(self.values(), other.values(), &mut data, rows, k, n);
        } else {
            if sa[..sa.len() - 2] != sb[..sb.len() - 2] {
                return Err(err());
            }
            let batch: usize = sa[..sa.len() - 2].iter().product();
            for bi in 0..batch {
                kernels::matmul_acc(
                    &self.values()[bi * m * k..(bi + 1) * m * k],
                    &other.values()[bi * k * n..(bi + 1) * k * n],
                    &mut data[bi * m * n..(bi + 1) * m * n],
                    m,
                    k,
                    n,
                );
            }
        }
        Ok(make(data, out_shape, Op::MatMul(self.clone(), other.clone())))
    }

    /// Apply a `[k, n]` weight to every row of a `[.., k]` tensor, giving `[.., n]`.
    /// Unlike [`Tensor::matmul`] this accepts rank-1 input.
    pub fn matmul_rows(&self, weight: &Tensor) -> Result<Tensor> {
        if weight.rank() != 2 || self.rank() == 0 || self.last_dim() != weight.shape()[0] {
            return Err(Error::shape("matmul_rows", self.shape(), weight.shape()));
        }
        if self.rank() >= 2 {
            return self.matmul(weight);
        }
        let n = weight.shape()[1];
        self.reshape(&[1, self.numel()])?.matmul(weight)?.reshape(&[n])
    }

    /// Matrix `[m, k]` times vector `[k]`, giving `[m]`.
    pub fn matvec(&self, v: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || v.rank() != 1 {
            return Err(Error::shape("matvec", self.shape(), v.shape()));
        }
        let m = self.shape()[0];
        self.matmul(&v.reshape(&[v.numel(), 1])?)?.reshape(&[m])
    }

    /// Swap the last two axes.
    pub fn transpose(&self) -> Result<Tensor> {
        let s = self.shape();
        if s.len() < 2 {
            return Err(Error::invalid_shape("transpose", s, "needs rank >= 2"));
        }
        let (m, n) = (s[s.len() - 2], s[s.len() - 1]);
        let batch = numel(s) / (m * n).max(1);
        let x = self.values();
        let mut data = vec![0.0; x.len()];
        for b in 0..batch {
            let off = b * m * n;
            for i in 0..m {
                for j in 0..n {
                    data[off + j * m + i] = x[off + i * n + j];
                }
            }
        }
        let mut out_shape = s.to_vec();
        let r = s.len();
        out_shape.swap(r - 2, r - 1);
        Ok(make(data, out_shape, Op::TransposeLast(self.clone())))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() {
            return Err(Error::shape("reshape", self.shape(), shape));
        }
        Ok(make(self.0.data.clone(), shape.to_vec(), Op::Reshape(self.clone())))
    }

    /// Gather along the first axis: `out[i] = self[index[i]]`.
    pub fn index_rows(&self, index: &[usize]) -> Result<Tensor> {
        let s = self.shape();
        if s.is_empty() {
            return Err(Error::invalid_shape("index_rows", s, "needs rank >= 1"));
        }
        let rows = s[0];
        let width = numel(&s[1..]);
        let mut data = Vec::with_capacity(index.len() * width);
        for &r in index {
            if r >= rows {
                return Err(Error::invalid_shape("index_rows", s, format!("row {r} out of range")));
            }
            data.extend_from_slice(&self.values()[r * width..(r + 1) * width]);
        }
        let mut out_shape = s.to_vec();
        out_shape[0] = index.len();
        Ok(make(data, out_shape, Op::IndexRows(self.clone(), Rc::new(index.to_vec()))))
    }

    /// Slice `[start, start+len)` of the last axis.
    pub fn narrow_last(&self, start: usize, len: usize) -> Result<Tensor> {
        let d = self.last_dim();
        if self.rank() == 0 || start + len > d {
            return Err(Error::invalid_shape("narrow_last", self.shape(), format!("slice {start}+{len}")));
        }
        let rows = self.numel() / d.max(1);
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&self.values()[r * d + start..r * d + start + len]);
        }
        let mut out_shape = self.shape().to_vec();
        *out_shape.last_mut().unwrap() = len;
        Ok(make(data, out_shape, Op::NarrowLast { x: self.clone(), start }))
    }

    /// Concatenate along the last axis; leading axes must agree.
    pub fn cat_last(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid_shape("cat_last", &[], "no inputs"))?;
        let lead = &first.shape()[..first.rank().saturating_sub(1)];
        for p in parts {
            if p.rank() == 0 || &p.shape()[..p.rank() - 1] != lead {
                return Err(Error::shape("cat_last", first.shape(), p.shape()));
            }
        }
        let rows = numel(lead);
        let total: usize = parts.iter().map(|p| p.last_dim()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                let d = p.last_dim();
                data.extend_from_slice(&p.values()[r * d..(r + 1) * d]);
            }
        }
        let mut out_shape = lead.to_vec();
        out_shape.push(total);
        Ok(make(data, out_shape, Op::CatLast(parts.to_vec())))
    }

    // ----- normalisation -------------------------------------------------

    pub fn softmax_last(&self) -> Tensor {
        let d = self.last_dim().max(1);
        let mut data = self.0.data.clone();
        for row in data.chunks_mut(d) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        make(data, self.0.shape.clone(), Op::Softmax(self.clone()))
    }

    pub fn log_softmax_last(&self) -> Tensor {
        let d = self.last_dim().max(1);
        let mut data = self.0.data.clone();
        for row in data.chunks_mut(d) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        make(data, self.0.shape.clone(), Op::LogSoftmax(self.clone()))
    }

    /// Zero-mean, unit-variance rows over the last axis (no affine part).
    pub fn layer_norm_last(&self, eps: f64) -> Tensor {
        let d = self.last_dim().max(1);
        let mut data = self.0.data.clone();
        for row in data.chunks_mut(d) {
            let (mu, inv) = row_stats(row, eps);
            for v in row.iter_mut() {
                *v = (*v - mu) * inv;
            }
        }
        make(data, self.0.shape.clone(), Op::LayerNorm { x: self.clone(), eps })
    }

    /// `out[r] = self[r, index[r]]` over the flattened leading axes.
    pub fn pick_last(&self, index: &[usize]) -> Result<Tensor> {
        let d = self.last_dim();
        let rows = self.numel() / d.max(1);
        if self.rank() == 0 || index.len() != rows {
            return Err(Error::invalid_shape("pick_last", self.shape(), format!("{} indices", index.len())));
        }
        let mut data = Vec::with_capacity(rows);
        for (r, &i) in index.iter().enumerate() {
            if i >= d {
                return Err(Error::invalid_shape("pick_last", self.shape(), format!("index {i} out of range")));
            }
            data.push(self.values()[r * d + i]);
        }
        let out_shape = self.shape()[..self.rank() - 1].to_vec();
        Ok(make(data, out_shape, Op::PickLast(self.clone(), Rc::new(index.to_vec()))))
    }

    /// Diagonal of the trailing square matrices: `[.., n, n] -> [.., n]`.
    pub fn diagonal(&self) -> Result<Tensor> {
        let n = self.square_dim("diagonal")?;
        let batch = self.numel() / (n * n).max(1);
        let mut data = Vec::with_capacity(batch * n);
        for b in 0..batch {
            for i in 0..n {
                data.push(self.values()[b * n * n + i * n + i]);
            }
        }
        let out_shape = self.shape()[..self.rank() - 1].to_vec();
        Ok(make(data, out_shape, Op::Diagonal(self.clone())))
    }

    /// Inverse of [`Tensor::diagonal`]: `[.., n] -> [.., n, n]`, zero off-diagonal.
    pub fn diag_embed(&self) -> Result<Tensor> {
        if self.rank() == 0 {
            return Err(Error::invalid_shape("diag_embed", self.shape(), "needs rank >= 1"));
        }
        let n = self.last_dim();
        let batch = self.numel() / n.max(1);
        let mut data = vec![0.0; batch * n * n];
        for b in 0..batch {
            for i in 0..n {
                data[b * n * n + i * n + i] = self.values()[b * n + i];
            }
        }
        let mut out_shape = self.shape().to_vec();
        out_shape.push(n);
        Ok(make(data, out_shape, Op::DiagEmbed(self.clone())))
    }

    /// `log|det|` of each trailing square matrix, via LU with partial pivoting.
    pub fn log_abs_det(&self) -> Result<Tensor> {
        let n = self.square_dim("log_abs_det")?;
        let batch = self.numel() / (n * n).max(1);
        let mut data = Vec::with_capacity(batch);
        for b in 0..batch {
            let mut lu = self.values()[b * n * n..(b + 1) * n * n].to_vec();
            kernels::lu_factor(&mut lu, n)?;
            data.push((0..n).map(|i| lu[i * n + i].abs().ln()).sum());
        }
        let out_shape = self.shape()[..self.rank() - 2].to_vec();
        Ok(make(data, out_shape, Op::LogAbsDet(self.clone())))
    }

    fn square_dim(&self, op: &'static str) -> Result<usize> {
        let s = self.shape();
        if s.len() < 2 || s[s.len() - 1] != s[s.len() - 2] {
            return Err(Error::invalid_shape(op, s, "needs trailing square matrices"));
        }
        Ok(s[s.len() - 1])
    }

    // ----- reverse mode --------------------------------------------------

    /// Reverse sweep from a single-element output.
    pub fn backward(&self) -> Result<Gradients> {
        if self.numel() != 1 {
            return Err(Error::NonScalar(self.shape().to_vec()));
        }
        let mut grads = Gradients::default();
        if !self.requires_grad() {
            return Ok(grads);
        }
        let mut nodes: HashMap<u64, Tensor> = HashMap::new();
        let mut stack = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if nodes.contains_key(&t.0.id) {
                continue;
            }
            for p in t.0.op.parents() {
                if p.requires_grad() && !nodes.contains_key(&p.0.id) {
                    stack.push(p.clone());
                }
            }
            nodes.insert(t.0.id, t);
        }
        let mut order: Vec<u64> = nodes.keys().copied().collect();
        order.sort_unstable_by(|a, b| b.cmp(a));

        let mut pending: HashMap<u64, Vec<f64>> = HashMap::new();
        pending.insert(self.0.id, vec![1.0]);
        for id in order {
            let Some(g) = pending.remove(&id) else { continue };
            let node = &nodes[&id];
            if let Op::Leaf = node.0.op {
                grads.by_id.insert(id, g);
                continue;
            }
            node.propagate(&g, &mut |parent: &Tensor, contrib: Vec<f64>| {
                if !parent.requires_grad() {
                    return;
                }
                match pending.get_mut(&parent.0.id) {
                    Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, c)| *a += c),
                    None => {
                        pending.insert(parent.0.id, contrib);
                    }
                }
            })?;
        }
        Ok(grads)
    }

    fn propagate(&self, g: &[f64], emit: &mut dyn FnMut(&Tensor, Vec<f64>)) -> Result<()> {
        let out = self.values();
        match &self.0.op {
            Op::Leaf => {}
            Op::Unary(kind, x) => {
                let xv = x.values();
                let d: Vec<f64> = (0..g.len())
                    .map(|i| {
                        let (xi, yi) = (xv[i], out[i]);
                        let local = match *kind {
                            Unary::Neg => -1.0,
                            Unary::Exp => yi,
                            Unary::Log => 1.0 / xi,
                            Unary::Tanh => 1.0 - yi * yi,
                            Unary::Sigmoid => yi * (1.0 - yi),
                            Unary::Softplus => kernels::stable_sigmoid(xi),
                            Unary::Relu => {
                                if xi > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            Unary::Abs => {
                                if xi > 0.0 {
                                    1.0
                                } else if xi < 0.0 {
                                    -1.0
                                } else {
                                    0.0
                                }
                            }
                            Unary::Sqrt => 0.5 / yi,
                            Unary::Square => 2.0 * xi,
                            Unary::Scale(c) => c,
                            Unary::AddScalar(_) => 1.0,
                        };
                        g[i] * local
                    })
                    .collect();
                emit(x, d);
            }
            Op::Binary(kind, a, b) => {
                let (av, bv) = (a.values(), b.values());
                let same = a.shape() == b.shape();
                let (ia, ib) = if same {
                    (None, None)
                } else {
                    (
                        Some(kernels::broadcast_index(a.shape(), self.shape())),
                        Some(kernels::broadcast_index(b.shape(), self.shape())),
                    )
                };
                let at = |i: usize| ia.as_ref().map_or(i, |v| v[i]);
                let bt = |i: usize| ib.as_ref().map_or(i, |v| v[i]);
                let mut ga = vec![0.0; a.numel()];
                let mut gb = vec![0.0; b.numel()];
                for i in 0..g.len() {
                    let (ja, jb) = (at(i), bt(i));
                    let (x, y) = (av[ja], bv[jb]);
                    let (da, db) = match kind {
                        Binary::Add => (1.0, 1.0),
                        Binary::Sub => (1.0, -1.0),
                        Binary::Mul => (y, x),
                        Binary::Div => (1.0 / y, -x / (y * y)),
                    };
                    ga[ja] += g[i] * da;
                    gb[jb] += g[i] * db;
                }
                emit(a, ga);
                emit(b, gb);
            }
            Op::SumAll(x) => emit(x, vec![g[0]; x.numel()]),
            Op::SumAxis { x, axis } => {
                let s = x.shape();
                let outer: usize = s[..*axis].iter().product();
                let len = s[*axis];
                let inner: usize = s[axis + 1..].iter().product();
                let mut d = vec![0.0; x.numel()];
                for o in 0..outer {
                    for a in 0..len {
                        for i in 0..inner {
                            d[(o * len + a) * inner + i] = g[o * inner + i];
                        }
                    }
                }
                emit(x, d);
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (a.shape(), b.shape());
                let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
                let n = sb[sb.len() - 1];
                let mut ga = vec![0.0; a.numel()];
                let mut gb = vec![0.0; b.numel()];
                if sb.len() == 2 {
                    let rows = a.numel() / k;
                    kernels::matmul_nt_acc(g, b.values(), &mut ga, rows, k, n);
                    kernels::matmul_tn_acc(a.values(), g, &mut gb, rows, k, n);
                } else {
                    let batch = a.numel() / (m * k);
                    for bi in 0..batch {
                        let gs = &g[bi * m * n..(bi + 1) * m * n];
                        kernels::matmul_nt_acc(
                            gs,
                            &b.values()[bi * k * n..(bi + 1) * k * n],
                            &mut ga[bi * m * k..(bi + 1) * m * k],
                            m,
                            k,
                            n,
                        );
                        kernels::matmul_tn_acc(
                            &a.values()[bi * m * k..(bi + 1) * m * k],
                            gs,
                            &mut gb[bi * k * n..(bi + 1) * k * n],
                            m,
                            k,
                            n,
                        );
                    }
                }
                emit(a, ga);
                emit(b, gb);
            }
            Op::TransposeLast(x) => {
                let s = self.shape();
                let (m, n) = (s[s.len() - 2], s[s.len() - 1]);
                let batch = g.len() / (m * n).max(1);
                let mut d = vec![0.0; g.len()];
                for b in 0..batch {
                    let off = b * m * n;
                    for i in 0..m {
                        for j in 0..n {
                            d[off + j * m + i] = g[off + i * n + j];
                        }
                    }
                }
                emit(x, d);
            }
            Op::Reshape(x) => emit(x, g.to_vec()),
            Op::IndexRows(x, index) => {
                let width = numel(&x.shape()[1..]);
                let mut d = vec![0.0; x.numel()];
                for (r, &src) in index.iter().enumerate() {
                    for c in 0..width {
                        d[src * width + c] += g[r * width + c];
                    }
                }
                emit(x, d);
            }
            Op::NarrowLast { x, start } => {
                let dx = x.last_dim();
                let len = self.last_dim();
                let mut d = vec![0.0; x.numel()];
                for r in 0..g.len() / len.max(1) {
                    d[r * dx + start..r * dx + start + len].copy_from_slice(&g[r * len..(r + 1) * len]);
                }
                emit(x, d);
            }
            Op::CatLast(parts) => {
                let total = self.last_dim();
                let rows = g.len() / total.max(1);
                let mut offset = 0;
                for p in parts {
                    let dp = p.last_dim();
                    let mut d = Vec::with_capacity(p.numel());
                    for r in 0..rows {
                        d.extend_from_slice(&g[r * total + offset..r * total + offset + dp]);
                    }
                    offset += dp;
                    emit(p, d);
                }
            }
            Op::Softmax(x) => {
                let dl = self.last_dim().max(1);
                let mut d = vec![0.0; g.len()];
                for r in 0..g.len() / dl {
                    let (y, gr) = (&out[r * dl..(r + 1) * dl], &g[r * dl..(r + 1) * dl]);
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..dl {
                        d[r * dl + j] = y[j] * (gr[j] - dot);
                    }
                }
                emit(x, d);
            }
            Op::LogSoftmax(x) => {
                let dl = self.last_dim().max(1);
                let mut d = vec![0.0; g.len()];
                for r in 0..g.len() / dl {
                    let gr = &g[r * dl..(r + 1) * dl];
                    let gsum: f64 = gr.iter().sum();
                    for j in 0..dl {
                        d[r * dl + j] = gr[j] - out[r * dl + j].exp() * gsum;
                    }
                }
                emit(x, d);
            }
            Op::LayerNorm { x, eps } => {
                let dl = self.last_dim().max(1);
                let xv = x.values();
                let mut d = vec![0.0; g.len()];
                for r in 0..g.len() / dl {
                    let (_, inv) = row_stats(&xv[r * dl..(r + 1) * dl], *eps);
                    let y = &out[r * dl..(r + 1) * dl];
                    let gr = &g[r * dl..(r + 1) * dl];
                    let gmean = gr.iter().sum::<f64>() / dl as f64;
                    let gymean = gr.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / dl as f64;
                    for j in 0..dl {
                        d[r * dl + j] = inv * (gr[j] - gmean - y[j] * gymean);
                    }
                }
                emit(x, d);
            }
            Op::PickLast(x, index) => {
                let dl = x.last_dim();
                let mut d = vec![0.0; x.numel()];
                for (r, &i) in index.iter().enumerate() {
                    d[r * dl + i] = g[r];
                }
                emit(x, d);
            }
            Op::Diagonal(x) => {
                let n = self.last_dim();
                let mut d = vec![0.0; x.numel()];
                for b in 0..g.len() / n.max(1) {
                    for i in 0..n {
                        d[b * n * n + i * n + i] = g[b * n + i];
                    }
                }
                emit(x, d);
            }
            Op::DiagEmbed(x) => {
                let n = x.last_dim();
                let d = (0..x.numel())
                    .map(|k| {
                        let (b, i) = (k / n, k % n);
                        g[b * n * n + i * n + i]
                    })
                    .collect();
                emit(x, d);
            }
            Op::LogAbsDet(x) => {
                let n = x.last_dim();
                let mut d = vec![0.0; x.numel()];
                for (b, &gb) in g.iter().enumerate() {
                    let inv = kernels::inverse(&x.values()[b * n * n..(b + 1) * n * n], n)?;
                    for i in 0..n {
                        for j in 0..n {
                            d[b * n * n + i * n + j] = gb * inv[j * n + i];
                        }
                    }
                }
                emit(x, d);
            }
        }
        Ok(())
    }
}

fn row_stats(row: &[f64], eps: f64) -> (f64, f64) {
    let n = row.len() as f64;
    let mu = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
    (mu, 1.0 / (var + eps).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn elementwise_values_at_origin() {
        let z = Tensor::scalar(0.0);
        assert_eq!(z.tanh().item(), 0.0);
        assert_eq!(z.sigmoid().item(), 0.5);
        assert_abs_diff_eq!(z.softplus().item(), 2f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn power_rule_and_tanh_slope() {
        let x = Tensor::param(vec![3.0], &[]).unwrap();
        let g = x.square().backward().unwrap();
        assert_eq!(g.get(&x).unwrap(), &[6.0]);

        let x = Tensor::param(vec![0.0], &[]).unwrap();
        let g = x.tanh().backward().unwrap();
        assert_eq!(g.get(&x).unwrap(), &[1.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let x = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
        assert!(matches!(x.exp().backward(), Err(Error::NonScalar(s)) if s == vec![2]));
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2]);
        let err = a.add(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2]"), "{msg}");
        assert!(a.matmul(&Tensor::zeros(&[2, 2])).is_err());
    }

    #[test]
    fn broadcasting_add_reduces_gradient() {
        let x = Tensor::param(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]).unwrap();
        let b = Tensor::param(vec![0.5, 0.5, 0.5], &[3]).unwrap();
        let y = x.add(&b).unwrap().sum();
        let g = y.backward().unwrap();
        assert_eq!(g.get(&b).unwrap(), &[2.0, 2.0, 2.0]);
        assert_eq!(g.get(&x).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn matmul_and_matvec_forward() {
        let a = Tensor::new(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]).unwrap();
        let v = Tensor::vector(&[1.0, 1.0]);
        assert_eq!(a.matvec(&v).unwrap().values(), &[3.0, 7.0]);
        let b = Tensor::eye(2);
        assert_eq!(a.matmul(&b).unwrap().values(), a.values());
        assert_eq!(a.transpose().unwrap().values(), &[1.0, 3.0, 2.0, 4.0]);
    }

    #[test]
    fn unused_leaf_gets_no_gradient() {
        let x = Tensor::param(vec![1.0], &[]).unwrap();
        let y = Tensor::param(vec![2.0], &[]).unwrap();
        let g = x.exp().backward().unwrap();
        assert!(g.get(&y).is_none());
        assert_eq!(g.get_or_zeros(&y), vec![0.0]);
    }

    #[test]
    fn constants_do_not_record_parents() {
        let a = Tensor::vector(&[1.0, 2.0]);
        let b = a.exp().tanh();
        assert!(!b.requires_grad());
        assert!(matches!(b.0.op, Op::Leaf));
    }

    #[test]
    fn log_abs_det_of_diagonal() {
        let m = Tensor::new(vec![2.0, 0.0, 0.0, 2.0], &[2, 2]).unwrap();
        assert_abs_diff_eq!(m.log_abs_det().unwrap().item(), 2.0 * 2f64.ln(), epsilon = 1e-15);
        assert!(Tensor::zeros(&[2, 2]).log_abs_det().is_err());
    }
}
