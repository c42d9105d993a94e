//! Parameterised building blocks. Each holds `ParamId`s into the model's
//! store and runs against a [`Bound`] copy of it.

use crate::error::Result;
use crate::numcore::{Bound, ParamId, ParamStore, Rng, Tensor};

pub(crate) const LN_EPS: f64 = 1e-5;
/// Additive mask value for excluded attention keys.
pub(crate) const MASKED: f64 = -1e9;

#[derive(Clone, Debug)]
pub(crate) struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let w = store.glorot(format!("{name}.w"), fan_in, fan_out, rng);
        let b = store.zeros(format!("{name}.b"), &[fan_out]);
        Self { w, b }
    }

    /// A map whose weights start small, so its output begins near the bias.
    pub fn small(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, std: f64, rng: &mut Rng) -> Self {
        let w = store.normal(format!("{name}.w"), &[fan_in, fan_out], std, rng);
        let b = store.zeros(format!("{name}.b"), &[fan_out]);
        Self { w, b }
    }

    pub fn forward(&self, p: &Bound, x: &Tensor) -> Result<Tensor> {
        x.matmul_rows(p.get(self.w))?.add(p.get(self.b))
    }
}

#[derive(Clone, Debug)]
pub(crate) struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        let gain = store.add(format!("{name}.gain"), &[dim], vec![1.0; dim]);
        let bias = store.zeros(format!("{name}.bias"), &[dim]);
        Self { gain, bias }
    }

    pub fn forward(&self, p: &Bound, x: &Tensor) -> Result<Tensor> {
        x.layer_norm_last(LN_EPS).mul(p.get(self.gain))?.add(p.get(self.bias))
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl Attention {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, heads: usize, rng: &mut Rng) -> Self {
        Self {
            q: Linear::new(store, &format!("{name}.q"), d, d, rng),
            k: Linear::new(store, &format!("{name}.k"), d, d, rng),
            v: Linear::new(store, &format!("{name}.v"), d, d, rng),
            o: Linear::new(store, &format!("{name}.o"), d, d, rng),
            heads,
        }
    }

    /// `query` `[B, Tq, d]`, `memory` `[B, Tk, d]`, `mask` additive and
    /// broadcastable to `[B, Tq, Tk]`.
    pub fn forward(&self, p: &Bound, query: &Tensor, memory: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let d = *query.shape().last().unwrap();
        let dh = d / self.heads;
        let q = self.q.forward(p, query)?;
        let k = self.k.forward(p, memory)?;
        let v = self.v.forward(p, memory)?;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = q.narrow_last(h * dh, dh)?;
            let kh = k.narrow_last(h * dh, dh)?;
            let vh = v.narrow_last(h * dh, dh)?;
            let scores = qh.matmul(&kh.transpose()?)?.scale(scale).add(mask)?;
            outs.push(scores.softmax_last().matmul(&vh)?);
        }
        let joined = if outs.len() == 1 { outs.pop().unwrap() } else { Tensor::cat_last(&outs)? };
        self.o.forward(p, &joined)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, hidden: usize, rng: &mut Rng) -> Self {
        Self {
            inner: Linear::new(store, &format!("{name}.inner"), d, hidden, rng),
            outer: Linear::new(store, &format!("{name}.outer"), hidden, d, rng),
        }
    }

    pub fn forward(&self, p: &Bound, x: &Tensor) -> Result<Tensor> {
        self.outer.forward(p, &self.inner.forward(p, x)?.relu())
    }
}
