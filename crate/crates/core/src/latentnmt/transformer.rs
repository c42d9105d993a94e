//! Pre-norm encoder/decoder stacks over `[B, T, d]` activations.

use super::layers::{Attention, FeedForward, LayerNorm, MASKED};
use crate::error::Result;
use crate::numcore::{Bound, ParamStore, Rng, Tensor};

#[derive(Clone, Debug)]
pub(crate) struct EncoderLayer {
    norm_attn: LayerNorm,
    attn: Attention,
    norm_ffn: LayerNorm,
    ffn: FeedForward,
}

impl EncoderLayer {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, heads: usize, hidden: usize, rng: &mut Rng) -> Self {
        Self {
            norm_attn: LayerNorm::new(store, &format!("{name}.norm_attn"), d),
            attn: Attention::new(store, &format!("{name}.attn"), d, heads, rng),
            norm_ffn: LayerNorm::new(store, &format!("{name}.norm_ffn"), d),
            ffn: FeedForward::new(store, &format!("{name}.ffn"), d, hidden, rng),
        }
    }

    pub fn forward(&self, p: &Bound, x: &Tensor, key_mask: &Tensor) -> Result<Tensor> {
        let n = self.norm_attn.forward(p, x)?;
        let x = x.add(&self.attn.forward(p, &n, &n, key_mask)?)?;
        let n = self.norm_ffn.forward(p, &x)?;
        x.add(&self.ffn.forward(p, &n)?)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct DecoderLayer {
    norm_self: LayerNorm,
    self_attn: Attention,
    norm_cross: LayerNorm,
    cross_attn: Attention,
    norm_ffn: LayerNorm,
    ffn: FeedForward,
}

impl DecoderLayer {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, heads: usize, hidden: usize, rng: &mut Rng) -> Self {
        Self {
            norm_self: LayerNorm::new(store, &format!("{name}.norm_self"), d),
            self_attn: Attention::new(store, &format!("{name}.self_attn"), d, heads, rng),
            norm_cross: LayerNorm::new(store, &format!("{name}.norm_cross"), d),
            cross_attn: Attention::new(store, &format!("{name}.cross_attn"), d, heads, rng),
            norm_ffn: LayerNorm::new(store, &format!("{name}.norm_ffn"), d),
            ffn: FeedForward::new(store, &format!("{name}.ffn"), d, hidden, rng),
        }
    }

    pub fn forward(
        &self,
        p: &Bound,
        x: &Tensor,
        memory: &Tensor,
        causal: &Tensor,
        memory_mask: &Tensor,
    ) -> Result<Tensor> {
        let n = self.norm_self.forward(p, x)?;
        let x = x.add(&self.self_attn.forward(p, &n, &n, causal)?)?;
        let n = self.norm_cross.forward(p, &x)?;
        let x = x.add(&self.cross_attn.forward(p, &n, memory, memory_mask)?)?;
        let n = self.norm_ffn.forward(p, &x)?;
        x.add(&self.ffn.forward(p, &n)?)
    }
}

/// Fixed sinusoidal position table `[T, d]`.
pub(crate) fn positions(len: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; len * d];
    for t in 0..len {
        for i in 0..d {
            let rate = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let angle = t as f64 * rate;
            data[t * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(data, &[len, d]).expect("position table shape")
}

/// Additive key mask `[B, 1, T]` from a flattened `[B, T]` keep-mask.
pub(crate) fn key_mask(keep: &[bool], batch: usize, len: usize) -> Tensor {
    let data = keep.iter().map(|&k| if k { 0.0 } else { MASKED }).collect();
    Tensor::new(data, &[batch, 1, len]).expect("key mask shape")
}

/// Additive lower-triangular mask `[T, T]`.
pub(crate) fn causal_mask(len: usize) -> Tensor {
    let mut data = vec![0.0; len * len];
    for i in 0..len {
        for j in i + 1..len {
            data[i * len + j] = MASKED;
        }
    }
    Tensor::new(data, &[len, len]).expect("causal mask shape")
}
