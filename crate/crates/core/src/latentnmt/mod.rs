//! Gated-latent encoder-decoder with amortised prior and flow posterior.

mod beam;
mod config;
mod layers;
mod transformer;

pub use beam::{beam_search, beam_search_batch, greedy_batch, Hypothesis};
pub use config::{Conditioning, LatentMode, ModelConfig};

use layers::Linear;
use transformer::{causal_mask, key_mask, positions, DecoderLayer, EncoderLayer};

use crate::datasim::{BOS, PAD};
use crate::error::{Error, Result};
use crate::flows::{
    CouplingNet, DiagGaussian, FlowKind, FlowStack, FlowStep, Parity, PlanarParams, SylvesterParams,
};
use crate::numcore::{Bound, ParamId, ParamStore, Rng, Stream, Tensor};

/// Encoder output for a padded batch.
#[derive(Clone, Debug)]
pub struct EncoderState {
    /// `[B, T_src, d_model]`
    pub hidden: Tensor,
    /// Flattened `[B, T_src]`, `true` at real tokens.
    pub mask: Vec<bool>,
    pub batch: usize,
    pub len: usize,
}

impl EncoderState {
    /// Repeat sentence rows: row `i` of the result is row `rows[i]` here.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        let d = self.hidden.shape()[2];
        let hidden = self
            .hidden
            .reshape(&[self.batch, self.len * d])?
            .index_rows(rows)?
            .reshape(&[rows.len(), self.len, d])?;
        let mask = rows
            .iter()
            .flat_map(|&r| self.mask[r * self.len..(r + 1) * self.len].iter().copied())
            .collect();
        Ok(Self {
            hidden,
            mask,
            batch: rows.len(),
            len: self.len,
        })
    }
}

/// Pooled embeddings the conditioning networks read, `[B, d_model]` each.
#[derive(Clone, Debug)]
pub struct ConditioningInputs {
    pub pooled_src: Tensor,
    pub pooled_tgt: Option<Tensor>,
}

/// Base Gaussian and flow stack of `q(Z | ·)`.
#[derive(Clone, Debug)]
pub struct Posterior {
    pub base: DiagGaussian,
    pub flows: FlowStack,
    pub conditioning: Conditioning,
}

/// Gate values from one injection.
#[derive(Clone, Debug)]
pub struct GateTrace {
    /// Same shape as the decoder states.
    pub gate: Tensor,
}

impl GateTrace {
    /// Mean gate value per sentence (leading axis).
    pub fn sentence_means(&self) -> Vec<f64> {
        let v = self.gate.values();
        let rows = if self.gate.rank() >= 2 { self.gate.shape()[0] } else { 1 };
        v.chunks(v.len() / rows).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect()
    }

    pub fn mean(&self) -> f64 {
        let v = self.gate.values();
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// `[T, e]` → `[e]` or `[B, T, e]` → `[B, e]`, averaging rows whose `mask`
/// entry is `true`.
pub fn mean_pool(embeddings: &Tensor, mask: &[bool]) -> Result<Tensor> {
    let s = embeddings.shape();
    let (batch, len, width) = match *s {
        [t, e] => (1, t, e),
        [b, t, e] => (b, t, e),
        _ => return Err(Error::invalid_shape("mean_pool", s, "expected [T, e] or [B, T, e]")),
    };
    if mask.len() != batch * len {
        return Err(Error::invalid_shape("mean_pool", s, format!("mask has {} entries", mask.len())));
    }
    let mut weights = vec![0.0; batch * batch * len];
    for b in 0..batch {
        let row = &mask[b * len..(b + 1) * len];
        let count = row.iter().filter(|&&k| k).count();
        if count == 0 {
            return Err(Error::EmptyPool);
        }
        for (t, &keep) in row.iter().enumerate() {
            if keep {
                weights[b * batch * len + b * len + t] = 1.0 / count as f64;
            }
        }
    }
    let pool = Tensor::new(weights, &[batch, batch * len])?;
    let pooled = pool.matmul(&embeddings.reshape(&[batch * len, width])?)?;
    if s.len() == 2 {
        pooled.reshape(&[width])
    } else {
        Ok(pooled)
    }
}

#[derive(Clone, Debug)]
struct Net {
    embed: ParamId,
    encoder: Vec<EncoderLayer>,
    enc_norm: layers::LayerNorm,
    decoder: Vec<DecoderLayer>,
    dec_norm: layers::LayerNorm,
    output: Linear,
    gate: Option<Linear>,
    project: Option<Linear>,
    prior: Option<Linear>,
    posterior: Option<Linear>,
    flows: Vec<Linear>,
}

/// Model parameters plus the layout that reads them.
#[derive(Clone, Debug)]
pub struct LatentNmt {
    pub config: ModelConfig,
    pub params: ParamStore,
    net: Net,
}

impl LatentNmt {
    /// Fresh parameters drawn from the `Init` stream of `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(seed, Stream::Init);
        let mut store = ParamStore::new();
        let c = &config;
        let d = c.d_model;
        let embed = store.normal("embed", &[c.vocab_size, d], 1.0 / (d as f64).sqrt(), &mut rng);
        let encoder = (0..c.n_layers_enc)
            .map(|i| EncoderLayer::new(&mut store, &format!("enc{i}"), d, c.n_heads, c.d_ffn, &mut rng))
            .collect();
        let enc_norm = layers::LayerNorm::new(&mut store, "enc_norm", d);
        let decoder = (0..c.n_layers_dec)
            .map(|i| DecoderLayer::new(&mut store, &format!("dec{i}"), d, c.n_heads, c.d_ffn, &mut rng))
            .collect();
        let dec_norm = layers::LayerNorm::new(&mut store, "dec_norm", d);
        let output = Linear::new(&mut store, "output", d, c.vocab_size, &mut rng);

        let mut net = Net {
            embed,
            encoder,
            enc_norm,
            decoder,
            dec_norm,
            output,
            gate: None,
            project: None,
            prior: None,
            posterior: None,
            flows: Vec::new(),
        };
        if c.latent != LatentMode::Off {
            net.gate = Some(Linear::new(&mut store, "latent.gate", 2 * d, d, &mut rng));
            if c.code_dim() != d {
                net.project = Some(Linear::new(&mut store, "latent.project", c.code_dim(), d, &mut rng));
            }
        }
        if c.latent == LatentMode::Variational {
            let dz = c.latent_dim;
            let ctx = c.context_dim();
            net.prior = Some(Linear::small(&mut store, "prior", d, 2 * dz, 0.01, &mut rng));
            net.posterior = Some(Linear::small(&mut store, "posterior", ctx, 2 * dz, 0.01, &mut rng));
            for k in 0..c.n_flows {
                let name = format!("flow{k}");
                let map = match c.flow_kind {
                    FlowKind::Planar => {
                        let map = Linear::small(&mut store, &name, ctx, 2 * dz + 1, 0.01, &mut rng);
                        let bias = store.get_mut(map.b);
                        for v in bias.iter_mut() {
                            *v = 0.3 * rng.normal();
                        }
                        map
                    }
                    FlowKind::Sylvester => {
                        let m = c.ortho_columns;
                        let width = dz * m + 2 * m * m + 3 * m;
                        let map = Linear::small(&mut store, &name, ctx, width, 0.01, &mut rng);
                        let bias = store.get_mut(map.b);
                        for (i, v) in bias.iter_mut().enumerate() {
                            *v = if i < dz * m { rng.normal() } else { 0.1 * rng.normal() };
                        }
                        map
                    }
                    FlowKind::Coupling => Linear::small(&mut store, &name, dz / 2 + ctx, dz, 0.01, &mut rng),
                };
                net.flows.push(map);
            }
        }
        Ok(Self {
            config,
            params: store,
            net,
        })
    }

    /// Rebuild the layout for `config` and adopt `params`, which must match
    /// it name for name and shape for shape.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        if model.params.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                model.params.len(),
                params.len()
            )));
        }
        for i in 0..params.len() {
            model.params.set(params.name(i), params.shape(i), params.values(i).to_vec())?;
        }
        Ok(model)
    }

    pub fn bind(&self, requires_grad: bool) -> Bound {
        self.params.bind(requires_grad)
    }

    /// Id of the gate bias, for tests that pin the gate.
    pub fn gate_bias(&self) -> Option<ParamId> {
        self.net.gate.as_ref().map(|g| g.b)
    }

    fn check_ids(&self, seqs: &[Vec<usize>]) -> Result<()> {
        for &id in seqs.iter().flatten() {
            if id >= self.config.vocab_size {
                return Err(Error::OutOfVocab {
                    id,
                    vocab: self.config.vocab_size,
                });
            }
        }
        Ok(())
    }

    /// Raw token embeddings `[B, T, d]` of right-padded sequences and their
    /// keep-mask.
    pub fn embed(&self, p: &Bound, seqs: &[Vec<usize>]) -> Result<(Tensor, Vec<bool>)> {
        self.check_ids(seqs)?;
        let len = seqs.iter().map(Vec::len).max().unwrap_or(0);
        if seqs.is_empty() || len == 0 {
            return Err(Error::invalid_shape("embed", &[seqs.len(), len], "empty batch"));
        }
        let mut ids = Vec::with_capacity(seqs.len() * len);
        let mut mask = Vec::with_capacity(seqs.len() * len);
        for s in seqs {
            for t in 0..len {
                ids.push(s.get(t).copied().unwrap_or(PAD));
                mask.push(t < s.len());
            }
        }
        let emb = p.get(self.net.embed).index_rows(&ids)?;
        Ok((emb.reshape(&[seqs.len(), len, self.config.d_model])?, mask))
    }

    fn with_positions(&self, emb: &Tensor) -> Result<Tensor> {
        let d = self.config.d_model;
        emb.scale((d as f64).sqrt()).add(&positions(emb.shape()[1], d))
    }

    pub fn encode(&self, p: &Bound, src: &[Vec<usize>]) -> Result<EncoderState> {
        let (emb, mask) = self.embed(p, src)?;
        let (batch, len) = (src.len(), emb.shape()[1]);
        let keys = key_mask(&mask, batch, len);
        let mut x = self.with_positions(&emb)?;
        for layer in &self.net.encoder {
            x = layer.forward(p, &x, &keys)?;
        }
        Ok(EncoderState {
            hidden: self.net.enc_norm.forward(p, &x)?,
            mask,
            batch,
            len,
        })
    }

    /// Decoder states `[B, T, d]` before latent injection. Each prefix starts
    /// with BOS; rows of unequal length are right-padded.
    pub fn decode(&self, p: &Bound, prefixes: &[Vec<usize>], enc: &EncoderState) -> Result<Tensor> {
        if prefixes.len() != enc.batch {
            return Err(Error::shape("decode", &[prefixes.len()], &[enc.batch]));
        }
        let (emb, _) = self.embed(p, prefixes)?;
        let len = emb.shape()[1];
        let causal = causal_mask(len);
        let memory_mask = key_mask(&enc.mask, enc.batch, enc.len);
        let mut x = self.with_positions(&emb)?;
        for layer in &self.net.decoder {
            x = layer.forward(p, &x, &enc.hidden, &causal, &memory_mask)?;
        }
        self.net.dec_norm.forward(p, &x)
    }

    /// State at the last position of one prefix, `[d]`.
    pub fn decode_step(&self, p: &Bound, prefix: &[usize], enc: &EncoderState) -> Result<Tensor> {
        if enc.batch != 1 {
            return Err(Error::shape("decode_step", &[1], &[enc.batch]));
        }
        let h = self.decode(p, &[prefix.to_vec()], enc)?;
        let (t, d) = (h.shape()[1], h.shape()[2]);
        h.reshape(&[t, d])?.index_rows(&[t - 1])?.reshape(&[d])
    }

    /// Vocabulary scores for decoder states.
    pub fn logits(&self, p: &Bound, h: &Tensor) -> Result<Tensor> {
        self.net.output.forward(p, h)
    }

    pub fn condition_prior(&self, p: &Bound, pooled_src: &Tensor) -> Result<DiagGaussian> {
        let map = self.net.prior.as_ref().ok_or_else(|| not_variational("condition_prior"))?;
        gaussian_from(&map.forward(p, pooled_src)?, self.config.latent_dim)
    }

    /// Conditioning inputs for a batch. The target is pooled only when the
    /// posterior reads it.
    pub fn conditioning_inputs(
        &self,
        p: &Bound,
        src: &[Vec<usize>],
        tgt: Option<&[Vec<usize>]>,
    ) -> Result<ConditioningInputs> {
        let (emb, mask) = self.embed(p, src)?;
        let pooled_src = mean_pool(&emb, &mask)?;
        let pooled_tgt = match (self.config.conditioning, tgt) {
            (Conditioning::SourceAndTarget, Some(t)) => {
                let (emb, mask) = self.embed(p, t)?;
                Some(mean_pool(&emb, &mask)?)
            }
            _ => None,
        };
        Ok(ConditioningInputs { pooled_src, pooled_tgt })
    }

    /// Base Gaussian and one flow-parameter set per step, each from its own
    /// linear map. Under `source_only` any pooled target is ignored.
    pub fn condition_posterior(&self, p: &Bound, inputs: &ConditioningInputs) -> Result<Posterior> {
        let map = self.net.posterior.as_ref().ok_or_else(|| not_variational("condition_posterior"))?;
        let ctx = match (self.config.conditioning, &inputs.pooled_tgt) {
            (Conditioning::SourceOnly, _) => inputs.pooled_src.clone(),
            (Conditioning::SourceAndTarget, Some(t)) => Tensor::cat_last(&[inputs.pooled_src.clone(), t.clone()])?,
            (Conditioning::SourceAndTarget, None) => {
                return Err(Error::ConditioningMismatch(
                    "source_and_target posterior needs the pooled target".into(),
                ))
            }
        };
        let dz = self.config.latent_dim;
        let base = gaussian_from(&map.forward(p, &ctx)?, dz)?;
        let mut steps = Vec::with_capacity(self.net.flows.len());
        for (k, map) in self.net.flows.iter().enumerate() {
            let step = match self.config.flow_kind {
                FlowKind::Planar => {
                    let raw = map.forward(p, &ctx)?;
                    FlowStep::Planar(PlanarParams::new(
                        raw.narrow_last(0, dz)?,
                        raw.narrow_last(dz, dz)?,
                        raw.narrow_last(2 * dz, 1)?,
                    )?)
                }
                FlowKind::Sylvester => {
                    let raw = map.forward(p, &ctx)?;
                    FlowStep::Sylvester(sylvester_from(&raw, dz, self.config.ortho_columns)?)
                }
                FlowKind::Coupling => FlowStep::ConditionedCoupling(CouplingNet {
                    weight: p.get(map.w).clone(),
                    bias: p.get(map.b).clone(),
                    context: ctx.clone(),
                    parity: Parity::for_step(k),
                }),
            };
            steps.push(step);
        }
        Ok(Posterior {
            base,
            flows: FlowStack::new(steps)?,
            conditioning: self.config.conditioning,
        })
    }

    /// Noise-free code: the base mean pushed through the flows.
    pub fn posterior_mean_latent(&self, posterior: &Posterior) -> Result<Tensor> {
        if posterior.conditioning != Conditioning::SourceOnly {
            return Err(Error::ConditioningMismatch(
                "prediction needs a source_only posterior; the target is unknown".into(),
            ));
        }
        Ok(posterior.flows.transform(&posterior.base.mu)?.0)
    }

    /// `h' = (1 - g) ⊙ h + g ⊙ Z_proj` with `g = σ(W·[h; Z_proj] + b)`.
    ///
    /// `h` is `[d]`, `[B, d]` or `[B, T, d]`; `code` is `[D]` or `[B, D]` and
    /// is shared across positions.
    pub fn inject_latent(&self, p: &Bound, h: &Tensor, code: &Tensor) -> Result<(Tensor, GateTrace)> {
        let gate_map = self.net.gate.as_ref().ok_or_else(|| Error::Config("latent mode is off".into()))?;
        let z = match &self.net.project {
            Some(proj) => proj.forward(p, code)?,
            None => code.clone(),
        };
        let z = if h.rank() == 3 && z.rank() == 2 {
            let (b, t, d) = (h.shape()[0], h.shape()[1], h.shape()[2]);
            let rows: Vec<usize> = (0..b).flat_map(|i| std::iter::repeat_n(i, t)).collect();
            z.index_rows(&rows)?.reshape(&[b, t, d])?
        } else {
            z
        };
        if z.shape() != h.shape() {
            return Err(Error::shape("inject_latent", h.shape(), z.shape()));
        }
        let gate = gate_map.forward(p, &Tensor::cat_last(&[h.clone(), z.clone()])?)?.sigmoid();
        let keep = gate.neg().add_scalar(1.0);
        let out = keep.mul(h)?.add(&gate.mul(&z)?)?;
        Ok((out, GateTrace { gate }))
    }

    /// Per-sentence code used at prediction time, `[S, code_dim]`, or `None`
    /// for a plain Transformer.
    pub fn prediction_code(&self, p: &Bound, src: &[Vec<usize>]) -> Result<Option<Tensor>> {
        match self.config.latent {
            LatentMode::Off => Ok(None),
            LatentMode::Static => Ok(Some(self.conditioning_inputs(p, src, None)?.pooled_src)),
            LatentMode::Variational => {
                let inputs = self.conditioning_inputs(p, src, None)?;
                let post = self.condition_posterior(p, &inputs)?;
                Ok(Some(self.posterior_mean_latent(&post)?))
            }
        }
    }

    /// Teacher-forced scores `[B, T, V]` for `prefixes`, optionally mixing a
    /// per-sentence code into the final decoder states.
    pub fn forward_logits(
        &self,
        p: &Bound,
        enc: &EncoderState,
        prefixes: &[Vec<usize>],
        code: Option<&Tensor>,
    ) -> Result<(Tensor, Option<GateTrace>)> {
        let h = self.decode(p, prefixes, enc)?;
        let (h, trace) = match code {
            Some(z) => {
                let (h, g) = self.inject_latent(p, &h, z)?;
                (h, Some(g))
            }
            None => (h, None),
        };
        Ok((self.logits(p, &h)?, trace))
    }

    /// `log p(tgt | src)` under the prediction-time code; `tgt` ends in EOS.
    pub fn sequence_log_prob(&self, p: &Bound, src: &[usize], tgt: &[usize]) -> Result<f64> {
        let srcs = [src.to_vec()];
        let enc = self.encode(p, &srcs)?;
        let code = self.prediction_code(p, &srcs)?;
        let prefix = decoder_input(tgt);
        let (logits, _) = self.forward_logits(p, &enc, &[prefix], code.as_ref())?;
        let lp = logits.log_softmax_last().pick_last(tgt)?;
        Ok(lp.values().iter().sum())
    }
}

/// Teacher-forcing input: BOS followed by all but the last target token.
pub fn decoder_input(tgt: &[usize]) -> Vec<usize> {
    let mut v = Vec::with_capacity(tgt.len());
    v.push(BOS);
    v.extend_from_slice(&tgt[..tgt.len().saturating_sub(1)]);
    v
}

fn not_variational(op: &str) -> Error {
    Error::Config(format!("{op} needs latent mode variational"))
}

fn gaussian_from(raw: &Tensor, dz: usize) -> Result<DiagGaussian> {
    DiagGaussian::new(raw.narrow_last(0, dz)?, raw.narrow_last(dz, dz)?)
}

fn sylvester_from(raw: &Tensor, dz: usize, m: usize) -> Result<SylvesterParams> {
    let lead = raw.shape()[..raw.rank() - 1].to_vec();
    let with = |tail: &[usize]| {
        let mut s = lead.clone();
        s.extend_from_slice(tail);
        s
    };
    let mut at = 0;
    let mut take = |n: usize| {
        let t = raw.narrow_last(at, n);
        at += n;
        t
    };
    let q_raw = take(dz * m)?.reshape(&with(&[dz, m]))?;
    let r1 = take(m * m)?.reshape(&with(&[m, m]))?;
    let r2 = take(m * m)?.reshape(&with(&[m, m]))?;
    let d1 = take(m)?;
    let d2 = take(m)?;
    let b = take(m)?;
    SylvesterParams::from_raw(&q_raw, &r1, &r2, &d1, &d2, b)
}
