//! ELBO with the `β·|KL − C|` rate target, KL annealing and word dropout.

use crate::datasim::{is_special, Pair, UNK};
use crate::error::{Error, Result};
use crate::flows::{stack_forward, DiagGaussian, LatentDraw};
use crate::latentnmt::{decoder_input, LatentMode, LatentNmt, Posterior};
use crate::numcore::{Bound, Rng, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSchedule {
    pub beta: f64,
    /// Target KL rate per sentence.
    pub c: f64,
    pub anneal_steps: usize,
    pub word_dropout: f64,
    /// Posterior samples per sentence for the KL estimate.
    pub samples: usize,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            beta: 1.0,
            c: 0.1,
            anneal_steps: 2000,
            word_dropout: 0.1,
            samples: 1,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.word_dropout) {
            return Err(Error::Config(format!("word_dropout {} outside [0, 1]", self.word_dropout)));
        }
        if self.samples == 0 {
            return Err(Error::Config("kl_samples must be at least 1".into()));
        }
        if self.beta < 0.0 || self.c < 0.0 {
            return Err(Error::Config("beta and C must be non-negative".into()));
        }
        Ok(())
    }
}

/// Linear ramp from 0 to `beta` over `anneal_steps`, then flat.
pub fn anneal_beta(step: usize, schedule: &TrainSchedule) -> f64 {
    if step >= schedule.anneal_steps {
        schedule.beta
    } else {
        schedule.beta * step as f64 / schedule.anneal_steps as f64
    }
}

/// `beta · |kl − C|`, elementwise.
pub fn beta_c_kl(kl: &Tensor, beta: f64, c: f64) -> Tensor {
    kl.add_scalar(-c).abs().scale(beta)
}

/// Replace each non-special token by UNK with probability `rate`.
pub fn word_dropout(tokens: &[usize], rate: f64, rng: &mut Rng) -> Vec<usize> {
    tokens
        .iter()
        .map(|&t| {
            if !is_special(t) && rng.bernoulli(rate) {
                UNK
            } else {
                t
            }
        })
        .collect()
}

/// `(1/L) Σ_l [log q(z_K^l) − log p(z_K^l)]`, one value per latent row.
pub fn mc_kl_estimate(draws: &[LatentDraw], prior: &DiagGaussian) -> Result<Tensor> {
    let first = draws.first().ok_or_else(|| Error::Config("need at least one posterior draw".into()))?;
    let mut total = first.log_q.sub(&prior.log_prob(&first.z_k)?)?;
    for d in &draws[1..] {
        total = total.add(&d.log_q.sub(&prior.log_prob(&d.z_k)?)?)?;
    }
    Ok(total.scale(1.0 / draws.len() as f64))
}

/// One reparameterised posterior sample per row.
pub fn sample_posterior(post: &Posterior, rng: &mut Rng) -> Result<LatentDraw> {
    let (z0, log_q0) = post.base.sample(rng)?;
    stack_forward(&z0, &log_q0, &post.flows)
}

#[derive(Clone, Debug)]
pub struct ElboTerms {
    /// Differentiable `recon_nll + modified_kl`.
    pub loss: Tensor,
    /// Mean over sentences of the summed token NLL.
    pub recon_nll: f64,
    /// Mean per-sentence KL estimate.
    pub kl_est: f64,
    /// `beta_effective · |kl_est − C|`.
    pub modified_kl: f64,
    pub beta_effective: f64,
    pub mean_gate: f64,
    pub kl_per_sentence: Vec<f64>,
}

/// Summed NLL of `targets` per sentence, `[B]`, from scores `[B, T, V]`.
pub(crate) fn sentence_nll(logits: &Tensor, targets: &[Vec<usize>]) -> Result<Tensor> {
    let (b, t) = (logits.shape()[0], logits.shape()[1]);
    let mut index = Vec::with_capacity(b * t);
    let mut mask = Vec::with_capacity(b * t);
    for tgt in targets {
        for j in 0..t {
            index.push(tgt.get(j).copied().unwrap_or(0));
            mask.push(if j < tgt.len() { 1.0 } else { 0.0 });
        }
    }
    let picked = logits.log_softmax_last().pick_last(&index)?;
    Ok(picked.mul(&Tensor::new(mask, &[b, t])?)?.sum_last()?.neg())
}

/// Loss for one batch at optimisation step `step`.
///
/// Word dropout touches only the decoder inputs; reconstruction uses the
/// first of `schedule.samples` posterior draws and the KL term averages all
/// of them.
pub fn elbo_loss(
    model: &LatentNmt,
    p: &Bound,
    batch: &[Pair],
    schedule: &TrainSchedule,
    step: usize,
    sampling: &mut Rng,
    dropout: &mut Rng,
) -> Result<ElboTerms> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let src: Vec<Vec<usize>> = batch.iter().map(|x| x.src.clone()).collect();
    let tgt: Vec<Vec<usize>> = batch.iter().map(|x| x.tgt.clone()).collect();
    let prefixes: Vec<Vec<usize>> = tgt
        .iter()
        .map(|t| word_dropout(&decoder_input(t), schedule.word_dropout, dropout))
        .collect();
    let enc = model.encode(p, &src)?;
    let beta_effective = anneal_beta(step, schedule);
    let (code, kl) = match model.config.latent {
        LatentMode::Off => (None, None),
        LatentMode::Static => (Some(model.conditioning_inputs(p, &src, None)?.pooled_src), None),
        LatentMode::Variational => {
            let inputs = model.conditioning_inputs(p, &src, Some(&tgt))?;
            let post = model.condition_posterior(p, &inputs)?;
            let prior = model.condition_prior(p, &inputs.pooled_src)?;
            let draws = (0..schedule.samples)
                .map(|_| sample_posterior(&post, sampling))
                .collect::<Result<Vec<_>>>()?;
            let kl = mc_kl_estimate(&draws, &prior)?;
            (Some(draws[0].z_k.clone()), Some(kl))
        }
    };
    let (logits, trace) = model.forward_logits(p, &enc, &prefixes, code.as_ref())?;
    let recon = sentence_nll(&logits, &tgt)?.mean();
    let mean_gate = trace.map_or(0.0, |g| g.mean());
    let (loss, kl_est, modified_kl, kl_per_sentence) = match kl {
        Some(kl) => {
            let kl_mean = kl.mean();
            let modified = beta_c_kl(&kl_mean, beta_effective, schedule.c);
            let loss = recon.add(&modified)?;
            (loss, kl_mean.item(), modified.item(), kl.values().to_vec())
        }
        None => (recon.clone(), 0.0, 0.0, Vec::new()),
    };
    if !loss.item().is_finite() {
        return Err(Error::NonFinite(format!("loss at step {step}")));
    }
    Ok(ElboTerms {
        recon_nll: recon.item(),
        loss,
        kl_est,
        modified_kl,
        beta_effective,
        mean_gate,
        kl_per_sentence,
    })
}

/// Held-out bound estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct HeldOut {
    /// Estimated ELBO divided by the number of target tokens (EOS included).
    /// Exact log-likelihood for models without a sampled latent.
    pub elbo_per_token: f64,
    pub recon_per_token: f64,
    /// Per-sentence KL, each averaged over the evaluation samples.
    pub kl_per_sentence: Vec<f64>,
}

impl HeldOut {
    pub fn median_kl(&self) -> f64 {
        median(&self.kl_per_sentence)
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `E_q[log p(y | x, z)] − KL(q ‖ p)` on clean decoder inputs, averaged over
/// `samples` posterior draws per sentence.
pub fn held_out_elbo(
    model: &LatentNmt,
    p: &Bound,
    pairs: &[Pair],
    samples: usize,
    batch_size: usize,
    rng: &mut Rng,
) -> Result<HeldOut> {
    let mut total_elbo = 0.0;
    let mut total_recon = 0.0;
    let mut tokens = 0usize;
    let mut kl_per_sentence = Vec::with_capacity(pairs.len());
    for chunk in pairs.chunks(batch_size.max(1)) {
        let src: Vec<Vec<usize>> = chunk.iter().map(|x| x.src.clone()).collect();
        let tgt: Vec<Vec<usize>> = chunk.iter().map(|x| x.tgt.clone()).collect();
        let prefixes: Vec<Vec<usize>> = tgt.iter().map(|t| decoder_input(t)).collect();
        tokens += tgt.iter().map(Vec::len).sum::<usize>();
        let enc = model.encode(p, &src)?;
        match model.config.latent {
            LatentMode::Off | LatentMode::Static => {
                let code = model.prediction_code(p, &src)?;
                let (logits, _) = model.forward_logits(p, &enc, &prefixes, code.as_ref())?;
                let nll: f64 = sentence_nll(&logits, &tgt)?.values().iter().sum();
                total_recon += nll;
                total_elbo -= nll;
                kl_per_sentence.extend(std::iter::repeat_n(0.0, chunk.len()));
            }
            LatentMode::Variational => {
                let inputs = model.conditioning_inputs(p, &src, Some(&tgt))?;
                let post = model.condition_posterior(p, &inputs)?;
                let prior = model.condition_prior(p, &inputs.pooled_src)?;
                let mut kl_sum = vec![0.0; chunk.len()];
                for _ in 0..samples.max(1) {
                    let draw = sample_posterior(&post, rng)?;
                    let kl = mc_kl_estimate(std::slice::from_ref(&draw), &prior)?;
                    let (logits, _) = model.forward_logits(p, &enc, &prefixes, Some(&draw.z_k))?;
                    let nll = sentence_nll(&logits, &tgt)?;
                    for (i, (&n, &k)) in nll.values().iter().zip(kl.values()).enumerate() {
                        kl_sum[i] += k;
                        total_recon += n / samples.max(1) as f64;
                        total_elbo -= (n + k) / samples.max(1) as f64;
                    }
                }
                kl_per_sentence.extend(kl_sum.into_iter().map(|k| k / samples.max(1) as f64));
            }
        }
    }
    let tokens = tokens.max(1) as f64;
    Ok(HeldOut {
        elbo_per_token: total_elbo / tokens,
        recon_per_token: total_recon / tokens,
        kl_per_sentence,
    })
}

#[cfg(test)]
mod tests;
