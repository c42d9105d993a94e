//! Build a latent-variable translation model, draw a posterior code and
//! inspect how much of it the gate lets through.

use flownmt::flows::FlowKind;
use flownmt::latentnmt::{decoder_input, Conditioning, LatentMode, LatentNmt, ModelConfig};
use flownmt::numcore::{Rng, Stream};
use flownmt::objective::sample_posterior;

fn main() -> flownmt::Result<()> {
    let cfg = ModelConfig {
        vocab_size: 16,
        d_model: 16,
        latent_dim: 8,
        latent: LatentMode::Variational,
        flow_kind: FlowKind::Sylvester,
        n_flows: 4,
        ortho_columns: 4,
        conditioning: Conditioning::SourceAndTarget,
        ..ModelConfig::default()
    };
    let model = LatentNmt::new(cfg, 1)?;
    println!("{} parameters in {} tensors", model.params.num_scalars(), model.params.len());

    let p = model.bind(false);
    let src = vec![vec![4, 5, 6, 7, 2], vec![8, 9, 2]];
    let tgt = vec![vec![5, 6, 7, 8, 2], vec![8, 9, 2]];
    let inputs = model.conditioning_inputs(&p, &src, Some(&tgt))?;
    let prior = model.condition_prior(&p, &inputs.pooled_src)?;
    let post = model.condition_posterior(&p, &inputs)?;
    let draw = sample_posterior(&post, &mut Rng::new(1, Stream::Sampling))?;
    let log_p = prior.log_prob(&draw.z_k)?;
    for i in 0..src.len() {
        println!("sentence {i}: log q(z) = {:.3}, log p(z) = {:.3}", draw.log_q.values()[i], log_p.values()[i]);
    }

    let enc = model.encode(&p, &src)?;
    let prefixes: Vec<_> = tgt.iter().map(|t| decoder_input(t)).collect();
    let (logits, trace) = model.forward_logits(&p, &enc, &prefixes, Some(&draw.z_k))?;
    let trace = trace.expect("latent model reports its gate");
    println!("logits shape {:?}, mean gate {:.3}", logits.shape(), trace.mean());
    Ok(())
}
