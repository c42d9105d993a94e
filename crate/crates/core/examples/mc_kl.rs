//! Single-sample Monte-Carlo KL against the closed form for two Gaussians.

use flownmt::flows::{DiagGaussian, LatentDraw};
use flownmt::numcore::{Rng, Stream, Tensor};
use flownmt::objective::mc_kl_estimate;

fn main() -> flownmt::Result<()> {
    let n = 100_000;
    let tile = |v: &[f64]| Tensor::new(v.repeat(n), &[n, v.len()]);
    let q = DiagGaussian::new(tile(&[0.5, -0.3])?, tile(&[-0.2, 0.4])?)?;
    let p = DiagGaussian::new(tile(&[0.0, 0.0])?, tile(&[0.0, 0.0])?)?;
    let exact = q.kl_divergence(&p)?.values()[0];
    let (z, log_q) = q.sample(&mut Rng::new(3, Stream::Sampling))?;
    let draw = LatentDraw { z0: z.clone(), z_k: z, log_q };
    let est = mc_kl_estimate(&[draw], &p)?;
    let mean = est.values().iter().sum::<f64>() / n as f64;
    let var = est.values().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    println!("closed form {exact:.5}, MC mean {mean:.5} ± {:.5} (1 SE)", (var / n as f64).sqrt());
    Ok(())
}
