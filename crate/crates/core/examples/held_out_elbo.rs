//! Score a checkpoint's held-out ELBO on freshly generated task data.
//!
//! cargo run --release --example held_out_elbo -- run/best.ckpt [pairs] [samples] [seed]

use flownmt::datasim::generate_corpus;
use flownmt::harness::load_model;
use flownmt::numcore::{Rng, Stream};
use flownmt::objective::held_out_elbo;

fn main() -> flownmt::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let Some(path) = args.first() else {
        eprintln!("usage: held_out_elbo <checkpoint> [pairs] [samples] [seed]");
        std::process::exit(2);
    };
    let arg = |i: usize, default: u64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(default);
    let (pairs, samples, seed) = (arg(1, 1000) as usize, arg(2, 16) as usize, arg(3, 77));
    let (cfg, model) = load_model(path.as_ref())?;
    let test = generate_corpus(&cfg.task, pairs, seed)?;
    let mut rng = Rng::new(seed, Stream::Sampling);
    let h = held_out_elbo(&model, &model.bind(false), &test.pairs, samples, 64, &mut rng)?;
    println!(
        "elbo_per_token={:.5} recon_per_token={:.5} median_kl={:.5}",
        h.elbo_per_token,
        h.recon_per_token,
        h.median_kl()
    );
    Ok(())
}
