//! Run a short flow-count sweep and print the table.

use flownmt::harness::{sweep, RunConfig, SweepDim};

fn main() -> flownmt::Result<()> {
    let mut cfg = RunConfig::default();
    for (k, v) in [
        ("vocab_size", "16"),
        ("d_model", "16"),
        ("n_layers_enc", "1"),
        ("n_layers_dec", "1"),
        ("d_ffn", "32"),
        ("latent_dim", "8"),
        ("train_size", "2000"),
        ("dev_size", "50"),
        ("steps", "300"),
        ("eval_every", "300"),
        ("anneal_steps", "150"),
        ("learning_rate", "0.003"),
    ] {
        cfg.set(k, v)?;
    }
    let dim = SweepDim::FlowCount;
    let table = sweep(dim, &[0.0, 1.0, 2.0], &cfg)?;
    print!("{}", table.render());
    print!("{}", table.to_csv());
    Ok(())
}
