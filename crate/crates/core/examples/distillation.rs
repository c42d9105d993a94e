//! Train a teacher on two-mode data, relabel the sources with its beam
//! outputs and compare per-source target entropy.

use flownmt::datasim::{augment, conditional_target_entropy, distill};
use flownmt::harness::{RunConfig, Trainer};

fn main() -> flownmt::Result<()> {
    let mut cfg = RunConfig::default();
    for (k, v) in [
        ("vocab_size", "16"),
        ("d_model", "32"),
        ("n_layers_enc", "1"),
        ("n_layers_dec", "1"),
        ("d_ffn", "64"),
        ("latent", "off"),
        ("train_size", "2000"),
        ("dev_size", "100"),
        ("steps", "600"),
        ("eval_every", "300"),
        ("learning_rate", "0.002"),
    ] {
        cfg.set(k, v)?;
    }
    let mut teacher = Trainer::new(cfg)?;
    teacher.run()?;
    let model = teacher.best_model()?;
    let limit = teacher.cfg.decode_limit(teacher.cfg.task.max_len + 1);
    let out = distill(&model, &teacher.train, 5, limit)?;
    let merged = augment(&teacher.train, &out.corpus);
    println!(
        "target entropy: original {:.4}, distilled {:.4}, augmented {:.4} nats ({} skipped)",
        conditional_target_entropy(&teacher.train),
        conditional_target_entropy(&out.corpus),
        conditional_target_entropy(&merged),
        out.skipped
    );
    Ok(())
}
