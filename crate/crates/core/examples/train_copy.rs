//! Train a plain Transformer on the copy task and decode a few strings.

use flownmt::datasim::generate_corpus;
use flownmt::harness::{translate_sources, RunConfig, Trainer};

fn main() -> flownmt::Result<()> {
    let mut cfg = RunConfig::default();
    for (k, v) in [
        ("vocab_size", "16"),
        ("d_model", "32"),
        ("n_layers_enc", "1"),
        ("n_layers_dec", "1"),
        ("d_ffn", "64"),
        ("latent", "off"),
        ("task", "copy"),
        ("modes", "1"),
        ("mode_probs", "1"),
        ("train_size", "1000"),
        ("dev_size", "100"),
        ("steps", "1000"),
        ("eval_every", "200"),
        ("learning_rate", "0.003"),
    ] {
        cfg.set(k, v)?;
    }
    let mut trainer = Trainer::new(cfg)?;
    let report = trainer.run()?;
    for r in &report.records {
        println!("step {:>4}  loss {:.4}  dev token accuracy {:.3}", r.step, r.loss, r.dev_token_accuracy);
    }
    let model = trainer.best_model()?;
    let mut task = trainer.cfg.task.clone();
    task.repeats = 1;
    let test = generate_corpus(&task, 5, 99)?;
    for (src, hyp) in test.sources().iter().zip(translate_sources(&model, &trainer.cfg, &test.sources(), 3)?) {
        println!("{src:?} -> {:?}", hyp.tokens);
    }
    Ok(())
}
