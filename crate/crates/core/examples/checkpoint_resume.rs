//! Interrupt a run, save a checkpoint, resume, and compare with an
//! uninterrupted run.

use flownmt::harness::{Checkpoint, RunConfig, Trainer};

fn config(steps: usize) -> RunConfig {
    let mut cfg = RunConfig::default();
    for (k, v) in [("d_model", "16"), ("d_ffn", "32"), ("train_size", "200"), ("dev_size", "20"), ("eval_every", "10")] {
        cfg.set(k, v).unwrap();
    }
    cfg.steps = steps;
    cfg
}

fn main() -> flownmt::Result<()> {
    let mut whole = Trainer::new(config(20))?;
    whole.run()?;

    let mut first = Trainer::new(config(10))?;
    first.run()?;
    let path = std::env::temp_dir().join("flownmt-example.ckpt");
    first.checkpoint().save(&path)?;
    let mut ckpt = Checkpoint::load(&path)?;
    ckpt.config.steps = 20;
    let mut resumed = Trainer::resume(ckpt, first.train.clone(), first.dev.clone())?;
    resumed.run()?;

    println!("checkpoint size {} bytes", std::fs::metadata(&path)?.len());
    println!("resumed parameters identical: {}", resumed.model.params == whole.model.params);
    Ok(())
}
