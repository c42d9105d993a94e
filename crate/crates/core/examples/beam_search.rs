//! Compare greedy and beam decoding scores on an untrained model.

use flownmt::latentnmt::{beam_search_batch, greedy_batch, LatentMode, LatentNmt, ModelConfig};

fn main() -> flownmt::Result<()> {
    let cfg = ModelConfig {
        vocab_size: 12,
        d_model: 16,
        latent: LatentMode::Static,
        ..ModelConfig::default()
    };
    let model = LatentNmt::new(cfg, 4)?;
    let p = model.bind(false);
    let srcs = vec![vec![4, 5, 6, 2], vec![7, 8, 2], vec![9, 10, 11, 4, 2]];
    let greedy = greedy_batch(&model, &p, &srcs, 8)?;
    let beam = beam_search_batch(&model, &p, &srcs, 5, 8)?;
    for (g, b) in greedy.iter().zip(&beam) {
        println!(
            "greedy {:?} score {:.3} | beam {:?} score {:.3}{}",
            g.tokens,
            g.score,
            b.tokens,
            b.score,
            if b.truncated { " (truncated)" } else { "" }
        );
    }
    Ok(())
}
