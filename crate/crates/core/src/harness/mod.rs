//! Configuration, training loop, checkpoints, metrics and sweeps.

mod checkpoint;
mod config;
mod metrics;
mod optim;
mod sweep;
mod train;
mod translate;

pub use checkpoint::{Checkpoint, IntervalStats, CHECKPOINT_VERSION};
pub use config::RunConfig;
pub use metrics::{
    collapse_monitor, metrics_csv, ngram_counts, score, CollapseMonitor, CollapseStatus, DecodeScores,
    MetricsRecord, COLLAPSE_KL, COLLAPSE_PATIENCE, METRICS_HEADER,
};
pub use optim::{Adam, CLIP_NORM};
pub use sweep::{sweep, sweep_with, RunSummary, SweepDim, SweepTable, FLOW_COLUMNS};
pub use train::{corpora_for, load_model, train_run, TrainReport, Trainer, DEV_SEED_OFFSET};
pub use translate::{translate_corpus, translate_sources};
