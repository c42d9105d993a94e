use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::Path;

use super::checkpoint::{Checkpoint, IntervalStats};
use super::config::RunConfig;
use super::metrics::{score, CollapseMonitor, CollapseStatus, MetricsRecord, METRICS_HEADER};
use super::optim::Adam;
use super::translate::translate_sources;
use crate::datasim::{generate_corpus, load_corpus, save_corpus, Corpus, Pair};
use crate::error::{Error, Result};
use crate::latentnmt::{Conditioning, LatentMode, LatentNmt};
use crate::numcore::{ParamStore, Rng, Stream};
use crate::objective::{elbo_loss, held_out_elbo};

/// Offset separating dev data seeds from training data seeds.
pub const DEV_SEED_OFFSET: u64 = 1_000_003;
/// Step offset of evaluation sampling streams.
const EVAL_STREAM_OFFSET: u64 = 1 << 40;
const EVAL_BATCH: usize = 64;

/// Training and dev corpora named by `cfg`: loaded from files when given,
/// generated from the task otherwise.
pub fn corpora_for(cfg: &RunConfig) -> Result<(Corpus, Corpus)> {
    let train = match &cfg.train_corpus {
        Some(p) => load_corpus(p)?,
        None => generate_corpus(&cfg.task, cfg.train_size, cfg.seed)?,
    };
    let dev = match &cfg.dev_corpus {
        Some(p) => load_corpus(p)?,
        None => generate_corpus(&cfg.task, cfg.dev_size, cfg.seed.wrapping_add(DEV_SEED_OFFSET))?,
    };
    Ok((train, dev))
}

/// Outcome of a finished run.
#[derive(Clone, Debug)]
pub struct TrainReport {
    pub records: Vec<MetricsRecord>,
    pub best_step: Option<usize>,
    pub status: CollapseStatus,
}

impl TrainReport {
    pub fn last(&self) -> Option<&MetricsRecord> {
        self.records.last()
    }

    pub fn best(&self) -> Option<&MetricsRecord> {
        let step = self.best_step?;
        self.records.iter().find(|r| r.step == step)
    }
}

pub struct Trainer {
    pub cfg: RunConfig,
    pub model: LatentNmt,
    pub adam: Adam,
    pub step: usize,
    pub train: Corpus,
    pub dev: Corpus,
    pub records: Vec<MetricsRecord>,
    /// Parameters at the best dev evaluation so far.
    pub best_params: Option<ParamStore>,
    interval: IntervalStats,
    best: Option<(f64, usize)>,
    monitor: CollapseMonitor,
}

impl Trainer {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        let (train, dev) = corpora_for(&cfg)?;
        Self::with_data(cfg, train, dev)
    }

    pub fn with_data(cfg: RunConfig, train: Corpus, dev: Corpus) -> Result<Self> {
        cfg.validate()?;
        if train.is_empty() {
            return Err(Error::Config("training corpus is empty".into()));
        }
        let model = LatentNmt::new(cfg.model.clone(), cfg.seed)?;
        let adam = Adam::new(&model.params, cfg.learning_rate);
        let monitor = CollapseMonitor::new(cfg.schedule.anneal_steps);
        Ok(Self {
            cfg,
            model,
            adam,
            step: 0,
            train,
            dev,
            records: Vec::new(),
            best_params: None,
            interval: IntervalStats::default(),
            best: None,
            monitor,
        })
    }

    /// Continue from `ckpt`; the corpora must be the ones the run used.
    pub fn resume(ckpt: Checkpoint, train: Corpus, dev: Corpus) -> Result<Self> {
        let mut t = Self::with_data(ckpt.config.clone(), train, dev)?;
        t.model = LatentNmt::from_params(ckpt.config.model.clone(), ckpt.params)?;
        t.adam = ckpt.adam;
        t.step = ckpt.step;
        t.interval = ckpt.interval;
        t.best = ckpt.best;
        if ckpt.collapsed {
            t.monitor = CollapseMonitor::collapsed(t.cfg.schedule.anneal_steps);
        } else {
            t.monitor.set_run(ckpt.collapse_run);
        }
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.cfg.clone(),
            step: self.step,
            params: self.model.params.clone(),
            adam: self.adam.clone(),
            interval: self.interval.clone(),
            best: self.best,
            collapse_run: self.monitor.run(),
            collapsed: self.monitor.status() == CollapseStatus::Collapsed,
        }
    }

    fn batch(&self) -> Vec<Pair> {
        let mut rng = Rng::for_step(self.cfg.seed, Stream::Batching, self.step as u64);
        (0..self.cfg.batch_size)
            .map(|_| self.train.pairs[rng.below(self.train.len())].clone())
            .collect()
    }

    /// One optimiser update.
    pub fn train_step(&mut self) -> Result<()> {
        let batch = self.batch();
        let step = self.step as u64;
        let mut sampling = Rng::for_step(self.cfg.seed, Stream::Sampling, step);
        let mut dropout = Rng::for_step(self.cfg.seed, Stream::Dropout, step);
        let p = self.model.bind(true);
        let terms = elbo_loss(&self.model, &p, &batch, &self.cfg.schedule, self.step, &mut sampling, &mut dropout)
            .map_err(|e| self.dump_batch(&batch, e))?;
        let grads = p.gradients(&terms.loss.backward()?);
        if grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(self.dump_batch(&batch, Error::NonFinite(format!("gradient at step {}", self.step))));
        }
        self.adam.step(&mut self.model.params, &grads);
        let s = &mut self.interval;
        s.count += 1;
        s.loss += terms.loss.item();
        s.recon_nll += terms.recon_nll;
        s.kl_est += terms.kl_est;
        s.beta_effective += terms.beta_effective;
        s.mean_gate += terms.mean_gate;
        self.step += 1;
        Ok(())
    }

    fn dump_batch(&self, batch: &[Pair], err: Error) -> Error {
        if !matches!(err, Error::NonFinite(_)) {
            return err;
        }
        let text = Corpus::new(batch.to_vec()).to_text();
        if let Some(dir) = &self.cfg.out_dir {
            let path = dir.join(format!("nonfinite_step{}.tsv", self.step));
            if fs::create_dir_all(dir).and_then(|_| fs::write(&path, &text)).is_ok() {
                return Error::NonFinite(format!("{err}; offending batch written to {}", path.display()));
            }
        }
        Error::NonFinite(format!("{err}; offending batch:\n{text}"))
    }

    fn can_decode(&self) -> bool {
        !(self.cfg.model.latent == LatentMode::Variational
            && self.cfg.model.conditioning == Conditioning::SourceAndTarget)
    }

    /// Dev evaluation and a metrics record for the interval just finished.
    pub fn evaluate(&mut self) -> Result<MetricsRecord> {
        let p = self.model.bind(false);
        let mut rng = Rng::for_step(self.cfg.seed, Stream::Sampling, EVAL_STREAM_OFFSET + self.step as u64);
        let (elbo, kl_median) = if self.dev.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let h = held_out_elbo(&self.model, &p, &self.dev.pairs, self.cfg.eval_samples, EVAL_BATCH, &mut rng)?;
            (h.elbo_per_token, h.median_kl())
        };
        let decoded = if self.can_decode() && !self.dev.is_empty() {
            let hyps = translate_sources(&self.model, &self.cfg, &self.dev.sources(), self.cfg.eval_beam)?;
            let tokens: Vec<Vec<usize>> = hyps.into_iter().map(|h| h.tokens).collect();
            Some(score(&tokens, &self.dev.targets())?)
        } else {
            None
        };
        let s = std::mem::take(&mut self.interval);
        let n = s.count.max(1) as f64;
        let record = MetricsRecord {
            step: self.step,
            loss: s.loss / n,
            recon_nll: s.recon_nll / n,
            kl_est: s.kl_est / n,
            beta_effective: s.beta_effective / n,
            mean_gate: s.mean_gate / n,
            dev_token_accuracy: decoded.map_or(f64::NAN, |d| d.token_accuracy),
            dev_exact_match: decoded.map_or(f64::NAN, |d| d.exact_match),
            dev_overlap: decoded.map_or(f64::NAN, |d| d.overlap),
            dev_elbo_per_token: elbo,
            dev_kl_median: kl_median,
        };
        let dev_score = match decoded {
            Some(d) => d.overlap,
            None => elbo,
        };
        if dev_score.is_finite() && self.best.is_none_or(|(b, _)| dev_score > b) {
            self.best = Some((dev_score, self.step));
            self.best_params = Some(self.model.params.clone());
        }
        if self.cfg.model.latent == LatentMode::Variational {
            self.monitor.observe(record.step, record.kl_est);
        }
        self.records.push(record.clone());
        Ok(record)
    }

    fn write_outputs(&self, record: &MetricsRecord, improved: bool) -> Result<()> {
        let Some(dir) = &self.cfg.out_dir else {
            return Ok(());
        };
        let mut f = OpenOptions::new().append(true).open(dir.join("metrics.csv"))?;
        writeln!(f, "{}", record.csv_row())?;
        self.checkpoint().save(dir.join("last.ckpt"))?;
        if improved {
            self.checkpoint().save(dir.join("best.ckpt"))?;
        }
        Ok(())
    }

    /// Train until `cfg.steps`, evaluating every `eval_every` steps and at
    /// the end.
    pub fn run(&mut self) -> Result<TrainReport> {
        if let Some(dir) = &self.cfg.out_dir {
            fs::create_dir_all(dir)?;
            fs::write(dir.join("config.txt"), self.cfg.to_text())?;
            let metrics = dir.join("metrics.csv");
            if self.step == 0 || !metrics.exists() {
                fs::write(&metrics, format!("{METRICS_HEADER}\n"))?;
            }
        }
        while self.step < self.cfg.steps {
            self.train_step()?;
            if self.step % self.cfg.eval_every == 0 || self.step == self.cfg.steps {
                let before = self.best;
                let record = self.evaluate()?;
                self.write_outputs(&record, self.best != before)?;
                log::info!(
                    "step {} loss {:.4} kl {:.4} dev_elbo {:.4} dev_overlap {:.2}",
                    record.step,
                    record.loss,
                    record.kl_est,
                    record.dev_elbo_per_token,
                    record.dev_overlap
                );
            }
        }
        Ok(self.report())
    }

    pub fn report(&self) -> TrainReport {
        TrainReport {
            records: self.records.clone(),
            best_step: self.best.map(|(_, s)| s),
            status: self.monitor.status(),
        }
    }

    /// Model with the best dev parameters, or the current one if no eval ran.
    pub fn best_model(&self) -> Result<LatentNmt> {
        match &self.best_params {
            Some(p) => LatentNmt::from_params(self.cfg.model.clone(), p.clone()),
            None => Ok(self.model.clone()),
        }
    }
}

/// Generate (or load) the corpora, train, and write run artefacts.
pub fn train_run(cfg: RunConfig) -> Result<(Trainer, TrainReport)> {
    let mut t = Trainer::new(cfg)?;
    if let Some(dir) = t.cfg.out_dir.clone() {
        fs::create_dir_all(&dir)?;
        save_corpus(&t.train, dir.join("train.tsv"))?;
        save_corpus(&t.dev, dir.join("dev.tsv"))?;
    }
    let report = t.run()?;
    Ok((t, report))
}

/// Read a checkpoint and rebuild its model.
pub fn load_model(path: &Path) -> Result<(RunConfig, LatentNmt)> {
    let ckpt = Checkpoint::load(path)?;
    let model = LatentNmt::from_params(ckpt.config.model.clone(), ckpt.params)?;
    Ok((ckpt.config, model))
}
