//! Flat `key=value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key is
//! optional; unknown or repeated keys are errors. `vocab_size` is shared by
//! the model and the task.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::datasim::TaskSpec;
use crate::error::{Error, Result};
use crate::latentnmt::ModelConfig;
use crate::objective::TrainSchedule;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub schedule: TrainSchedule,
    pub task: TaskSpec,
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub train_size: usize,
    pub dev_size: usize,
    pub eval_every: usize,
    /// Posterior samples per sentence for held-out ELBO and KL.
    pub eval_samples: usize,
    /// Beam width for dev decoding.
    pub eval_beam: usize,
    /// Corpus files used instead of generated data when set.
    pub train_corpus: Option<PathBuf>,
    pub dev_corpus: Option<PathBuf>,
    /// Where metrics and checkpoints go; nothing is written when unset.
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            schedule: TrainSchedule::default(),
            task: TaskSpec {
                vocab_size: ModelConfig::default().vocab_size,
                ..TaskSpec::default()
            },
            learning_rate: 1e-3,
            steps: 4000,
            batch_size: 32,
            seed: 1,
            train_size: 5000,
            dev_size: 500,
            eval_every: 200,
            eval_samples: 4,
            eval_beam: 1,
            train_corpus: None,
            dev_corpus: None,
            out_dir: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn path_or_none(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.schedule.validate()?;
        self.task.validate()?;
        if self.model.vocab_size != self.task.vocab_size {
            return Err(Error::Config("model and task vocabularies differ".into()));
        }
        if self.batch_size == 0 || self.eval_every == 0 || self.eval_beam == 0 {
            return Err(Error::Config("batch_size, eval_every and eval_beam must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning_rate {} must be positive", self.learning_rate)));
        }
        Ok(())
    }

    /// Apply one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value;
        match key {
            "vocab_size" => {
                self.model.vocab_size = parse(key, v)?;
                self.task.vocab_size = self.model.vocab_size;
            }
            "d_model" => self.model.d_model = parse(key, v)?,
            "n_heads" => self.model.n_heads = parse(key, v)?,
            "n_layers_enc" => self.model.n_layers_enc = parse(key, v)?,
            "n_layers_dec" => self.model.n_layers_dec = parse(key, v)?,
            "d_ffn" => self.model.d_ffn = parse(key, v)?,
            "latent" => self.model.latent = v.parse()?,
            "latent_dim" => self.model.latent_dim = parse(key, v)?,
            "flow_kind" => self.model.flow_kind = v.parse()?,
            "n_flows" => self.model.n_flows = parse(key, v)?,
            "ortho_columns" => self.model.ortho_columns = parse(key, v)?,
            "conditioning" => self.model.conditioning = v.parse()?,
            "beta" => self.schedule.beta = parse(key, v)?,
            "kl_target" => self.schedule.c = parse(key, v)?,
            "anneal_steps" => self.schedule.anneal_steps = parse(key, v)?,
            "word_dropout" => self.schedule.word_dropout = parse(key, v)?,
            "kl_samples" => self.schedule.samples = parse(key, v)?,
            "task" => self.task.task = v.parse()?,
            "min_len" => self.task.min_len = parse(key, v)?,
            "max_len" => self.task.max_len = parse(key, v)?,
            "modes" => self.task.modes = parse(key, v)?,
            "mode_probs" => {
                self.task.mode_probs = v
                    .split(',')
                    .map(|x| parse(key, x.trim()))
                    .collect::<Result<_>>()?
            }
            "repeats" => self.task.repeats = parse(key, v)?,
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "steps" => self.steps = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "train_size" => self.train_size = parse(key, v)?,
            "dev_size" => self.dev_size = parse(key, v)?,
            "eval_every" => self.eval_every = parse(key, v)?,
            "eval_samples" => self.eval_samples = parse(key, v)?,
            "eval_beam" => self.eval_beam = parse(key, v)?,
            "train_corpus" => self.train_corpus = path_or_none(v),
            "dev_corpus" => self.dev_corpus = path_or_none(v),
            "out_dir" => self.out_dir = path_or_none(v),
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Defaults overridden by the settings in `text`.
    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fail = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| fail(format!("expected key=value, got {line:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) {
                return Err(fail(format!("key {k:?} given twice")));
            }
            cfg.set(k, v).map_err(|e| fail(e.to_string()))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_text(&std::fs::read_to_string(path)?, path)
    }

    /// Every key, in a fixed order; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let s = &self.schedule;
        let t = &self.task;
        let probs: Vec<String> = t.mode_probs.iter().map(f64::to_string).collect();
        let entries: Vec<(&str, String)> = vec![
            ("vocab_size", m.vocab_size.to_string()),
            ("d_model", m.d_model.to_string()),
            ("n_heads", m.n_heads.to_string()),
            ("n_layers_enc", m.n_layers_enc.to_string()),
            ("n_layers_dec", m.n_layers_dec.to_string()),
            ("d_ffn", m.d_ffn.to_string()),
            ("latent", m.latent.to_string()),
            ("latent_dim", m.latent_dim.to_string()),
            ("flow_kind", m.flow_kind.to_string()),
            ("n_flows", m.n_flows.to_string()),
            ("ortho_columns", m.ortho_columns.to_string()),
            ("conditioning", m.conditioning.to_string()),
            ("beta", s.beta.to_string()),
            ("kl_target", s.c.to_string()),
            ("anneal_steps", s.anneal_steps.to_string()),
            ("word_dropout", s.word_dropout.to_string()),
            ("kl_samples", s.samples.to_string()),
            ("task", t.task.to_string()),
            ("min_len", t.min_len.to_string()),
            ("max_len", t.max_len.to_string()),
            ("modes", t.modes.to_string()),
            ("mode_probs", probs.join(",")),
            ("repeats", t.repeats.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("steps", self.steps.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("seed", self.seed.to_string()),
            ("train_size", self.train_size.to_string()),
            ("dev_size", self.dev_size.to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("eval_samples", self.eval_samples.to_string()),
            ("eval_beam", self.eval_beam.to_string()),
            ("train_corpus", show_path(&self.train_corpus)),
            ("dev_corpus", show_path(&self.dev_corpus)),
            ("out_dir", show_path(&self.out_dir)),
        ];
        let mut out = String::new();
        for (k, v) in entries {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    /// Upper bound on generated length when decoding a source of `src_len`
    /// tokens (EOS included).
    pub fn decode_limit(&self, src_len: usize) -> usize {
        2 * src_len.max(self.task.max_len + 1) + 2
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.set("mode_probs", "0.3,0.7").unwrap();
        cfg.set("learning_rate", "0.0031").unwrap();
        cfg.set("out_dir", "runs/a").unwrap();
        let back = RunConfig::from_text(&cfg.to_text(), Path::new("x")).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_fail() {
        let err = RunConfig::from_text("d_model=32\nn_head=2\n", Path::new("c.txt")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn repeated_keys_fail() {
        assert!(RunConfig::from_text("steps=1\nsteps=2\n", Path::new("c")).is_err());
    }

    #[test]
    fn odd_latent_with_coupling_fails_at_build() {
        let text = "flow_kind=coupling\nlatent_dim=7\n";
        assert!(matches!(RunConfig::from_text(text, Path::new("c")), Err(Error::Config(_))));
    }

    #[test]
    fn comments_and_blanks_are_skipped() {
        let cfg = RunConfig::from_text("# tiny\n\nd_model = 32\n", Path::new("c")).unwrap();
        assert_eq!(cfg.model.d_model, 32);
    }
}
