use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use super::corpus::{Corpus, Pair};
use super::vocab::{EOS, FIRST_CONTENT_ID};
use crate::error::{Error, Result};
use crate::numcore::{Rng, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Task {
    Copy,
    Reverse,
    MappedBimodal,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Copy => "copy",
            Task::Reverse => "reverse",
            Task::MappedBimodal => "mapped_bimodal",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "copy" => Ok(Task::Copy),
            "reverse" => Ok(Task::Reverse),
            "mapped_bimodal" => Ok(Task::MappedBimodal),
            other => Err(Error::Config(format!("unknown task {other:?}"))),
        }
    }
}

/// Deterministic source-to-target maps. Mode `i` of `mapped_bimodal` uses
/// `MODE_TRANSFORMS[i]`. Shift comes before reversal so that two modes
/// differ in their bag of tokens, which a mean-pooled target can see.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Transform {
    Identity,
    Reversal,
    /// Each content token moves to the next id, wrapping inside the content
    /// range.
    Shift,
}

pub const MODE_TRANSFORMS: [Transform; 3] = [Transform::Identity, Transform::Shift, Transform::Reversal];

impl Transform {
    /// Apply to content tokens (no EOS) and append EOS.
    pub fn apply(self, tokens: &[usize], vocab_size: usize) -> Vec<usize> {
        let content = vocab_size - FIRST_CONTENT_ID;
        let mut out: Vec<usize> = match self {
            Transform::Identity => tokens.to_vec(),
            Transform::Reversal => tokens.iter().rev().copied().collect(),
            Transform::Shift => tokens
                .iter()
                .map(|&t| FIRST_CONTENT_ID + (t - FIRST_CONTENT_ID + 1) % content)
                .collect(),
        };
        out.push(EOS);
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskSpec {
    pub task: Task,
    pub min_len: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub modes: usize,
    pub mode_probs: Vec<f64>,
    /// Times each distinct source occurs, so per-source target
    /// distributions can be measured.
    pub repeats: usize,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            task: Task::MappedBimodal,
            min_len: 3,
            max_len: 6,
            vocab_size: 16,
            modes: 2,
            mode_probs: vec![0.5, 0.5],
            repeats: 16,
        }
    }
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.min_len == 0 || self.min_len > self.max_len {
            return fail(format!("length range {}..={} is empty", self.min_len, self.max_len));
        }
        if self.vocab_size < FIRST_CONTENT_ID + 2 {
            return fail(format!("vocab_size {} leaves fewer than two content tokens", self.vocab_size));
        }
        if self.modes == 0 || self.mode_probs.len() != self.modes {
            return fail(format!("{} mode probabilities for {} modes", self.mode_probs.len(), self.modes));
        }
        if self.mode_probs.iter().any(|&p| !(0.0..=1.0).contains(&p))
            || (self.mode_probs.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return fail(format!("mode_probs {:?} is not a distribution", self.mode_probs));
        }
        match self.task {
            Task::Copy | Task::Reverse if self.modes != 1 => {
                fail(format!("task {} is deterministic; modes must be 1", self.task))
            }
            Task::MappedBimodal if self.modes > MODE_TRANSFORMS.len() => {
                fail(format!("at most {} modes are defined", MODE_TRANSFORMS.len()))
            }
            _ if self.repeats == 0 => fail("repeats must be at least 1".into()),
            _ => Ok(()),
        }
    }

    /// Transform used by mode `i`.
    pub fn transform(&self, mode: usize) -> Transform {
        match self.task {
            Task::Copy => Transform::Identity,
            Task::Reverse => Transform::Reversal,
            Task::MappedBimodal => MODE_TRANSFORMS[mode],
        }
    }

    /// Mode whose transform maps `pair.src` to `pair.tgt`, if any.
    pub fn identify_mode(&self, pair: &Pair) -> Option<usize> {
        let content = &pair.src[..pair.src.len().saturating_sub(1)];
        (0..self.modes).find(|&m| self.transform(m).apply(content, self.vocab_size) == pair.tgt)
    }

    /// `H(mode_probs)` in nats.
    pub fn mode_entropy(&self) -> f64 {
        entropy(self.mode_probs.iter().copied())
    }
}

fn entropy(probs: impl Iterator<Item = f64>) -> f64 {
    probs.filter(|&p| p > 0.0).map(|p| p * p.recip().ln()).sum()
}

fn draw_mode(probs: &[f64], rng: &mut Rng) -> usize {
    let u = rng.uniform();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// `n` pairs for task `t`, a pure function of its arguments. Distinct sources
/// are drawn so that every active mode gives a different target; each is
/// used `repeats` times with an independent mode draw, then pairs are
/// shuffled.
pub fn generate_corpus(t: &TaskSpec, n: usize, seed: u64) -> Result<Corpus> {
    t.validate()?;
    if n == 0 {
        return Err(Error::Config("corpus size must be at least 1".into()));
    }
    let mut rng = Rng::new(seed, Stream::Data);
    let active: Vec<usize> = (0..t.modes).filter(|&m| t.mode_probs[m] > 0.0).collect();
    let mut pairs = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while pairs.len() < n {
        attempts += 1;
        if attempts > 1000 * n + 10_000 {
            return Err(Error::Config("could not draw sources with distinguishable modes".into()));
        }
        let len = t.min_len + rng.below(t.max_len - t.min_len + 1);
        let content: Vec<usize> = (0..len)
            .map(|_| FIRST_CONTENT_ID + rng.below(t.vocab_size - FIRST_CONTENT_ID))
            .collect();
        let targets: Vec<Vec<usize>> = active
            .iter()
            .map(|&m| t.transform(m).apply(&content, t.vocab_size))
            .collect();
        if (1..targets.len()).any(|i| targets[..i].contains(&targets[i])) {
            continue;
        }
        let mut src = content;
        src.push(EOS);
        for _ in 0..t.repeats.min(n - pairs.len()) {
            let mode = draw_mode(&t.mode_probs, &mut rng);
            pairs.push(Pair {
                src: src.clone(),
                tgt: t.transform(mode).apply(&src[..src.len() - 1], t.vocab_size),
            });
        }
    }
    rng.shuffle(&mut pairs);
    let mut corpus = Corpus::new(pairs);
    corpus.set_meta("generator", t.task.to_string());
    corpus.set_meta("seed", seed.to_string());
    corpus.set_meta("modes", t.modes.to_string());
    corpus.set_meta("vocab_size", t.vocab_size.to_string());
    Ok(corpus)
}

/// Mean over pairs of the entropy (nats) of the empirical target
/// distribution of that pair's source.
pub fn conditional_target_entropy(corpus: &Corpus) -> f64 {
    let mut groups: HashMap<&[usize], HashMap<&[usize], usize>> = HashMap::new();
    for p in &corpus.pairs {
        *groups.entry(&p.src).or_default().entry(&p.tgt).or_default() += 1;
    }
    let total = corpus.pairs.len().max(1) as f64;
    groups
        .values()
        .map(|targets| {
            let count: usize = targets.values().sum();
            let h = entropy(targets.values().map(|&c| c as f64 / count as f64));
            h * count as f64 / total
        })
        .sum()
}
