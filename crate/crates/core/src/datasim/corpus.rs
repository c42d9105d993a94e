use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::vocab::{EOS, PAD};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Pair {
    pub src: Vec<usize>,
    pub tgt: Vec<usize>,
}

/// Sentence pairs plus free-form `key=value` metadata.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Corpus {
    pub pairs: Vec<Pair>,
    pub meta: BTreeMap<String, String>,
}

impl Corpus {
    pub fn new(pairs: Vec<Pair>) -> Self {
        Self {
            pairs,
            meta: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn set_meta(&mut self, key: &str, value: impl Into<String>) {
        self.meta.insert(key.to_string(), value.into());
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.get(key).map(String::as_str)
    }

    pub fn sources(&self) -> Vec<Vec<usize>> {
        self.pairs.iter().map(|p| p.src.clone()).collect()
    }

    pub fn targets(&self) -> Vec<Vec<usize>> {
        self.pairs.iter().map(|p| p.tgt.clone()).collect()
    }

    /// Every sequence ends with EOS and holds no PAD.
    pub fn check(&self) -> Result<()> {
        for (i, p) in self.pairs.iter().enumerate() {
            check_sequence(&p.src).and(check_sequence(&p.tgt)).map_err(|msg| Error::Parse {
                path: "<memory>".into(),
                line: i + 1,
                msg,
            })?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.meta {
            let _ = writeln!(out, "# {k}={v}");
        }
        for p in &self.pairs {
            let _ = writeln!(out, "{}\t{}", join(&p.src), join(&p.tgt));
        }
        out
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let mut corpus = Corpus::default();
        for (i, line) in text.lines().enumerate() {
            let fail = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg,
            };
            if let Some(meta) = line.strip_prefix('#') {
                let (k, v) = meta
                    .trim_start()
                    .split_once('=')
                    .ok_or_else(|| fail(format!("metadata line without '=': {line:?}")))?;
                corpus.meta.insert(k.to_string(), v.to_string());
                continue;
            }
            let (src, tgt) = line
                .split_once('\t')
                .ok_or_else(|| fail("expected source and target separated by a tab".into()))?;
            let src = parse_ids(src).map_err(fail)?;
            let tgt = parse_ids(tgt).map_err(fail)?;
            check_sequence(&src).and(check_sequence(&tgt)).map_err(fail)?;
            corpus.pairs.push(Pair { src, tgt });
        }
        Ok(corpus)
    }
}

fn join(ids: &[usize]) -> String {
    ids.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
}

fn parse_ids(field: &str) -> std::result::Result<Vec<usize>, String> {
    field
        .split(' ')
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<usize>().map_err(|_| format!("token id {t:?} is not a non-negative integer")))
        .collect()
}

fn check_sequence(ids: &[usize]) -> std::result::Result<(), String> {
    if ids.last() != Some(&EOS) {
        return Err("sequence does not end with EOS".into());
    }
    if ids.contains(&PAD) {
        return Err("sequence contains PAD".into());
    }
    Ok(())
}

pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, corpus.to_text())?;
    Ok(())
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    Corpus::from_text(&fs::read_to_string(path)?, path)
}
