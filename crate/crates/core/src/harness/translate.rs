use std::collections::HashMap;

use super::config::RunConfig;
use crate::datasim::{Corpus, Pair, EOS};
use crate::error::Result;
use crate::latentnmt::{beam_search_batch, Hypothesis, LatentNmt};

const CHUNK: usize = 64;

/// Decode every source, running each distinct source once.
pub fn translate_sources(
    model: &LatentNmt,
    cfg: &RunConfig,
    srcs: &[Vec<usize>],
    beam: usize,
) -> Result<Vec<Hypothesis>> {
    let p = model.bind(false);
    let mut index: HashMap<&[usize], usize> = HashMap::new();
    let mut unique: Vec<Vec<usize>> = Vec::new();
    for s in srcs {
        index.entry(s.as_slice()).or_insert_with(|| {
            unique.push(s.clone());
            unique.len() - 1
        });
    }
    let mut order: Vec<usize> = (0..unique.len()).collect();
    order.sort_by_key(|&i| unique[i].len());
    let mut hyps: Vec<Option<Hypothesis>> = vec![None; unique.len()];
    for chunk in order.chunks(CHUNK) {
        let batch: Vec<Vec<usize>> = chunk.iter().map(|&i| unique[i].clone()).collect();
        let longest = batch.iter().map(Vec::len).max().unwrap_or(1);
        let out = beam_search_batch(model, &p, &batch, beam, cfg.decode_limit(longest))?;
        for (&i, h) in chunk.iter().zip(out) {
            hyps[i] = Some(h);
        }
    }
    Ok(srcs
        .iter()
        .map(|s| hyps[index[s.as_slice()]].clone().expect("decoded"))
        .collect())
}

/// Hypotheses for every source of `input`, written as `source<TAB>output`.
/// Length-capped outputs get a closing EOS and are counted in the
/// `truncated` metadata entry. Empty input gives an empty corpus.
pub fn translate_corpus(model: &LatentNmt, cfg: &RunConfig, input: &Corpus, beam: usize) -> Result<Corpus> {
    let hyps = translate_sources(model, cfg, &input.sources(), beam)?;
    let mut truncated = 0;
    let pairs = input
        .pairs
        .iter()
        .zip(hyps)
        .map(|(pair, h)| {
            let mut tgt = h.tokens;
            if h.truncated {
                truncated += 1;
                tgt.push(EOS);
            }
            Pair {
                src: pair.src.clone(),
                tgt,
            }
        })
        .collect();
    let mut out = Corpus::new(pairs);
    if !out.is_empty() {
        out.set_meta("beam", beam.to_string());
        out.set_meta("truncated", truncated.to_string());
    }
    Ok(out)
}
