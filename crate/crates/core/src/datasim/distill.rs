use std::collections::HashMap;

use super::corpus::{Corpus, Pair};
use crate::error::Result;
use crate::latentnmt::{beam_search_batch, LatentNmt};

/// Sources decoded together.
const DECODE_CHUNK: usize = 64;

/// Distillation output and the number of sources dropped because the
/// teacher failed or hit the length limit.
#[derive(Clone, Debug)]
pub struct Distilled {
    pub corpus: Corpus,
    pub skipped: usize,
}

/// Pair every source with the teacher's beam-search output. Each distinct
/// source is decoded once.
pub fn distill(teacher: &LatentNmt, corpus: &Corpus, beam: usize, max_len: usize) -> Result<Distilled> {
    let p = teacher.bind(false);
    let mut unique: Vec<&[usize]> = Vec::new();
    let mut seen = HashMap::new();
    for pair in &corpus.pairs {
        seen.entry(pair.src.as_slice()).or_insert_with(|| {
            unique.push(&pair.src);
            unique.len() - 1
        });
    }
    let mut outputs: Vec<Option<Vec<usize>>> = Vec::with_capacity(unique.len());
    for chunk in unique.chunks(DECODE_CHUNK) {
        let srcs: Vec<Vec<usize>> = chunk.iter().map(|s| s.to_vec()).collect();
        match beam_search_batch(teacher, &p, &srcs, beam, max_len) {
            Ok(hyps) => outputs.extend(hyps.into_iter().map(|h| (!h.truncated).then_some(h.tokens))),
            Err(e) => {
                log::warn!("teacher failed on a chunk of {} sources: {e}", srcs.len());
                outputs.extend(srcs.iter().map(|_| None));
            }
        }
    }
    let mut pairs = Vec::with_capacity(corpus.len());
    let mut skipped = 0;
    for pair in &corpus.pairs {
        match &outputs[seen[pair.src.as_slice()]] {
            Some(tgt) => pairs.push(Pair {
                src: pair.src.clone(),
                tgt: tgt.clone(),
            }),
            None => skipped += 1,
        }
    }
    if skipped > 0 {
        log::warn!("distillation skipped {skipped} of {} pairs", corpus.len());
    }
    let mut out = Corpus::new(pairs);
    out.meta = corpus.meta.clone();
    out.set_meta("distilled", "true");
    out.set_meta("beam", beam.to_string());
    Ok(Distilled { corpus: out, skipped })
}

/// Original pairs followed by distilled ones.
pub fn augment(original: &Corpus, distilled: &Corpus) -> Corpus {
    let mut out = original.clone();
    out.pairs.extend(distilled.pairs.iter().cloned());
    out.set_meta("distilled", "augmented");
    out
}
