use super::{EncoderState, LatentNmt};
use crate::datasim::{BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::numcore::{Bound, Tensor};

/// A decoded output. `tokens` excludes BOS and ends with EOS unless the
/// length limit cut it short, in which case `truncated` is set.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    /// `log_prob / len(tokens)`.
    pub score: f64,
    pub truncated: bool,
}

impl Hypothesis {
    fn new(tokens: Vec<usize>, log_prob: f64, truncated: bool) -> Self {
        let score = log_prob / tokens.len().max(1) as f64;
        Self {
            tokens,
            log_prob,
            score,
            truncated,
        }
    }
}

/// Next-token log-probabilities for equal-length prefixes.
fn next_log_probs(
    model: &LatentNmt,
    p: &Bound,
    enc: &EncoderState,
    code: Option<&Tensor>,
    prefixes: &[Vec<usize>],
) -> Result<Vec<Vec<f64>>> {
    let h = model.decode(p, prefixes, enc)?;
    let (rows, t, d) = (h.shape()[0], h.shape()[1], h.shape()[2]);
    let last: Vec<usize> = (0..rows).map(|r| r * t + t - 1).collect();
    let mut h = h.reshape(&[rows * t, d])?.index_rows(&last)?;
    if let Some(z) = code {
        h = model.inject_latent(p, &h, z)?.0;
    }
    let lp = model.logits(p, &h)?.log_softmax_last();
    Ok(lp.values().chunks(model.config.vocab_size).map(<[f64]>::to_vec).collect())
}

/// Tokens that may never be generated.
fn blocked(token: usize) -> bool {
    token == PAD || token == BOS
}

fn argmax(v: &[f64]) -> usize {
    let mut best = EOS;
    for (i, &x) in v.iter().enumerate() {
        if !blocked(i) && x > v[best] {
            best = i;
        }
    }
    best
}

fn select_code(code: &Option<Tensor>, rows: &[usize]) -> Result<Option<Tensor>> {
    code.as_ref().map(|z| z.index_rows(rows)).transpose()
}

/// Greedy decoding of many sources at once.
pub fn greedy_batch(model: &LatentNmt, p: &Bound, srcs: &[Vec<usize>], max_len: usize) -> Result<Vec<Hypothesis>> {
    if srcs.is_empty() {
        return Ok(Vec::new());
    }
    let enc = model.encode(p, srcs)?;
    let code = model.prediction_code(p, srcs)?;
    let mut tokens: Vec<Vec<usize>> = vec![Vec::new(); srcs.len()];
    let mut log_prob = vec![0.0; srcs.len()];
    let mut done = vec![false; srcs.len()];
    for _ in 0..max_len {
        let active: Vec<usize> = (0..srcs.len()).filter(|&i| !done[i]).collect();
        if active.is_empty() {
            break;
        }
        let prefixes: Vec<Vec<usize>> = active
            .iter()
            .map(|&i| std::iter::once(BOS).chain(tokens[i].iter().copied()).collect())
            .collect();
        let lps = next_log_probs(model, p, &enc.select(&active)?, select_code(&code, &active)?.as_ref(), &prefixes)?;
        for (&i, lp) in active.iter().zip(&lps) {
            let tok = argmax(lp);
            tokens[i].push(tok);
            log_prob[i] += lp[tok];
            done[i] = tok == EOS;
        }
    }
    Ok(tokens
        .into_iter()
        .zip(log_prob)
        .zip(done)
        .map(|((t, lp), d)| Hypothesis::new(t, lp, !d))
        .collect())
}

struct Live {
    sentence: usize,
    tokens: Vec<usize>,
    log_prob: f64,
}

/// Length-normalised beam search over many sources at once. PAD and BOS
/// are never proposed.
///
/// Each sentence keeps `beam - finished` live prefixes, ranked by cumulative
/// log-probability; finished and length-capped hypotheses are ranked by
/// `log_prob / len`. The greedy output is always a candidate, so the
/// returned score never falls below the greedy one.
pub fn beam_search_batch(
    model: &LatentNmt,
    p: &Bound,
    srcs: &[Vec<usize>],
    beam: usize,
    max_len: usize,
) -> Result<Vec<Hypothesis>> {
    if beam == 0 {
        return Err(Error::Config("beam must be at least 1".into()));
    }
    if srcs.is_empty() {
        return Ok(Vec::new());
    }
    let greedy = greedy_batch(model, p, srcs, max_len)?;
    if beam == 1 {
        return Ok(greedy);
    }
    let enc = model.encode(p, srcs)?;
    let code = model.prediction_code(p, srcs)?;
    let mut finished: Vec<Vec<Hypothesis>> = vec![Vec::new(); srcs.len()];
    let mut live: Vec<Live> = (0..srcs.len())
        .map(|s| Live {
            sentence: s,
            tokens: Vec::new(),
            log_prob: 0.0,
        })
        .collect();
    for _ in 0..max_len {
        if live.is_empty() {
            break;
        }
        let rows: Vec<usize> = live.iter().map(|l| l.sentence).collect();
        let prefixes: Vec<Vec<usize>> = live
            .iter()
            .map(|l| std::iter::once(BOS).chain(l.tokens.iter().copied()).collect())
            .collect();
        let lps = next_log_probs(model, p, &enc.select(&rows)?, select_code(&code, &rows)?.as_ref(), &prefixes)?;
        let mut next = Vec::new();
        let mut start = 0;
        while start < live.len() {
            let s = live[start].sentence;
            let end = start + live[start..].iter().take_while(|l| l.sentence == s).count();
            let mut cands: Vec<(f64, usize, usize)> = (start..end)
                .flat_map(|i| lps[i].iter().enumerate().map(move |(v, &lp)| (lp, i, v)))
                .filter(|&(_, _, v)| !blocked(v))
                .map(|(lp, i, v)| (live[i].log_prob + lp, i, v))
                .collect();
            cands.sort_by(|a, b| b.0.total_cmp(&a.0));
            let width = beam - finished[s].len();
            for &(total, i, v) in cands.iter().take(width) {
                let mut tokens = live[i].tokens.clone();
                tokens.push(v);
                if v == EOS {
                    finished[s].push(Hypothesis::new(tokens, total, false));
                } else {
                    next.push(Live {
                        sentence: s,
                        tokens,
                        log_prob: total,
                    });
                }
            }
            start = end;
        }
        live = next;
    }
    for l in live {
        finished[l.sentence].push(Hypothesis::new(l.tokens, l.log_prob, true));
    }
    Ok(finished
        .into_iter()
        .zip(greedy)
        .map(|(hyps, g)| {
            hyps.into_iter()
                .fold(g, |best, h| if h.score > best.score { h } else { best })
        })
        .collect())
}

/// Beam search for one source sentence.
pub fn beam_search(model: &LatentNmt, p: &Bound, src: &[usize], beam: usize, max_len: usize) -> Result<Hypothesis> {
    Ok(beam_search_batch(model, p, &[src.to_vec()], beam, max_len)?.remove(0))
}
