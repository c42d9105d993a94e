//! Decode-quality metrics, the per-eval metrics record and collapse
//! monitoring.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::datasim::EOS;
use crate::error::{Error, Result};

/// Corpus-level output quality.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecodeScores {
    pub token_accuracy: f64,
    pub exact_match: f64,
    /// Geometric mean of clipped 1–4-gram precisions times a brevity
    /// penalty, on a 0–100 scale.
    pub overlap: f64,
}

fn content(seq: &[usize]) -> &[usize] {
    match seq.iter().position(|&t| t == EOS) {
        Some(i) => &seq[..i],
        None => seq,
    }
}

fn ngrams(seq: &[usize], n: usize) -> HashMap<&[usize], usize> {
    let mut counts = HashMap::new();
    if seq.len() >= n {
        for w in seq.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped matches and candidate counts for orders 1..=4.
pub fn ngram_counts(hyps: &[Vec<usize>], refs: &[Vec<usize>]) -> [(usize, usize); 4] {
    let mut out = [(0, 0); 4];
    for (h, r) in hyps.iter().zip(refs) {
        let (h, r) = (content(h), content(r));
        for (n, slot) in out.iter_mut().enumerate() {
            let hc = ngrams(h, n + 1);
            let rc = ngrams(r, n + 1);
            for (g, &c) in &hc {
                slot.0 += c.min(rc.get(g).copied().unwrap_or(0));
                slot.1 += c;
            }
        }
    }
    out
}

/// Score hypotheses against references, sentence by sentence. Sequences are
/// compared up to their first EOS. N-gram orders with no candidate n-grams
/// are left out of the geometric mean.
pub fn score(hyps: &[Vec<usize>], refs: &[Vec<usize>]) -> Result<DecodeScores> {
    if hyps.len() != refs.len() {
        return Err(Error::Eval(format!(
            "{} hypotheses for {} references",
            hyps.len(),
            refs.len()
        )));
    }
    if hyps.is_empty() {
        return Ok(DecodeScores {
            token_accuracy: 0.0,
            exact_match: 0.0,
            overlap: 0.0,
        });
    }
    let (mut hits, mut slots, mut exact) = (0usize, 0usize, 0usize);
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (h, r) in hyps.iter().zip(refs) {
        let (h, r) = (content(h), content(r));
        hits += h.iter().zip(r).filter(|(a, b)| a == b).count();
        slots += h.len().max(r.len());
        exact += usize::from(h == r);
        hyp_len += h.len();
        ref_len += r.len();
    }
    let counts = ngram_counts(hyps, refs);
    let used: Vec<(usize, usize)> = counts.iter().copied().filter(|&(_, total)| total > 0).collect();
    let overlap = if used.is_empty() || used.iter().any(|&(m, _)| m == 0) {
        0.0
    } else {
        let log_mean = used.iter().map(|&(m, t)| (m as f64 / t as f64).ln()).sum::<f64>() / used.len() as f64;
        let bp = if hyp_len >= ref_len {
            1.0
        } else {
            (1.0 - ref_len as f64 / hyp_len.max(1) as f64).exp()
        };
        100.0 * bp * log_mean.exp()
    };
    Ok(DecodeScores {
        token_accuracy: if slots == 0 { 1.0 } else { hits as f64 / slots as f64 },
        exact_match: exact as f64 / hyps.len() as f64,
        overlap,
    })
}

/// One row of `metrics.csv`. Training columns average the interval since
/// the previous record; dev columns are NaN when not applicable.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub step: usize,
    pub loss: f64,
    pub recon_nll: f64,
    /// Mean per-sentence KL estimate.
    pub kl_est: f64,
    pub beta_effective: f64,
    pub mean_gate: f64,
    pub dev_token_accuracy: f64,
    pub dev_exact_match: f64,
    pub dev_overlap: f64,
    pub dev_elbo_per_token: f64,
    pub dev_kl_median: f64,
}

pub const METRICS_HEADER: &str = "step,loss,recon_nll,kl_est,beta_effective,mean_gate,\
dev_token_accuracy,dev_exact_match,dev_overlap,dev_elbo_per_token,dev_kl_median";

impl MetricsRecord {
    pub fn csv_row(&self) -> String {
        let mut s = self.step.to_string();
        for v in [
            self.loss,
            self.recon_nll,
            self.kl_est,
            self.beta_effective,
            self.mean_gate,
            self.dev_token_accuracy,
            self.dev_exact_match,
            self.dev_overlap,
            self.dev_elbo_per_token,
            self.dev_kl_median,
        ] {
            let _ = write!(s, ",{v}");
        }
        s
    }
}

pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CollapseStatus {
    Healthy,
    Collapsed,
}

/// Per-sentence KL below which an eval counts towards collapse.
pub const COLLAPSE_KL: f64 = 0.01;
/// Consecutive low-KL evals after annealing that declare collapse.
pub const COLLAPSE_PATIENCE: usize = 10;

/// Streaming collapse detector over eval records.
#[derive(Clone, Debug)]
pub struct CollapseMonitor {
    anneal_steps: usize,
    run: usize,
    status: CollapseStatus,
}

impl CollapseMonitor {
    pub fn new(anneal_steps: usize) -> Self {
        Self {
            anneal_steps,
            run: 0,
            status: CollapseStatus::Healthy,
        }
    }

    /// Feed one eval; once collapsed the status stays collapsed.
    pub fn observe(&mut self, step: usize, kl_per_sentence: f64) -> CollapseStatus {
        if step >= self.anneal_steps {
            if kl_per_sentence < COLLAPSE_KL {
                self.run += 1;
            } else {
                self.run = 0;
            }
            if self.run >= COLLAPSE_PATIENCE {
                self.status = CollapseStatus::Collapsed;
            }
        }
        self.status
    }

    pub fn status(&self) -> CollapseStatus {
        self.status
    }

    /// Current count of consecutive low-KL evals.
    pub fn run(&self) -> usize {
        self.run
    }

    pub(crate) fn set_run(&mut self, run: usize) {
        self.run = run;
    }

    pub(crate) fn collapsed(anneal_steps: usize) -> Self {
        Self {
            anneal_steps,
            run: COLLAPSE_PATIENCE,
            status: CollapseStatus::Collapsed,
        }
    }
}

/// Collapse status of a finished metrics stream.
pub fn collapse_monitor(records: &[MetricsRecord], anneal_steps: usize) -> CollapseStatus {
    let mut m = CollapseMonitor::new(anneal_steps);
    for r in records {
        m.observe(r.step, r.kl_est);
    }
    m.status()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[usize]) -> Vec<usize> {
        let mut v = v.to_vec();
        v.push(EOS);
        v
    }

    #[test]
    fn identical_outputs_score_full_marks() {
        let refs = vec![s(&[4, 5, 6, 7]), s(&[8, 9, 10])];
        let sc = score(&refs, &refs).unwrap();
        assert_eq!(sc.exact_match, 1.0);
        assert_eq!(sc.token_accuracy, 1.0);
        assert!((sc.overlap - 100.0).abs() < 1e-9);
    }

    #[test]
    fn disjoint_outputs_score_zero() {
        let sc = score(&[s(&[4, 5, 6])], &[s(&[7, 8, 9])]).unwrap();
        assert_eq!(sc.overlap, 0.0);
        assert_eq!(sc.exact_match, 0.0);
    }

    #[test]
    fn hand_counted_case() {
        // hyp 1: 4 5 6 7 vs ref 4 5 6 8 ; hyp 2: 9 9 vs ref 9 10
        let hyps = vec![s(&[4, 5, 6, 7]), s(&[9, 9])];
        let refs = vec![s(&[4, 5, 6, 8]), s(&[9, 10])];
        let c = ngram_counts(&hyps, &refs);
        // unigrams: 3 of 4, then 9 clipped to 1 of 2 → 4/6
        assert_eq!(c[0], (4, 6));
        // bigrams: (4 5), (5 6) match of 3; (9 9) misses → 2/4
        assert_eq!(c[1], (2, 4));
        // trigrams: (4 5 6) of 2 → 1/2
        assert_eq!(c[2], (1, 2));
        // 4-grams: 0 of 1
        assert_eq!(c[3], (0, 1));
        assert_eq!(score(&hyps, &refs).unwrap().overlap, 0.0);
        let sc = score(&hyps[..1], &refs[..1]).unwrap();
        // orders 1–3: 3/4, 2/3, 1/2; the 4-gram misses → zero overall.
        assert_eq!(sc.overlap, 0.0);
        let sc = score(&[s(&[4, 5, 6])], &[s(&[4, 5, 6, 8])]).unwrap();
        // precisions 1, 1, 1; brevity penalty exp(1 - 4/3).
        assert!((sc.overlap - 100.0 * (1.0f64 - 4.0 / 3.0).exp()).abs() < 1e-9);
        assert_eq!(sc.token_accuracy, 0.75);
    }

    #[test]
    fn line_counts_must_match() {
        assert!(matches!(score(&[s(&[4])], &[]), Err(Error::Eval(_))));
    }

    fn stream(kl: &[f64]) -> Vec<MetricsRecord> {
        kl.iter()
            .enumerate()
            .map(|(i, &k)| MetricsRecord {
                step: (i + 1) * 200,
                loss: 0.0,
                recon_nll: 0.0,
                kl_est: k,
                beta_effective: 1.0,
                mean_gate: 0.5,
                dev_token_accuracy: f64::NAN,
                dev_exact_match: f64::NAN,
                dev_overlap: f64::NAN,
                dev_elbo_per_token: f64::NAN,
                dev_kl_median: f64::NAN,
            })
            .collect()
    }

    #[test]
    fn collapse_examples() {
        assert_eq!(collapse_monitor(&stream(&[0.0; 12]), 0), CollapseStatus::Collapsed);
        assert_eq!(collapse_monitor(&stream(&[0.1; 12]), 0), CollapseStatus::Healthy);
        let mut dip = vec![0.1; 5];
        dip.extend([0.001; 3]);
        dip.extend([0.1; 6]);
        assert_eq!(collapse_monitor(&stream(&dip), 0), CollapseStatus::Healthy);
        // Low KL during annealing does not count.
        assert_eq!(collapse_monitor(&stream(&[0.0; 12]), 1000), CollapseStatus::Healthy);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let text = metrics_csv(&stream(&[0.5, 0.25]));
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], METRICS_HEADER);
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("200,0,0,0.5,1,0.5,NaN"));
    }
}
