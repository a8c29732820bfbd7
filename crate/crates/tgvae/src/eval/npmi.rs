//! Normalized pointwise mutual information over document co-occurrence.
//!
//! Probabilities are document frequencies (whole document = one window);
//! `NPMI(wi, wj) = log(p(wi,wj) / (p(wi) p(wj))) / (-log p(wi,wj))` with
//! [`NPMI_EPS`] added inside every log. Scores average over unordered pairs
//! within each top-k list, then over the k values, then over topics.

use std::collections::{HashMap, HashSet};

use super::{EvalError, Result};

pub const NPMI_EPS: f64 = 1e-12;

/// Document-frequency statistics for NPMI.
pub struct CoocStats {
    doc_sets: Vec<HashSet<String>>,
    doc_freq: HashMap<String, usize>,
    n_docs: f64,
}

impl CoocStats {
    pub fn from_docs(docs: &[Vec<String>]) -> Result<Self> {
        if docs.is_empty() {
            return Err(EvalError::EmptyCorpus);
        }
        let doc_sets: Vec<HashSet<String>> =
            docs.iter().map(|d| d.iter().cloned().collect()).collect();
        let mut doc_freq = HashMap::new();
        for set in &doc_sets {
            for w in set {
                *doc_freq.entry(w.clone()).or_insert(0) += 1;
            }
        }
        Ok(CoocStats { doc_freq, n_docs: docs.len() as f64, doc_sets })
    }

    fn p(&self, w: &str) -> f64 {
        self.doc_freq.get(w).copied().unwrap_or(0) as f64 / self.n_docs
    }

    fn p_joint(&self, a: &str, b: &str) -> f64 {
        let both = self.doc_sets.iter().filter(|s| s.contains(a) && s.contains(b)).count();
        both as f64 / self.n_docs
    }

    /// NPMI of one word pair; words absent from the corpus behave as p = eps.
    pub fn npmi(&self, a: &str, b: &str) -> f64 {
        let pj = self.p_joint(a, b);
        let pa = self.p(a);
        let pb = self.p(b);
        let num = (pj + NPMI_EPS).ln() - (pa * pb + NPMI_EPS).ln();
        let den = -(pj + NPMI_EPS).ln();
        num / den
    }
}

/// Average topic coherence over the `tops` list sizes.
pub fn npmi_coherence(
    topics: &[Vec<String>],
    reference_docs: &[Vec<String>],
    tops: &[usize],
) -> Result<f64> {
    if topics.is_empty() {
        return Err(EvalError::EmptyHypotheses);
    }
    let stats = CoocStats::from_docs(reference_docs)?;
    let mut topic_scores = Vec::with_capacity(topics.len());
    for words in topics {
        let mut k_scores = Vec::new();
        for &k in tops {
            let k = k.min(words.len());
            if k < 2 {
                continue;
            }
            let mut acc = 0.0;
            let mut pairs = 0usize;
            for i in 0..k {
                for j in (i + 1)..k {
                    acc += stats.npmi(&words[i], &words[j]);
                    pairs += 1;
                }
            }
            k_scores.push(acc / pairs as f64);
        }
        if !k_scores.is_empty() {
            topic_scores.push(k_scores.iter().sum::<f64>() / k_scores.len() as f64);
        }
    }
    if topic_scores.is_empty() {
        return Err(EvalError::EmptyHypotheses);
    }
    Ok(topic_scores.iter().sum::<f64>() / topic_scores.len() as f64)
}
