//! Modified n-gram precision BLEU with epsilon smoothing.
//!
//! test-BLEU scores each hypothesis against the whole reference group and
//! averages; self-BLEU scores each hypothesis against all other hypotheses.
//! `BLEU-n` is the brevity penalty times the geometric mean of the modified
//! precisions of orders `1..=n`, each floored at [`BLEU_EPS`] when zero.

use std::collections::HashMap;

use rayon::prelude::*;

use super::{EvalError, Result};

/// Substituted for zero modified precisions.
pub const BLEU_EPS: f64 = 1e-9;

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut map = HashMap::new();
    if n == 0 || tokens.len() < n {
        return map;
    }
    for i in 0..=tokens.len() - n {
        *map.entry(&tokens[i..i + n]).or_insert(0) += 1;
    }
    map
}

/// Clipped precision of order `n` against the whole reference group.
fn modified_precision(hyp: &[String], refs: &[&Vec<String>], n: usize) -> f64 {
    let hyp_ngrams = ngram_counts(hyp, n);
    if hyp_ngrams.is_empty() {
        return 0.0;
    }
    let ref_ngrams: Vec<HashMap<&[String], usize>> =
        refs.iter().map(|r| ngram_counts(r, n)).collect();
    let mut clipped = 0usize;
    let mut total = 0usize;
    for (gram, &count) in &hyp_ngrams {
        total += count;
        let max_ref = ref_ngrams.iter().map(|m| m.get(gram).copied().unwrap_or(0)).max().unwrap_or(0);
        clipped += count.min(max_ref);
    }
    clipped as f64 / total as f64
}

/// Closest reference length; ties go to the shorter reference.
fn effective_ref_len(hyp_len: usize, refs: &[&Vec<String>]) -> usize {
    refs.iter()
        .map(|r| r.len())
        .min_by_key(|&rl| (rl.abs_diff(hyp_len), rl))
        .unwrap_or(0)
}

fn brevity_penalty(hyp_len: usize, ref_len: usize) -> f64 {
    if hyp_len == 0 {
        0.0
    } else if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    }
}

/// BLEU-1..BLEU-n of one hypothesis against a reference group.
fn sentence_bleu(hyp: &[String], refs: &[&Vec<String>], n_max: usize) -> Vec<f64> {
    let bp = brevity_penalty(hyp.len(), effective_ref_len(hyp.len(), refs));
    let precisions: Vec<f64> = (1..=n_max)
        .map(|n| {
            let p = modified_precision(hyp, refs, n);
            if p > 0.0 {
                p
            } else {
                BLEU_EPS
            }
        })
        .collect();
    (1..=n_max)
        .map(|n| {
            let log_mean: f64 =
                precisions[..n].iter().map(|p| p.ln()).sum::<f64>() / n as f64;
            bp * log_mean.exp()
        })
        .collect()
}

/// test-BLEU: every hypothesis scored against the full reference group, then
/// averaged. Returns `[BLEU-1, ..., BLEU-n_max]`.
pub fn bleu_scores(
    hypotheses: &[Vec<String>],
    references: &[Vec<String>],
    n_max: usize,
) -> Result<Vec<f64>> {
    if hypotheses.is_empty() {
        return Err(EvalError::EmptyHypotheses);
    }
    if references.is_empty() {
        return Err(EvalError::EmptyReferences);
    }
    let ref_refs: Vec<&Vec<String>> = references.iter().collect();
    let per_hyp: Vec<Vec<f64>> =
        hypotheses.par_iter().map(|h| sentence_bleu(h, &ref_refs, n_max)).collect();
    Ok(average_rows(&per_hyp, n_max, hypotheses.len()))
}

/// self-BLEU: each hypothesis scored against all the others.
pub fn self_bleu(hypotheses: &[Vec<String>], n_max: usize) -> Result<Vec<f64>> {
    if hypotheses.len() < 2 {
        return Err(EvalError::EmptyHypotheses);
    }
    let per_hyp: Vec<Vec<f64>> = hypotheses
        .par_iter()
        .enumerate()
        .map(|(i, h)| {
            let others: Vec<&Vec<String>> = hypotheses
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, r)| r)
                .collect();
            sentence_bleu(h, &others, n_max)
        })
        .collect();
    Ok(average_rows(&per_hyp, n_max, hypotheses.len()))
}

fn average_rows(rows: &[Vec<f64>], width: usize, count: usize) -> Vec<f64> {
    let mut out = vec![0.0; width];
    for row in rows {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    for o in &mut out {
        *o /= count as f64;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(|t| t.to_string()).collect()
    }

    #[test]
    fn exact_match_scores_one_for_all_orders() {
        let hyp = vec![toks("the cat sat on the mat")];
        let refs = vec![toks("the cat sat on the mat"), toks("unrelated sentence here")];
        let scores = bleu_scores(&hyp, &refs, 4).unwrap();
        for (n, s) in scores.iter().enumerate() {
            assert!((s - 1.0).abs() < 1e-12, "BLEU-{} = {s}", n + 1);
        }
    }

    #[test]
    fn disjoint_is_epsilon_smoothed_near_zero() {
        let hyp = vec![toks("aa bb cc")];
        let refs = vec![toks("xx yy zz")];
        let scores = bleu_scores(&hyp, &refs, 3).unwrap();
        for s in scores {
            assert!(s < 1e-6, "score {s}");
        }
    }

    #[test]
    fn hand_computed_bigram_fixture() {
        // hyp "a b c d", ref "a b c e": p1 = 3/4, p2 = 2/3, BP = 1.
        let hyp = vec![toks("a b c d")];
        let refs = vec![toks("a b c e")];
        let scores = bleu_scores(&hyp, &refs, 2).unwrap();
        assert!((scores[0] - 0.75).abs() < 1e-12);
        let expected = (0.75f64 * (2.0 / 3.0)).sqrt();
        assert!((scores[1] - expected).abs() < 1e-9, "B-2 = {} vs {expected}", scores[1]);
    }

    #[test]
    fn self_bleu_identical_and_disjoint() {
        let same = vec![toks("one two three"); 4];
        let scores = self_bleu(&same, 3).unwrap();
        for s in scores {
            assert!((s - 1.0).abs() < 1e-12);
        }
        let disjoint = vec![toks("aa bb"), toks("cc dd"), toks("ee ff")];
        let scores = self_bleu(&disjoint, 2).unwrap();
        for s in scores {
            assert!(s < 1e-6);
        }
    }

    #[test]
    fn empty_hypothesis_set_is_an_error() {
        assert!(matches!(bleu_scores(&[], &[toks("a")], 2), Err(EvalError::EmptyHypotheses)));
        assert!(matches!(
            bleu_scores(&[toks("a")], &[], 2),
            Err(EvalError::EmptyReferences)
        ));
    }

    #[test]
    fn brevity_penalty_brevity_cases() {
        // Short hypothesis penalized, long hypothesis not.
        let refs = vec![toks("a b c d e f")];
        let short = bleu_scores(&[toks("a b c")], &refs, 1).unwrap();
        assert!((short[0] - (1.0f64 - 2.0).exp()).abs() < 1e-12);
        let long = bleu_scores(&[toks("a b c d e f g")], &refs, 1).unwrap();
        assert!((long[0] - 6.0 / 7.0).abs() < 1e-12);
    }
}
