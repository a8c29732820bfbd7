//! ROUGE-1/2 from n-gram overlap and ROUGE-L from the longest common
//! subsequence. Multi-reference scoring takes the maximum over references;
//! an optional byte cap truncates the hypothesis text before scoring.

use std::collections::HashMap;

use super::{EvalError, Result};

/// Precision / recall / F1 triple.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    fn from_counts(overlap: f64, hyp_total: f64, ref_total: f64) -> Prf {
        let precision = if hyp_total > 0.0 { overlap / hyp_total } else { 0.0 };
        let recall = if ref_total > 0.0 { overlap / ref_total } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Prf { precision, recall, f1 }
    }

    fn max_each(self, other: Prf) -> Prf {
        Prf {
            precision: self.precision.max(other.precision),
            recall: self.recall.max(other.recall),
            f1: self.f1.max(other.f1),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RougeScores {
    pub rouge_1: Prf,
    pub rouge_2: Prf,
    pub rouge_l: Prf,
}

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

fn rouge_n(hyp: &[String], reference: &[String], n: usize) -> Prf {
    let hyp_ngrams = ngram_counts(hyp, n);
    let ref_ngrams = ngram_counts(reference, n);
    let hyp_total: usize = hyp_ngrams.values().sum();
    let ref_total: usize = ref_ngrams.values().sum();
    let mut overlap = 0usize;
    for (gram, &rc) in &ref_ngrams {
        if let Some(&hc) = hyp_ngrams.get(gram) {
            overlap += rc.min(hc);
        }
    }
    Prf::from_counts(overlap as f64, hyp_total as f64, ref_total as f64)
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut curr = vec![0usize; b.len() + 1];
    for ai in a {
        for (j, bj) in b.iter().enumerate() {
            curr[j + 1] = if ai == bj { prev[j] + 1 } else { prev[j + 1].max(curr[j]) };
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

fn rouge_l(hyp: &[String], reference: &[String]) -> Prf {
    let lcs = lcs_len(hyp, reference) as f64;
    Prf::from_counts(lcs, hyp.len() as f64, reference.len() as f64)
}

/// Truncate at a byte budget over the space-joined text, then re-tokenize.
fn truncate_bytes(tokens: &[String], cap: usize) -> Vec<String> {
    let text = tokens.join(" ");
    if text.len() <= cap {
        return tokens.to_vec();
    }
    let mut cut = cap;
    while cut > 0 && !text.is_char_boundary(cut) {
        cut -= 1;
    }
    text[..cut].split_whitespace().map(|s| s.to_string()).collect()
}

/// Score one hypothesis against one or more references (max over references).
pub fn rouge_scores(
    hypothesis: &[String],
    references: &[Vec<String>],
    byte_cap: Option<usize>,
) -> Result<RougeScores> {
    if references.is_empty() {
        return Err(EvalError::EmptyReferences);
    }
    let hyp = match byte_cap {
        Some(cap) => truncate_bytes(hypothesis, cap),
        None => hypothesis.to_vec(),
    };
    let mut best = RougeScores::default();
    for reference in references {
        let r1 = rouge_n(&hyp, reference, 1);
        let r2 = rouge_n(&hyp, reference, 2);
        let rl = rouge_l(&hyp, reference);
        best = RougeScores {
            rouge_1: best.rouge_1.max_each(r1),
            rouge_2: best.rouge_2.max_each(r2),
            rouge_l: best.rouge_l.max_each(rl),
        };
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(|t| t.to_string()).collect()
    }

    #[test]
    fn identical_texts_score_one() {
        let h = toks("the quick brown fox");
        let s = rouge_scores(&h, &[h.clone()], None).unwrap();
        assert_eq!(s.rouge_1.f1, 1.0);
        assert_eq!(s.rouge_2.f1, 1.0);
        assert_eq!(s.rouge_l.recall, 1.0);
        assert_eq!(s.rouge_l.f1, 1.0);
    }

    #[test]
    fn disjoint_texts_score_zero() {
        let s = rouge_scores(&toks("aa bb cc"), &[toks("xx yy zz")], None).unwrap();
        assert_eq!(s.rouge_1.f1, 0.0);
        assert_eq!(s.rouge_2.f1, 0.0);
        assert_eq!(s.rouge_l.f1, 0.0);
    }

    #[test]
    fn lcs_hand_fixture() {
        // hyp "a b c d" vs ref "a c b d": LCS length 3, recall 3/4.
        let s = rouge_scores(&toks("a b c d"), &[toks("a c b d")], None).unwrap();
        assert!((s.rouge_l.recall - 0.75).abs() < 1e-12);
        assert!((s.rouge_l.precision - 0.75).abs() < 1e-12);
    }

    #[test]
    fn multi_reference_takes_max() {
        let refs = vec![toks("nothing in common"), toks("a b c d")];
        let s = rouge_scores(&toks("a b c d"), &refs, None).unwrap();
        assert_eq!(s.rouge_1.f1, 1.0);
    }

    #[test]
    fn byte_cap_truncates_hypothesis() {
        let hyp = toks("aaaa bbbb cccc dddd");
        // 9 bytes keeps "aaaa bbbb" only.
        let s = rouge_scores(&hyp, &[toks("aaaa bbbb")], Some(9)).unwrap();
        assert_eq!(s.rouge_1.f1, 1.0);
        let unc = rouge_scores(&hyp, &[toks("aaaa bbbb")], None).unwrap();
        assert!(unc.rouge_1.precision < 1.0);
    }

    #[test]
    fn empty_reference_set_is_an_error() {
        assert!(matches!(
            rouge_scores(&toks("a"), &[], None),
            Err(EvalError::EmptyReferences)
        ));
    }
}
