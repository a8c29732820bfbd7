//! Shared fixtures for integration tests: synthetic corpora with known
//! structure, and vocabulary settings that keep every synthetic token.

use std::collections::HashSet;

use tgvae::corpus::{self, Item, RawDocument, Vocab, VocabSpec};
use tgvae::rng::{stream, uniform};

/// Number of planted topics and words per topic.
pub const PLANTED_TOPICS: usize = 3;
pub const WORDS_PER_TOPIC: usize = 10;

pub fn planted_word(topic: usize, j: usize) -> String {
    format!("t{topic}w{j:02}")
}

/// Planted vocabulary as one list per topic.
pub fn planted_word_lists() -> Vec<Vec<String>> {
    (0..PLANTED_TOPICS)
        .map(|k| (0..WORDS_PER_TOPIC).map(|j| planted_word(k, j)).collect())
        .collect()
}

/// Synthetic corpus of documents drawn from disjoint topics: each document is
/// one sentence of words sampled from a Zipf-skewed distribution over its
/// topic's ten words.
pub fn planted_corpus(n_docs: usize, seed: u64) -> Vec<RawDocument> {
    let mut rng = stream(seed, "planted_corpus", 0);
    let weights: Vec<f64> = (0..WORDS_PER_TOPIC).map(|j| 1.0 / (j + 1) as f64).collect();
    let total: f64 = weights.iter().sum();
    let mut docs = Vec::with_capacity(n_docs);
    for d in 0..n_docs {
        let topic = d % PLANTED_TOPICS;
        let len = 8 + (uniform(&mut rng) * 5.0) as usize;
        let mut words = Vec::with_capacity(len);
        for _ in 0..len {
            let mut u = uniform(&mut rng) * total;
            let mut pick = WORDS_PER_TOPIC - 1;
            for (j, w) in weights.iter().enumerate() {
                u -= w;
                if u <= 0.0 {
                    pick = j;
                    break;
                }
            }
            words.push(planted_word(topic, pick));
        }
        docs.push(RawDocument {
            id: format!("doc{d}"),
            text: Some(words.join(" ")),
            article: None,
            summary: None,
        });
    }
    docs
}

/// Copy-task corpus: the summary is the first three tokens of the article.
pub fn copy_corpus(n_pairs: usize, seed: u64) -> Vec<RawDocument> {
    let mut rng = stream(seed, "copy_corpus", 0);
    let vocab: Vec<String> = (0..20).map(|i| format!("s{i:02}")).collect();
    let mut docs = Vec::with_capacity(n_pairs);
    for d in 0..n_pairs {
        let len = 5 + (uniform(&mut rng) * 4.0) as usize;
        let words: Vec<String> = (0..len)
            .map(|_| vocab[(uniform(&mut rng) * vocab.len() as f64) as usize].clone())
            .collect();
        let summary = words[..3].join(" ");
        docs.push(RawDocument {
            id: format!("pair{d}"),
            text: None,
            article: Some(words.join(" ")),
            summary: Some(summary),
        });
    }
    docs
}

/// Vocabularies that keep every synthetic token (no frequency filtering).
pub fn keep_all_vocabs(docs: &[RawDocument]) -> (Vocab, Vocab) {
    let stoplist = HashSet::new();
    let spec = VocabSpec { lm_min_count: 1, tm_stoplist: &stoplist, tm_top_frac: 0.0, tm_min_docs: 1 };
    corpus::build_vocab(docs, &spec).expect("synthetic corpus is nonempty")
}

pub fn vectorize_items(docs: &[RawDocument], lm: &Vocab, tm: &Vocab) -> Vec<Item> {
    let records: Vec<_> = docs.iter().map(|d| corpus::vectorize(d, lm, tm, 300, 30)).collect();
    corpus::items_of(&records)
}
