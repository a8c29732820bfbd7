//! Corpus ingestion: tokenization, the two vocabularies, and vectorization.
//!
//! Two vocabularies are maintained: the language-model vocabulary (frequency
//! floor, PAD/UNK/BOS/EOS specials) drives token sequences, and the topic
//! vocabulary (stop words removed, most-frequent fraction removed, document
//! frequency floor) drives bag-of-words counts. The two are independently
//! indexed.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("topic vocabulary empty after filtering")]
    EmptyTmVocab,
    #[error("cannot encode an empty sequence")]
    EmptySequence,
    #[error("line {line}: {source}")]
    BadRecord { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
const LM_SPECIALS: [&str; 4] = ["<pad>", "<unk>", "<bos>", "<eos>"];

/// Bidirectional token map with dense ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
    has_specials: bool,
}

impl Vocab {
    fn from_tokens(tokens: Vec<String>, has_specials: bool) -> Self {
        let token_to_id =
            tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab { token_to_id, id_to_token: tokens, has_specials }
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(|s| s.as_str())
    }

    pub fn has_specials(&self) -> bool {
        self.has_specials
    }

    /// One token per line, line number = id.
    pub fn write_to(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for t in &self.id_to_token {
            out.push_str(t);
            out.push('\n');
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn read_from(path: &Path, has_specials: bool) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let tokens: Vec<String> = text.lines().map(|l| l.to_string()).collect();
        if tokens.is_empty() {
            return Err(CorpusError::EmptyCorpus);
        }
        Ok(Vocab::from_tokens(tokens, has_specials))
    }
}

/// Topic-vocabulary count vector for one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BagOfWords {
    pub counts: Vec<u32>,
}

impl BagOfWords {
    pub fn total(&self) -> u32 {
        self.counts.iter().sum()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| f64::from(c)).collect()
    }
}

/// BOS-prefixed, EOS-terminated id sequence over the LM vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
}

impl TokenSequence {
    /// Number of content tokens (excluding BOS and EOS).
    pub fn content_len(&self) -> usize {
        self.ids.len().saturating_sub(2)
    }

    /// Number of prediction targets (content tokens plus EOS).
    pub fn target_len(&self) -> usize {
        self.ids.len().saturating_sub(1)
    }
}

/// A raw corpus line: either a generation document or an article/summary pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawDocument {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub article: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<String>,
}

impl RawDocument {
    /// The side the topic model reads: the document text, or the source
    /// article for summarization corpora.
    pub fn body(&self) -> &str {
        self.text.as_deref().or(self.article.as_deref()).unwrap_or("")
    }
}

/// Vectorized document: bag-of-words plus token sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct DocumentRecord {
    pub id: String,
    pub bow: BagOfWords,
    pub sequences: Vec<TokenSequence>,
    /// Source article sequence in summarization corpora.
    pub source: Option<TokenSequence>,
    /// Target summary sequence in summarization corpora.
    pub target: Option<TokenSequence>,
}

/// Whitespace-and-punctuation tokenizer, lowercased.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() || ch == '\'' {
            for c in ch.to_lowercase() {
                current.push(c);
            }
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Split on `.!?` followed by whitespace (or end of text).
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut sentences = Vec::new();
    let mut current = String::new();
    let mut chars = text.chars().peekable();
    while let Some(ch) = chars.next() {
        current.push(ch);
        if matches!(ch, '.' | '!' | '?') {
            let at_break = chars.peek().is_none_or(|c| c.is_whitespace());
            if at_break {
                let s = current.trim();
                if !s.is_empty() {
                    sentences.push(s.to_string());
                }
                current.clear();
            }
        }
    }
    let s = current.trim();
    if !s.is_empty() {
        sentences.push(s.to_string());
    }
    sentences
}

/// Thresholds controlling [`build_vocab`].
#[derive(Debug, Clone)]
pub struct VocabSpec<'a> {
    /// Tokens occurring fewer times than this map to UNK in the LM vocab.
    pub lm_min_count: u32,
    /// Stop words removed from the topic vocabulary.
    pub tm_stoplist: &'a HashSet<String>,
    /// Fraction of the most frequent distinct tokens removed from the topic vocabulary.
    pub tm_top_frac: f64,
    /// Tokens in fewer documents than this are removed from the topic vocabulary.
    pub tm_min_docs: u32,
}

/// Build the LM and TM vocabularies from raw documents.
///
/// Vocabulary order is deterministic: count descending, then token ascending.
pub fn build_vocab(docs: &[RawDocument], spec: &VocabSpec) -> Result<(Vocab, Vocab)> {
    if docs.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let mut counts: BTreeMap<String, u32> = BTreeMap::new();
    let mut doc_freq: BTreeMap<String, u32> = BTreeMap::new();
    let mut any_token = false;
    for doc in docs {
        let mut seen: BTreeSet<&str> = BTreeSet::new();
        let mut body_tokens = tokenize(doc.body());
        if let Some(summary) = &doc.summary {
            body_tokens.extend(tokenize(summary));
        }
        for tok in &body_tokens {
            any_token = true;
            *counts.entry(tok.clone()).or_insert(0) += 1;
        }
        for tok in &body_tokens {
            if seen.insert(tok.as_str()) {
                *doc_freq.entry(tok.clone()).or_insert(0) += 1;
            }
        }
    }
    if !any_token {
        return Err(CorpusError::EmptyCorpus);
    }

    let mut by_freq: Vec<(&String, u32)> = counts.iter().map(|(t, &c)| (t, c)).collect();
    by_freq.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

    let mut lm_tokens: Vec<String> = LM_SPECIALS.iter().map(|s| s.to_string()).collect();
    lm_tokens.extend(
        by_freq.iter().filter(|(_, c)| *c >= spec.lm_min_count).map(|(t, _)| (*t).clone()),
    );
    let lm = Vocab::from_tokens(lm_tokens, true);

    let top_cut = (by_freq.len() as f64 * spec.tm_top_frac).floor() as usize;
    let too_frequent: HashSet<&str> =
        by_freq.iter().take(top_cut).map(|(t, _)| t.as_str()).collect();
    let tm_tokens: Vec<String> = by_freq
        .iter()
        .filter(|(t, _)| {
            !spec.tm_stoplist.contains(*t)
                && !too_frequent.contains(t.as_str())
                && doc_freq.get(*t).copied().unwrap_or(0) >= spec.tm_min_docs
        })
        .map(|(t, _)| (*t).clone())
        .collect();
    if tm_tokens.is_empty() {
        return Err(CorpusError::EmptyTmVocab);
    }
    let tm = Vocab::from_tokens(tm_tokens, false);
    Ok((lm, tm))
}

fn encode_sentence(tokens: &[String], lm: &Vocab, max_len: usize) -> TokenSequence {
    let mut ids = Vec::with_capacity(tokens.len().min(max_len) + 2);
    ids.push(BOS);
    for tok in tokens.iter().take(max_len) {
        ids.push(lm.id(tok).unwrap_or(UNK));
    }
    ids.push(EOS);
    TokenSequence { ids }
}

fn bow_of(tokens: &[String], tm: &Vocab, max_words: usize) -> BagOfWords {
    let mut counts = vec![0u32; tm.len()];
    let mut used = 0;
    for tok in tokens {
        if used >= max_words {
            break;
        }
        if let Some(id) = tm.id(tok) {
            counts[id] += 1;
            used += 1;
        }
    }
    BagOfWords { counts }
}

/// Vectorize one raw document into bag-of-words and token sequences.
///
/// The bag-of-words covers the first `max_words` topic-vocabulary tokens of
/// the body; each sentence is truncated to `max_len` tokens before EOS.
pub fn vectorize(
    doc: &RawDocument,
    lm: &Vocab,
    tm: &Vocab,
    max_words: usize,
    max_len: usize,
) -> DocumentRecord {
    let body_tokens = tokenize(doc.body());
    let bow = bow_of(&body_tokens, tm, max_words);

    let mut sequences = Vec::new();
    let mut source = None;
    let mut target = None;
    if let Some(summary) = &doc.summary {
        let src_tokens = tokenize(doc.body());
        let tgt_tokens = tokenize(summary);
        if !src_tokens.is_empty() {
            source = Some(encode_sentence(&src_tokens, lm, max_len));
        }
        if !tgt_tokens.is_empty() {
            target = Some(encode_sentence(&tgt_tokens, lm, max_len));
        }
    } else {
        for sentence in split_sentences(doc.body()) {
            let tokens = tokenize(&sentence);
            if tokens.is_empty() {
                continue;
            }
            sequences.push(encode_sentence(&tokens, lm, max_len));
        }
    }
    DocumentRecord { id: doc.id.clone(), bow, sequences, source, target }
}

/// One training item: a bag-of-words paired with a sentence (generation) or
/// with a source/target pair (summarization).
#[derive(Debug, Clone, PartialEq)]
pub struct Item {
    pub bow: BagOfWords,
    pub sequence: TokenSequence,
    pub source: Option<TokenSequence>,
}

/// Expand records into training items.
pub fn items_of(records: &[DocumentRecord]) -> Vec<Item> {
    let mut items = Vec::new();
    for rec in records {
        match (&rec.source, &rec.target) {
            (Some(src), Some(tgt)) => items.push(Item {
                bow: rec.bow.clone(),
                sequence: tgt.clone(),
                source: Some(src.clone()),
            }),
            _ => {
                for seq in &rec.sequences {
                    items.push(Item { bow: rec.bow.clone(), sequence: seq.clone(), source: None });
                }
            }
        }
    }
    items
}

/// Dense batch matrices with PAD filling and a 0/1 mask over real tokens.
#[derive(Debug, Clone)]
pub struct Batch {
    /// `[batch, tm_vocab]` counts.
    pub bow: Vec<Vec<f64>>,
    /// `[batch, max_len_in_batch]` token ids, PAD-filled.
    pub tokens: Vec<Vec<usize>>,
    /// 1.0 for real tokens (including EOS), 0.0 for padding.
    pub mask: Vec<Vec<f64>>,
    /// Source matrices for summarization batches.
    pub src_tokens: Option<Vec<Vec<usize>>>,
    pub src_mask: Option<Vec<Vec<f64>>>,
    /// The items backing the rows, in row order.
    pub items: Vec<Item>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

fn pad_rows(seqs: &[&TokenSequence]) -> (Vec<Vec<usize>>, Vec<Vec<f64>>) {
    let width = seqs.iter().map(|s| s.ids.len()).max().unwrap_or(0);
    let mut tokens = Vec::with_capacity(seqs.len());
    let mut mask = Vec::with_capacity(seqs.len());
    for seq in seqs {
        let mut row = seq.ids.clone();
        let mut m = vec![1.0; row.len()];
        row.resize(width, PAD);
        m.resize(width, 0.0);
        tokens.push(row);
        mask.push(m);
    }
    (tokens, mask)
}

/// Deterministic batch stream; identical seeds yield identical order.
pub fn batch_iter(items: &[Item], batch_size: usize, seed: u64, shuffle: bool) -> Vec<Batch> {
    assert!(batch_size >= 1, "batch_size must be >= 1");
    let mut order: Vec<usize> = (0..items.len()).collect();
    if shuffle {
        let mut rng = rng::stream(seed, "batch_iter", 0);
        order.shuffle(&mut rng);
    }
    let mut batches = Vec::new();
    for chunk in order.chunks(batch_size) {
        let chosen: Vec<Item> = chunk.iter().map(|&i| items[i].clone()).collect();
        let seq_refs: Vec<&TokenSequence> = chosen.iter().map(|it| &it.sequence).collect();
        let (tokens, mask) = pad_rows(&seq_refs);
        let (src_tokens, src_mask) = if chosen.iter().all(|it| it.source.is_some()) {
            let src_refs: Vec<&TokenSequence> =
                chosen.iter().map(|it| it.source.as_ref().unwrap()).collect();
            let (t, m) = pad_rows(&src_refs);
            (Some(t), Some(m))
        } else {
            (None, None)
        };
        batches.push(Batch {
            bow: chosen.iter().map(|it| it.bow.as_f64()).collect(),
            tokens,
            mask,
            src_tokens,
            src_mask,
            items: chosen,
        });
    }
    batches
}

/// Read a JSON-lines corpus file.
pub fn read_jsonl(path: &Path) -> Result<Vec<RawDocument>> {
    let file = fs::File::open(path)?;
    let mut docs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: RawDocument = serde_json::from_str(&line)
            .map_err(|source| CorpusError::BadRecord { line: i + 1, source })?;
        docs.push(doc);
    }
    if docs.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    Ok(docs)
}

pub fn write_jsonl(path: &Path, docs: &[RawDocument]) -> Result<()> {
    let mut file = fs::File::create(path)?;
    for doc in docs {
        serde_json::to_writer(&mut file, doc).map_err(std::io::Error::other)?;
        file.write_all(b"\n")?;
    }
    Ok(())
}

/// Default English stop word list shipped with the crate.
pub fn default_stoplist() -> HashSet<String> {
    include_str!("../assets/stopwords_en.txt")
        .lines()
        .map(|l| l.trim().to_string())
        .filter(|l| !l.is_empty())
        .collect()
}

pub fn load_stoplist(path: &Path) -> Result<HashSet<String>> {
    let text = fs::read_to_string(path)?;
    Ok(text.lines().map(|l| l.trim().to_string()).filter(|l| !l.is_empty()).collect())
}
