//! Evidence retrieval over the pages scraped for one claim.
//!
//! Each page is split into sentences and cut into overlapping windows of
//! whole sentences. The windows of all pages for a claim form a small corpus
//! ranked with Okapi BM25:
//!
//! ```text
//! score(q, c) = Σ_{t ∈ q} idf(t) · tf(t,c)·(k1+1) / (tf(t,c) + k1·(1 − b + b·|c|/avg|c|))
//! idf(t)      = ln(1 + (N − df(t) + 0.5) / (df(t) + 0.5))
//! ```
//!
//! Query terms are the distinct tokens of the claim, in order of first
//! occurrence. Tokens are lowercase alphanumeric runs; no stemming and no
//! stop words.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::segmentation::split_sentences;

pub const DEFAULT_CHUNK_LEN: usize = 6;
pub const DEFAULT_OVERLAP: usize = 2;
pub const DEFAULT_TOP_M: usize = 10;
pub const DEFAULT_K1: f64 = 1.2;
pub const DEFAULT_B: f64 = 0.75;

/// Serialization version of [`EvidenceIndex`].
pub const INDEX_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "reason", rename_all = "snake_case")]
pub enum FetchStatus {
    Ok,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WebDocument {
    pub url: String,
    pub title: String,
    pub body: String,
    pub word_count: usize,
    pub fetch_status: FetchStatus,
}

impl WebDocument {
    pub fn fetched(url: impl Into<String>, title: impl Into<String>, body: impl Into<String>) -> Self {
        let body = body.into();
        Self {
            url: url.into(),
            title: title.into(),
            word_count: body.split_whitespace().count(),
            body,
            fetch_status: FetchStatus::Ok,
        }
    }

    pub fn failed(url: impl Into<String>, title: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            title: title.into(),
            body: String::new(),
            word_count: 0,
            fetch_status: FetchStatus::Failed(reason.into()),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.fetch_status == FetchStatus::Ok
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceChunk {
    pub source_url: String,
    pub source_title: String,
    pub chunk_index: usize,
    pub text: String,
    /// First and last sentence ordinals of the source document, inclusive.
    pub first_sentence: usize,
    pub last_sentence: usize,
}

impl EvidenceChunk {
    pub fn key(&self) -> (String, usize) {
        (self.source_url.clone(), self.chunk_index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChunkingConfig {
    pub chunk_len: usize,
    pub overlap: usize,
}

impl Default for ChunkingConfig {
    fn default() -> Self {
        Self {
            chunk_len: DEFAULT_CHUNK_LEN,
            overlap: DEFAULT_OVERLAP,
        }
    }
}

impl ChunkingConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.chunk_len == 0 {
            return Err(ConfigError::new("chunk_len", "must be at least 1"));
        }
        if self.overlap >= self.chunk_len {
            return Err(ConfigError::new("overlap", "must be smaller than chunk_len"));
        }
        Ok(())
    }
}

/// Sliding windows of `chunk_len` sentences advancing by
/// `chunk_len - overlap`. The last window of a document ends at its last
/// sentence; documents shorter than a window give one chunk. Failed
/// documents give none.
pub fn chunk_documents(docs: &[WebDocument], cfg: ChunkingConfig) -> Result<Vec<EvidenceChunk>, ConfigError> {
    cfg.validate()?;
    let step = cfg.chunk_len - cfg.overlap;
    let mut out = Vec::new();
    for doc in docs.iter().filter(|d| d.is_ok()) {
        let sentences = split_sentences(&doc.body);
        let n = sentences.len();
        let mut start = 0;
        let mut idx = 0;
        while start < n {
            let end = (start + cfg.chunk_len).min(n);
            out.push(EvidenceChunk {
                source_url: doc.url.clone(),
                source_title: doc.title.clone(),
                chunk_index: idx,
                text: doc.body[sentences[start].start..sentences[end - 1].end].to_string(),
                first_sentence: start,
                last_sentence: end - 1,
            });
            idx += 1;
            if end == n {
                break;
            }
            start += step;
        }
    }
    Ok(out)
}

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Distinct tokens in order of first occurrence.
pub fn query_terms(text: &str) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    tokenize(text).into_iter().filter(|t| seen.insert(t.clone())).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self {
            k1: DEFAULT_K1,
            b: DEFAULT_B,
        }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.k1 >= 0.0 && self.k1.is_finite()) {
            return Err(ConfigError::new("k1", "must be a finite non-negative number"));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(ConfigError::new("b", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Immutable BM25 index over one claim's evidence chunks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceIndex {
    pub version: u32,
    pub params: Bm25Params,
    pub chunks: Vec<EvidenceChunk>,
    pub doc_freq: BTreeMap<String, usize>,
    pub term_freqs: Vec<BTreeMap<String, usize>>,
    pub lengths: Vec<usize>,
    pub avg_len: f64,
}

pub fn build_index(chunks: Vec<EvidenceChunk>, params: Bm25Params) -> EvidenceIndex {
    let mut doc_freq: BTreeMap<String, usize> = BTreeMap::new();
    let mut term_freqs = Vec::with_capacity(chunks.len());
    let mut lengths = Vec::with_capacity(chunks.len());
    for chunk in &chunks {
        let tokens = tokenize(&chunk.text);
        lengths.push(tokens.len());
        let mut tf: BTreeMap<String, usize> = BTreeMap::new();
        for t in tokens {
            *tf.entry(t).or_default() += 1;
        }
        for term in tf.keys() {
            *doc_freq.entry(term.clone()).or_default() += 1;
        }
        term_freqs.push(tf);
    }
    let avg_len = if lengths.is_empty() {
        0.0
    } else {
        lengths.iter().sum::<usize>() as f64 / lengths.len() as f64
    };
    EvidenceIndex {
        version: INDEX_VERSION,
        params,
        chunks,
        doc_freq,
        term_freqs,
        lengths,
        avg_len,
    }
}

impl EvidenceIndex {
    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.chunks.len() as f64;
        let df = self.doc_freq.get(term).copied().unwrap_or(0) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// BM25 score of chunk `chunk` for the given (already distinct) terms.
    pub fn bm25_score(&self, terms: &[String], chunk: usize) -> f64 {
        let Some(tf_map) = self.term_freqs.get(chunk) else {
            return 0.0;
        };
        let Bm25Params { k1, b } = self.params;
        let len_ratio = if self.avg_len > 0.0 {
            self.lengths[chunk] as f64 / self.avg_len
        } else {
            1.0
        };
        let mut score = 0.0;
        for term in terms {
            let tf = tf_map.get(term).copied().unwrap_or(0);
            if tf == 0 {
                continue;
            }
            let tf = tf as f64;
            score += self.idf(term) * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * len_ratio));
        }
        score
    }
}

/// Orders scored chunks: higher score first, then source URL, then chunk
/// index.
pub fn rank_order(a: (&EvidenceChunk, f64), b: (&EvidenceChunk, f64)) -> Ordering {
    b.1.partial_cmp(&a.1)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.0.source_url.cmp(&b.0.source_url))
        .then_with(|| a.0.chunk_index.cmp(&b.0.chunk_index))
}

/// A retrieved chunk with its score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredChunk {
    pub chunk: EvidenceChunk,
    pub score: f64,
}

/// The `m` best chunks with a positive score for `claim`.
pub fn retrieve_scored(index: &EvidenceIndex, claim: &str, m: usize) -> Vec<ScoredChunk> {
    let terms = query_terms(claim);
    if terms.is_empty() || index.is_empty() || m == 0 {
        return Vec::new();
    }
    let mut scored: Vec<(usize, f64)> = (0..index.len())
        .map(|i| (i, index.bm25_score(&terms, i)))
        .filter(|&(_, s)| s > 0.0)
        .collect();
    scored.sort_by(|&(i, si), &(j, sj)| rank_order((&index.chunks[i], si), (&index.chunks[j], sj)));
    scored
        .into_iter()
        .take(m)
        .map(|(i, score)| ScoredChunk {
            chunk: index.chunks[i].clone(),
            score,
        })
        .collect()
}

pub fn retrieve(index: &EvidenceIndex, claim: &str, m: usize) -> Vec<EvidenceChunk> {
    retrieve_scored(index, claim, m).into_iter().map(|s| s.chunk).collect()
}

/// Term frequencies of a piece of text; handy for callers that need them
/// without building an index.
pub fn term_counts(text: &str) -> HashMap<String, usize> {
    let mut m = HashMap::new();
    for t in tokenize(text) {
        *m.entry(t).or_default() += 1;
    }
    m
}
