//! Okapi BM25 over an inverted index.
//!
//! ```text
//! score(D, Q) = Σ_{t ∈ Q} IDF(t) · tf·(k1 + 1) / (tf + k1·(1 − b + b·|D|/avgdl))
//! IDF(t)      = ln((N − n_t + 0.5) / (n_t + 0.5) + 1)
//! ```
//!
//! Query terms are summed with multiplicity. Postings are kept sorted by doc
//! id; documents are also numbered in insertion order so scoring can
//! accumulate into a flat array.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::{sort_hits, RetrievalError, RetrievalHit};
use crate::text::{TokenStream, Tokenizer};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

/// `ln((N − n + 0.5)/(n + 0.5) + 1)`; always positive.
pub fn idf(doc_count: usize, doc_freq: usize) -> f64 {
    let n = doc_count as f64;
    let df = doc_freq as f64;
    libm::log((n - df + 0.5) / (df + 0.5) + 1.0)
}

/// Per-term contribution for a document of length `len`.
pub fn term_weight(params: Bm25Params, tf: f64, len: f64, avg_len: f64) -> f64 {
    let norm = if avg_len > 0.0 { len / avg_len } else { 0.0 };
    tf * (params.k1 + 1.0) / (tf + params.k1 * (1.0 - params.b + params.b * norm))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Posting {
    doc: u32,
    tf: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "SparseDump", try_from = "SparseDump")]
pub struct InvertedIndex {
    params: Bm25Params,
    tokenizer: Tokenizer,
    doc_ids: Vec<String>,
    ordinals: BTreeMap<String, u32>,
    doc_lengths: Vec<u32>,
    total_length: u64,
    postings: BTreeMap<String, Vec<Posting>>,
}

impl Default for InvertedIndex {
    fn default() -> Self {
        Self::new(Bm25Params::default(), Tokenizer::default())
    }
}

impl InvertedIndex {
    pub fn new(params: Bm25Params, tokenizer: Tokenizer) -> Self {
        Self {
            params,
            tokenizer,
            doc_ids: Vec::new(),
            ordinals: BTreeMap::new(),
            doc_lengths: Vec::new(),
            total_length: 0,
            postings: BTreeMap::new(),
        }
    }

    /// Bulk construction: tokenize everything, then build each postings list
    /// in one sort.
    pub fn from_documents<'a, I>(docs: I, params: Bm25Params, tokenizer: Tokenizer) -> Result<Self, RetrievalError>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let mut index = Self::new(params, tokenizer);
        let mut lists: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        for (id, text) in docs {
            if index.ordinals.contains_key(id) {
                return Err(RetrievalError::DuplicateDoc(id.into()));
            }
            let doc = index.doc_ids.len() as u32;
            let tokens = index.tokenizer.tokenize(text);
            index.doc_ids.push(id.into());
            index.ordinals.insert(id.into(), doc);
            index.doc_lengths.push(tokens.len() as u32);
            index.total_length += tokens.len() as u64;
            for (term, tf) in term_counts(&tokens) {
                lists.entry(term).or_default().push(Posting { doc, tf });
            }
        }
        for list in lists.values_mut() {
            list.sort_by(|a, b| index.doc_ids[a.doc as usize].cmp(&index.doc_ids[b.doc as usize]));
        }
        index.postings = lists;
        Ok(index)
    }

    /// Incremental insertion; visible to the next search.
    pub fn add_document(&mut self, id: &str, text: &str) -> Result<(), RetrievalError> {
        if self.ordinals.contains_key(id) {
            return Err(RetrievalError::DuplicateDoc(id.into()));
        }
        let doc = self.doc_ids.len() as u32;
        let tokens = self.tokenizer.tokenize(text);
        self.doc_ids.push(id.into());
        self.ordinals.insert(id.into(), doc);
        self.doc_lengths.push(tokens.len() as u32);
        self.total_length += tokens.len() as u64;
        let doc_ids = &self.doc_ids;
        for (term, tf) in term_counts(&tokens) {
            let list = self.postings.entry(term).or_default();
            let at = list.partition_point(|p| doc_ids[p.doc as usize].as_str() < id);
            list.insert(at, Posting { doc, tf });
        }
        Ok(())
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.ordinals.contains_key(id)
    }

    pub fn avg_doc_length(&self) -> f64 {
        if self.doc_ids.is_empty() {
            0.0
        } else {
            self.total_length as f64 / self.doc_ids.len() as f64
        }
    }

    pub fn doc_length(&self, id: &str) -> Option<usize> {
        self.ordinals.get(id).map(|&d| self.doc_lengths[d as usize] as usize)
    }

    /// `doc id → token count`, sorted by id.
    pub fn doc_lengths(&self) -> BTreeMap<&str, u32> {
        self.ordinals
            .iter()
            .map(|(id, &d)| (id.as_str(), self.doc_lengths[d as usize]))
            .collect()
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.postings.keys().map(String::as_str)
    }

    /// `(doc id, tf)` pairs for `term`, sorted by doc id.
    pub fn postings(&self, term: &str) -> Vec<(&str, u32)> {
        self.postings.get(term).map_or_else(Vec::new, |list| {
            list.iter()
                .map(|p| (self.doc_ids[p.doc as usize].as_str(), p.tf))
                .collect()
        })
    }

    pub fn idf(&self, term: &str) -> f64 {
        idf(self.doc_count(), self.doc_freq(term))
    }

    pub fn bm25_score(&self, query: &TokenStream, doc_id: &str) -> Result<f64, RetrievalError> {
        let &doc = self
            .ordinals
            .get(doc_id)
            .ok_or_else(|| RetrievalError::UnknownDoc(doc_id.into()))?;
        let len = self.doc_lengths[doc as usize] as f64;
        let avg = self.avg_doc_length();
        let mut score = 0.0;
        for term in query.iter() {
            let Some(list) = self.postings.get(term.as_str()) else {
                continue;
            };
            let found = list.binary_search_by(|p| self.doc_ids[p.doc as usize].as_str().cmp(doc_id));
            if let Ok(i) = found {
                let tf = list[i].tf as f64;
                score += idf(self.doc_count(), list.len()) * term_weight(self.params, tf, len, avg);
            }
        }
        Ok(score)
    }

    /// Top `k` documents with a positive score; ties go to the smaller id.
    pub fn search(&self, query: &TokenStream, k: usize) -> Vec<RetrievalHit> {
        if k == 0 || self.is_empty() || query.is_empty() {
            return Vec::new();
        }
        let n = self.doc_count();
        let avg = self.avg_doc_length();
        let mut scores = alloc::vec![0.0f64; n];
        let mut touched: Vec<u32> = Vec::new();
        for term in query.iter() {
            let Some(list) = self.postings.get(term.as_str()) else {
                continue;
            };
            let w = idf(n, list.len());
            for p in list {
                let slot = &mut scores[p.doc as usize];
                if *slot == 0.0 {
                    touched.push(p.doc);
                }
                let len = self.doc_lengths[p.doc as usize] as f64;
                *slot += w * term_weight(self.params, p.tf as f64, len, avg);
            }
        }
        let mut ranked: Vec<(f64, &str)> = touched
            .into_iter()
            .filter(|&d| scores[d as usize] > 0.0)
            .map(|d| (scores[d as usize], self.doc_ids[d as usize].as_str()))
            .collect();
        ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then_with(|| a.1.cmp(b.1)));
        ranked.truncate(k);
        let mut hits: Vec<RetrievalHit> = ranked
            .into_iter()
            .map(|(score, id)| RetrievalHit::sparse(id, score))
            .collect();
        sort_hits(&mut hits);
        hits
    }
}

fn term_counts(tokens: &TokenStream) -> BTreeMap<String, u32> {
    let mut counts = BTreeMap::new();
    for t in tokens.iter() {
        *counts.entry(t.clone()).or_insert(0) += 1;
    }
    counts
}

/// JSON-friendly form: postings and lengths keyed by doc id, plus the
/// insertion order needed to rebuild ordinals.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct SparseDump {
    params: Bm25Params,
    tokenizer: Tokenizer,
    doc_order: Vec<String>,
    doc_lengths: BTreeMap<String, u32>,
    postings: BTreeMap<String, Vec<(String, u32)>>,
}

impl From<InvertedIndex> for SparseDump {
    fn from(ix: InvertedIndex) -> Self {
        let postings = ix
            .postings
            .keys()
            .map(|t| {
                let list = ix.postings(t).into_iter().map(|(d, tf)| (d.into(), tf)).collect();
                (t.clone(), list)
            })
            .collect();
        let doc_lengths = ix.doc_lengths().into_iter().map(|(d, l)| (d.into(), l)).collect();
        SparseDump {
            params: ix.params,
            tokenizer: ix.tokenizer.clone(),
            doc_order: ix.doc_ids.clone(),
            doc_lengths,
            postings,
        }
    }
}

impl TryFrom<SparseDump> for InvertedIndex {
    type Error = RetrievalError;

    fn try_from(d: SparseDump) -> Result<Self, Self::Error> {
        let mut ix = InvertedIndex::new(d.params, d.tokenizer);
        for id in d.doc_order {
            let len = *d
                .doc_lengths
                .get(&id)
                .ok_or_else(|| RetrievalError::Corrupt(alloc::format!("no length for {id}")))?;
            if ix.ordinals.contains_key(&id) {
                return Err(RetrievalError::DuplicateDoc(id));
            }
            ix.ordinals.insert(id.clone(), ix.doc_ids.len() as u32);
            ix.doc_ids.push(id);
            ix.doc_lengths.push(len);
            ix.total_length += len as u64;
        }
        for (term, list) in d.postings {
            let mut out = Vec::with_capacity(list.len());
            for (id, tf) in list {
                let &doc = ix
                    .ordinals
                    .get(&id)
                    .ok_or_else(|| RetrievalError::Corrupt(alloc::format!("posting for unknown doc {id}")))?;
                out.push(Posting { doc, tf });
            }
            out.sort_by(|a, b| ix.doc_ids[a.doc as usize].cmp(&ix.doc_ids[b.doc as usize]));
            ix.postings.insert(term, out);
        }
        Ok(ix)
    }
}
