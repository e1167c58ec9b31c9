//! Hybrid sparse + dense retrieval with rank fusion, re-ranking and a
//! relevance threshold.

use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::provider::ProviderError;

pub mod dense;
pub mod fusion;
pub mod hybrid;
pub mod relevance;
pub mod sparse;

pub use dense::DenseIndex;
pub use fusion::{fuse_rrf, rerank, JaccardScorer, PairScorer};
pub use hybrid::{DocMeta, HybridConfig, HybridIndex};
pub use relevance::{calibrate_threshold, decide_relevance, Calibration, HoldoutObservation, RelevanceDecision, SweepPoint};
pub use sparse::{Bm25Params, InvertedIndex};

/// One scored candidate. Single-channel lists carry their channel score in
/// `fused_score` too, so "fused_score is non-increasing in rank" holds for
/// every list this module produces; `final_score` is set by re-ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub record_id: String,
    pub sparse_score: f64,
    pub dense_score: f64,
    pub fused_score: f64,
    pub final_score: f64,
    pub rank: usize,
    /// Set when the pair scorer failed and the fused order was kept.
    #[serde(default, skip_serializing_if = "core::ops::Not::not")]
    pub rerank_fallback: bool,
}

impl RetrievalHit {
    pub fn sparse(id: &str, score: f64) -> Self {
        Self {
            record_id: id.into(),
            sparse_score: score,
            dense_score: 0.0,
            fused_score: score,
            final_score: score,
            rank: 0,
            rerank_fallback: false,
        }
    }

    pub fn dense(id: &str, score: f64) -> Self {
        Self {
            dense_score: score,
            sparse_score: 0.0,
            ..Self::sparse(id, score)
        }
    }
}

/// Sort by `fused_score` descending, ties by ascending id, and renumber
/// ranks from 1.
pub(crate) fn sort_hits(hits: &mut [RetrievalHit]) {
    hits.sort_by(|a, b| {
        b.fused_score
            .partial_cmp(&a.fused_score)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.record_id.cmp(&b.record_id))
    });
    renumber(hits);
}

pub(crate) fn renumber(hits: &mut [RetrievalHit]) {
    for (i, h) in hits.iter_mut().enumerate() {
        h.rank = i + 1;
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RetrievalError {
    #[error("unknown document {0}")]
    UnknownDoc(String),
    #[error("duplicate document id {0}")]
    DuplicateDoc(String),
    #[error("record {0} is not published")]
    NotPublished(String),
    #[error("embedding dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("document {0} has a zero embedding")]
    ZeroVector(String),
    #[error("embedding provider {expected} expected, index built with {found}")]
    ProviderMismatch { expected: String, found: String },
    #[error("embedding provider failed: {0}")]
    Provider(#[from] ProviderError),
    #[error("holdout is empty")]
    EmptyHoldout,
    #[error("holdout group {0} has no member in the index")]
    GroupNotIndexed(String),
    #[error("corrupt index dump: {0}")]
    Corrupt(String),
}

/// Ranks must run 1..=n and scores must not increase with rank.
pub fn is_rank_valid(hits: &[RetrievalHit]) -> bool {
    hits.iter().enumerate().all(|(i, h)| h.rank == i + 1)
        && hits.windows(2).all(|w| w[0].fused_score >= w[1].fused_score)
}

pub fn ids(hits: &[RetrievalHit]) -> Vec<&str> {
    hits.iter().map(|h| h.record_id.as_str()).collect()
}
