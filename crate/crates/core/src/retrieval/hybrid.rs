//! Sparse and dense indices kept in lockstep, plus the per-document metadata
//! needed for re-ranking and calibration.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::fusion::{fuse_rrf, rerank, PairScorer, DEFAULT_RRF_C};
use super::relevance::{calibrate_threshold, Calibration, HoldoutObservation};
use super::{Bm25Params, DenseIndex, InvertedIndex, RetrievalError, RetrievalHit};
use crate::corpus::{QARecord, RecordStatus};
use crate::provider::{embed, normalize, Embedder};
use crate::text::Tokenizer;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HybridConfig {
    /// Per-channel candidate depth before fusion.
    pub candidates: usize,
    pub rrf_c: u32,
    /// Weight of the normalized fused score in the re-rank blend.
    pub rerank_weight: f64,
    pub top_k: usize,
    pub bm25: Bm25Params,
}

impl Default for HybridConfig {
    fn default() -> Self {
        Self {
            candidates: 20,
            rrf_c: DEFAULT_RRF_C,
            rerank_weight: 0.3,
            top_k: 10,
            bm25: Bm25Params::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocMeta {
    pub group_id: String,
    pub text: String,
}

/// An immutable-by-convention snapshot: writers clone, call
/// [`HybridIndex::add_document`], and publish the clone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridIndex {
    version: u64,
    config: HybridConfig,
    sparse: InvertedIndex,
    dense: DenseIndex,
    meta: BTreeMap<String, DocMeta>,
}

impl HybridIndex {
    pub fn new(config: HybridConfig, tokenizer: Tokenizer, dimension: usize, provider_id: &str) -> Self {
        Self {
            version: 0,
            config,
            sparse: InvertedIndex::new(config.bm25, tokenizer),
            dense: DenseIndex::new(dimension, provider_id),
            meta: BTreeMap::new(),
        }
    }

    /// Bulk build over published records, embedding in one batch.
    pub fn build(
        records: &[QARecord],
        config: HybridConfig,
        tokenizer: Tokenizer,
        embedder: &dyn Embedder,
        dimension: usize,
    ) -> Result<Self, RetrievalError> {
        for r in records {
            if r.status != RecordStatus::Published {
                return Err(RetrievalError::NotPublished(r.id.clone()));
            }
        }
        let sparse = InvertedIndex::from_documents(
            records.iter().map(|r| (r.id.as_str(), r.sanitized_question.as_str())),
            config.bm25,
            tokenizer,
        )?;
        let texts: Vec<&str> = records.iter().map(|r| r.sanitized_question.as_str()).collect();
        let vectors = if texts.is_empty() {
            Vec::new()
        } else {
            embedder.embed_batch(&texts)?
        };
        if vectors.len() != records.len() {
            return Err(RetrievalError::Corrupt(alloc::format!(
                "embedder returned {} vectors for {} texts",
                vectors.len(),
                records.len()
            )));
        }
        let mut dense = DenseIndex::new(dimension, embedder.provider_id());
        let mut meta = BTreeMap::new();
        for (r, mut v) in records.iter().zip(vectors) {
            // same treatment as `embed`
            normalize(&mut v);
            insert_dense(&mut dense, &r.id, v)?;
            meta.insert(r.id.clone(), doc_meta(r));
        }
        Ok(Self {
            version: records.len() as u64,
            config,
            sparse,
            dense,
            meta,
        })
    }

    /// Add one published record; bumps the version on success and leaves the
    /// index untouched on error.
    pub fn add_document(&mut self, record: &QARecord, embedder: &dyn Embedder) -> Result<u64, RetrievalError> {
        if record.status != RecordStatus::Published {
            return Err(RetrievalError::NotPublished(record.id.clone()));
        }
        if self.meta.contains_key(&record.id) {
            return Err(RetrievalError::DuplicateDoc(record.id.clone()));
        }
        self.check_provider(embedder)?;
        let vector = embed(&record.sanitized_question, embedder)?;
        if vector.len() != self.dense.dimension() {
            return Err(RetrievalError::DimensionMismatch {
                expected: self.dense.dimension(),
                found: vector.len(),
            });
        }
        self.sparse.add_document(&record.id, &record.sanitized_question)?;
        insert_dense(&mut self.dense, &record.id, vector)?;
        self.meta.insert(record.id.clone(), doc_meta(record));
        self.version += 1;
        Ok(self.version)
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn config(&self) -> &HybridConfig {
        &self.config
    }

    pub fn set_config(&mut self, config: HybridConfig) {
        self.config = HybridConfig { bm25: self.config.bm25, ..config };
    }

    pub fn sparse(&self) -> &InvertedIndex {
        &self.sparse
    }

    pub fn dense(&self) -> &DenseIndex {
        &self.dense
    }

    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.meta.contains_key(id)
    }

    pub fn meta(&self, id: &str) -> Option<&DocMeta> {
        self.meta.get(id)
    }

    pub fn group_of(&self, id: &str) -> Option<&str> {
        self.meta.get(id).map(|m| m.group_id.as_str())
    }

    pub fn groups(&self) -> BTreeSet<&str> {
        self.meta.values().map(|m| m.group_id.as_str()).collect()
    }

    fn check_provider(&self, embedder: &dyn Embedder) -> Result<(), RetrievalError> {
        if embedder.provider_id() != self.dense.provider_id() {
            return Err(RetrievalError::ProviderMismatch {
                expected: embedder.provider_id().into(),
                found: self.dense.provider_id().into(),
            });
        }
        Ok(())
    }

    /// Sparse + dense candidates, RRF, then the pair-scorer blend. Returns
    /// at most `top_k` hits ordered by `final_score`.
    pub fn search(
        &self,
        query: &str,
        embedder: &dyn Embedder,
        scorer: &dyn PairScorer,
    ) -> Result<Vec<RetrievalHit>, RetrievalError> {
        self.check_provider(embedder)?;
        let depth = self.config.candidates.max(self.config.top_k);
        let tokens = self.sparse.tokenizer().tokenize(query);
        let sparse_hits = self.sparse.search(&tokens, depth);
        let mut qv = embed(query, embedder)?;
        normalize(&mut qv);
        let dense_hits = self.dense.search(&qv, depth)?;
        let fused = fuse_rrf(&sparse_hits, &dense_hits, self.config.rrf_c, depth);
        let mut hits = rerank(
            query,
            fused,
            |id| self.meta.get(id).map(|m| m.text.as_str()),
            scorer,
            self.config.rerank_weight,
        );
        hits.truncate(self.config.top_k);
        Ok(hits)
    }

    /// Top-1 score and group agreement for each `(query, group_id)` pair.
    pub fn observe_holdout(
        &self,
        holdout: &[(String, String)],
        embedder: &dyn Embedder,
        scorer: &dyn PairScorer,
    ) -> Result<Vec<HoldoutObservation>, RetrievalError> {
        if holdout.is_empty() {
            return Err(RetrievalError::EmptyHoldout);
        }
        let groups = self.groups();
        if let Some((_, g)) = holdout.iter().find(|(_, g)| !groups.contains(g.as_str())) {
            return Err(RetrievalError::GroupNotIndexed(g.clone()));
        }
        let mut out = Vec::with_capacity(holdout.len());
        for (query, group) in holdout {
            let hits = self.search(query, embedder, scorer)?;
            out.push(match hits.first() {
                Some(h) => HoldoutObservation {
                    top_score: h.final_score,
                    in_group: self.group_of(&h.record_id) == Some(group.as_str()),
                },
                None => HoldoutObservation {
                    top_score: 0.0,
                    in_group: false,
                },
            });
        }
        Ok(out)
    }

    pub fn calibrate(
        &self,
        holdout: &[(String, String)],
        embedder: &dyn Embedder,
        scorer: &dyn PairScorer,
    ) -> Result<Calibration, RetrievalError> {
        calibrate_threshold(&self.observe_holdout(holdout, embedder, scorer)?)
    }
}

fn doc_meta(r: &QARecord) -> DocMeta {
    DocMeta {
        group_id: r.group_id.clone(),
        text: r.sanitized_question.clone(),
    }
}

// Token-free questions have no direction; they stay sparse-only.
fn insert_dense(dense: &mut DenseIndex, id: &str, vector: Vec<f64>) -> Result<(), RetrievalError> {
    match dense.add(id, vector) {
        Ok(()) | Err(RetrievalError::ZeroVector(_)) => Ok(()),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::HashingEmbedder;
    use crate::retrieval::{is_rank_valid, JaccardScorer};

    fn corpus() -> Vec<QARecord> {
        [
            ("r1", "condom kaise use kare", "Use a new condom every time."),
            ("r2", "condom use karne ka tarika", "Use a new condom every time."),
            ("r3", "periods late kyon hote hain", "Stress and diet can delay periods."),
            ("r4", "period der se aaye to", "Stress and diet can delay periods."),
            ("r5", "pimples puberty mein", "Pimples are common during puberty."),
        ]
        .iter()
        .map(|(id, q, a)| QARecord::published(id, q, a))
        .collect()
    }

    fn build(records: &[QARecord]) -> HybridIndex {
        let e = HashingEmbedder::new(128);
        HybridIndex::build(records, HybridConfig::default(), Tokenizer::default(), &e, 128).unwrap()
    }

    #[test]
    fn exact_question_ranks_first() {
        let ix = build(&corpus());
        let e = HashingEmbedder::new(128);
        let hits = ix.search("periods late kyon hote hain", &e, &JaccardScorer::default()).unwrap();
        assert_eq!(hits[0].record_id, "r3");
        assert!(hits[0].final_score >= 0.5);
        assert!(hits.iter().enumerate().all(|(i, h)| h.rank == i + 1));
    }

    #[test]
    fn add_document_is_visible_at_once() {
        let mut records = corpus();
        let extra = records.pop().unwrap();
        let mut ix = build(&records);
        let e = HashingEmbedder::new(128);
        let v0 = ix.version();
        assert_eq!(ix.add_document(&extra, &e).unwrap(), v0 + 1);
        let hits = ix.search("pimples puberty mein", &e, &JaccardScorer::default()).unwrap();
        assert_eq!(hits[0].record_id, "r5");
        assert!(matches!(ix.add_document(&extra, &e), Err(RetrievalError::DuplicateDoc(_))));
        assert_eq!(ix.version(), v0 + 1);
    }

    #[test]
    fn add_to_empty_index() {
        let e = HashingEmbedder::new(16);
        let mut ix = HybridIndex::new(HybridConfig::default(), Tokenizer::default(), 16, e.provider_id());
        ix.add_document(&QARecord::published("a", "kya", "haan"), &e).unwrap();
        assert_eq!(ix.sparse().doc_count(), 1);
    }

    #[test]
    fn drafts_are_refused() {
        let mut r = QARecord::published("x", "q", "a");
        r.status = RecordStatus::Draft;
        let e = HashingEmbedder::new(16);
        let mut ix = HybridIndex::new(HybridConfig::default(), Tokenizer::default(), 16, e.provider_id());
        assert!(matches!(ix.add_document(&r, &e), Err(RetrievalError::NotPublished(_))));
    }

    #[test]
    fn foreign_embedder_is_refused() {
        let ix = build(&corpus());
        let other = HashingEmbedder::new(64);
        assert!(matches!(
            ix.search("condom", &other, &JaccardScorer::default()),
            Err(RetrievalError::ProviderMismatch { .. })
        ));
    }

    #[test]
    fn fused_lists_stay_rank_valid() {
        let ix = build(&corpus());
        let e = HashingEmbedder::new(128);
        let s = ix.sparse().search(&ix.sparse().tokenizer().tokenize("condom use"), 10);
        let d = ix.dense().search(&embed("condom use", &e).unwrap(), 10).unwrap();
        assert!(is_rank_valid(&s) && is_rank_valid(&d));
        assert!(is_rank_valid(&fuse_rrf(&s, &d, 60, 10)));
    }

    #[test]
    fn calibration_preconditions() {
        let ix = build(&corpus());
        let e = HashingEmbedder::new(128);
        let j = JaccardScorer::default();
        assert_eq!(ix.calibrate(&[], &e, &j), Err(RetrievalError::EmptyHoldout));
        let bad = [("x".into(), "g-missing".into())];
        assert!(matches!(ix.calibrate(&bad, &e, &j), Err(RetrievalError::GroupNotIndexed(_))));
    }

    #[test]
    fn dump_round_trips() {
        let ix = build(&corpus());
        let json = serde_json::to_string(&ix).unwrap();
        let back: HybridIndex = serde_json::from_str(&json).unwrap();
        assert_eq!(back, ix);
    }
}
