//! Reciprocal Rank Fusion and pair-scorer re-ranking.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use super::{renumber, sort_hits, RetrievalHit};
use crate::provider::ProviderError;
use crate::text::Tokenizer;

pub const DEFAULT_RRF_C: u32 = 60;

/// `fused(d) = Σ_{lists ∋ d} 1 / (c + rank(d))`, top `k`, ties by id.
/// Channel scores are carried over from the input lists.
pub fn fuse_rrf(sparse: &[RetrievalHit], dense: &[RetrievalHit], c: u32, k: usize) -> Vec<RetrievalHit> {
    let mut merged: BTreeMap<&str, RetrievalHit> = BTreeMap::new();
    let c = c as f64;
    for h in sparse {
        let e = merged
            .entry(h.record_id.as_str())
            .or_insert_with(|| blank(&h.record_id));
        e.sparse_score = h.sparse_score;
        e.fused_score += 1.0 / (c + h.rank as f64);
    }
    for h in dense {
        let e = merged
            .entry(h.record_id.as_str())
            .or_insert_with(|| blank(&h.record_id));
        e.dense_score = h.dense_score;
        e.fused_score += 1.0 / (c + h.rank as f64);
    }
    let mut out: Vec<RetrievalHit> = merged
        .into_values()
        .map(|mut h| {
            h.final_score = h.fused_score;
            h
        })
        .collect();
    sort_hits(&mut out);
    out.truncate(k);
    out
}

fn blank(id: &str) -> RetrievalHit {
    RetrievalHit {
        record_id: id.into(),
        sparse_score: 0.0,
        dense_score: 0.0,
        fused_score: 0.0,
        final_score: 0.0,
        rank: 0,
        rerank_fallback: false,
    }
}

/// Scores how well a document answers a query, in `[0, 1]`.
pub trait PairScorer: Send + Sync {
    fn score(&self, query: &str, doc: &str) -> Result<f64, ProviderError>;
}

/// Token-set Jaccard similarity. Two empty sets score 0.
#[derive(Debug, Clone, Default)]
pub struct JaccardScorer {
    tokenizer: Tokenizer,
}

impl JaccardScorer {
    pub fn new(tokenizer: Tokenizer) -> Self {
        Self { tokenizer }
    }

    pub fn similarity(&self, a: &str, b: &str) -> f64 {
        let ta = self.tokenizer.tokenize(a);
        let tb = self.tokenizer.tokenize(b);
        let (sa, sb) = (ta.term_set(), tb.term_set());
        let union = sa.union(&sb).count();
        if union == 0 {
            return 0.0;
        }
        sa.intersection(&sb).count() as f64 / union as f64
    }
}

impl PairScorer for JaccardScorer {
    fn score(&self, query: &str, doc: &str) -> Result<f64, ProviderError> {
        Ok(self.similarity(query, doc))
    }
}

/// Min-max scale to `[0, 1]`; a constant list maps to 0.5 everywhere.
pub fn min_max(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi.partial_cmp(&lo) != Some(core::cmp::Ordering::Greater) {
        return alloc::vec![0.5; values.len()];
    }
    values.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

/// Blend the normalized fused score with a pair scorer:
/// `final = w·minmax(fused) + (1 − w)·scorer(query, doc)`, then re-sort.
/// `hits` must be in fused order. If the scorer fails on any hit the fused
/// order is kept, `final_score` is the normalized fused score, and every
/// hit is flagged `rerank_fallback`.
pub fn rerank<'a>(
    query: &str,
    mut hits: Vec<RetrievalHit>,
    doc_text: impl Fn(&str) -> Option<&'a str>,
    scorer: &dyn PairScorer,
    weight: f64,
) -> Vec<RetrievalHit> {
    if hits.is_empty() {
        return hits;
    }
    let w = weight.clamp(0.0, 1.0);
    let fused: Vec<f64> = hits.iter().map(|h| h.fused_score).collect();
    let norm = min_max(&fused);

    let mut pair_scores = Vec::with_capacity(hits.len());
    let mut failed = false;
    if w < 1.0 {
        for h in &hits {
            let text = doc_text(&h.record_id).unwrap_or("");
            match scorer.score(query, text) {
                Ok(s) if s.is_finite() => pair_scores.push(s.clamp(0.0, 1.0)),
                _ => {
                    failed = true;
                    break;
                }
            }
        }
    }

    if failed {
        for (h, n) in hits.iter_mut().zip(&norm) {
            h.final_score = *n;
            h.rerank_fallback = true;
        }
        return hits;
    }
    for (i, h) in hits.iter_mut().enumerate() {
        let pair = pair_scores.get(i).copied().unwrap_or(0.0);
        h.final_score = w * norm[i] + (1.0 - w) * pair;
    }
    // stable: equal final scores keep the fused order
    hits.sort_by(|a, b| b.final_score.partial_cmp(&a.final_score).unwrap_or(core::cmp::Ordering::Equal));
    renumber(&mut hits);
    hits
}

/// Text lookup helper for callers holding `(id, text)` pairs.
pub fn text_lookup<'a>(pairs: &'a [(String, String)]) -> impl Fn(&str) -> Option<&'a str> + 'a {
    move |id| pairs.iter().find(|(i, _)| i == id).map(|(_, t)| t.as_str())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::{ids, is_rank_valid};
    use alloc::string::ToString;
    use alloc::vec;

    fn list(ids: &[&str]) -> Vec<RetrievalHit> {
        let mut hits: Vec<RetrievalHit> = ids
            .iter()
            .enumerate()
            .map(|(i, id)| RetrievalHit::sparse(id, 10.0 - i as f64))
            .collect();
        renumber(&mut hits);
        hits
    }

    #[test]
    fn identical_rankings_keep_their_order() {
        let a = list(&["d3", "d1", "d2"]);
        let fused = fuse_rrf(&a, &a, 60, 10);
        assert_eq!(ids(&fused), vec!["d3", "d1", "d2"]);
        assert!(is_rank_valid(&fused));
    }

    #[test]
    fn two_appearances_beat_one_top_rank() {
        let sparse = list(&["d", "e"]);
        let dense = list(&["x", "e"]);
        let fused = fuse_rrf(&sparse, &dense, 60, 10);
        let score = |id: &str| fused.iter().find(|h| h.record_id == id).unwrap().fused_score;
        assert!((score("e") - 2.0 / 62.0).abs() < 1e-15);
        assert!((score("d") - 1.0 / 61.0).abs() < 1e-15);
        assert_eq!(fused[0].record_id, "e");
    }

    #[test]
    fn one_empty_list_passes_the_other_through() {
        let a = list(&["b", "a", "c"]);
        assert_eq!(ids(&fuse_rrf(&a, &[], 60, 10)), vec!["b", "a", "c"]);
        assert_eq!(ids(&fuse_rrf(&[], &a, 60, 10)), vec!["b", "a", "c"]);
    }

    #[test]
    fn constant_list_normalizes_to_half() {
        assert_eq!(min_max(&[3.0, 3.0]), vec![0.5, 0.5]);
        assert_eq!(min_max(&[1.0, 3.0, 2.0]), vec![0.0, 1.0, 0.5]);
    }

    #[test]
    fn full_weight_keeps_fused_order() {
        let hits = fuse_rrf(&list(&["a", "b", "c"]), &list(&["c", "b", "a"]), 60, 10);
        let before = ids(&hits).into_iter().map(String::from).collect::<Vec<_>>();
        let out = rerank("q", hits, |_| Some("zzz"), &JaccardScorer::default(), 1.0);
        assert_eq!(ids(&out), before.iter().map(String::as_str).collect::<Vec<_>>());
    }

    #[test]
    fn single_hit_is_well_defined() {
        let out = rerank("kya", list(&["a"]), |_| Some("kya hai"), &JaccardScorer::default(), 0.3);
        assert_eq!(out.len(), 1);
        // 0.3 * 0.5 + 0.7 * (1/2)
        assert!((out[0].final_score - 0.5).abs() < 1e-12);
    }

    #[test]
    fn jaccard_fixture() {
        // hand counts over token sets
        let j = JaccardScorer::default();
        assert!((j.similarity("is condom safe", "is condom safe") - 1.0).abs() < 1e-15);
        assert!((j.similarity("is condom safe", "condom price") - 1.0 / 4.0).abs() < 1e-15);
        assert!((j.similarity("periods late kyon", "periods late hone ka karan") - 2.0 / 6.0).abs() < 1e-15);
        assert_eq!(j.similarity("", ""), 0.0);
    }

    #[test]
    fn jaccard_reorders_fused_hits() {
        let docs = [
            ("a".to_string(), "condom price".to_string()),
            ("b".to_string(), "periods late kyon".to_string()),
            ("c".to_string(), "is condom safe".to_string()),
        ];
        let hits = list(&["a", "b", "c"]);
        let out = rerank("is condom safe", hits, text_lookup(&docs), &JaccardScorer::default(), 0.3);
        // norm fused: a=1, b=0.5, c=0; jaccard: a=1/4, b=0, c=1
        // final: a=0.3+0.175=0.475, b=0.15, c=0.7
        assert_eq!(ids(&out), vec!["c", "a", "b"]);
        assert!((out[0].final_score - 0.7).abs() < 1e-12);
        assert!((out[1].final_score - 0.475).abs() < 1e-12);
        assert!((out[2].final_score - 0.15).abs() < 1e-12);
    }

    struct Broken;
    impl PairScorer for Broken {
        fn score(&self, _: &str, _: &str) -> Result<f64, ProviderError> {
            Err(ProviderError::Timeout)
        }
    }

    #[test]
    fn scorer_failure_falls_back_to_fused_order() {
        let out = rerank("q", list(&["a", "b", "c"]), |_| Some("x"), &Broken, 0.3);
        assert_eq!(ids(&out), vec!["a", "b", "c"]);
        assert!(out.iter().all(|h| h.rerank_fallback));
        assert_eq!(out[0].final_score, 1.0);
    }

    proptest::proptest! {
        // rank stability: any strictly monotone transform of one list's
        // scores leaves ranks, hence fused output, unchanged
        #[test]
        fn rrf_ignores_monotone_score_transforms(
            n in 1usize..12,
            m in 1usize..12,
            scale in 0.01f64..100.0,
            shift in -50.0f64..50.0,
        ) {
            let sparse: Vec<RetrievalHit> = list(&(0..n).map(|i| alloc::format!("s{i}")).collect::<Vec<_>>().iter().map(String::as_str).collect::<Vec<_>>());
            let dense = list(&(0..m).map(|i| alloc::format!("s{}", i * 2)).collect::<Vec<_>>().iter().map(String::as_str).collect::<Vec<_>>());
            let mut warped = sparse.clone();
            for h in &mut warped {
                h.sparse_score = libm::exp(h.sparse_score * scale / 100.0) + shift;
                h.fused_score = h.sparse_score;
            }
            let a = fuse_rrf(&sparse, &dense, 60, 50);
            let b = fuse_rrf(&warped, &dense, 60, 50);
            proptest::prop_assert_eq!(ids(&a), ids(&b));
        }
    }
}
