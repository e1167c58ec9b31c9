//! Text-similarity metrics, judge polling, query noise and the retrieval
//! evaluation loop.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::guardrails::{grounding_recall_with, DEFAULT_GROUNDING_THRESHOLD};
use crate::provider::{dot, normalize, Embedder, ProviderError};
use crate::retrieval::{decide_relevance, HybridIndex, PairScorer, RetrievalError};
use crate::text::{tokenize, Tokenizer, CONTENT_STOPWORDS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub value: f64,
    pub per_item: Vec<(String, f64)>,
    pub config: BTreeMap<String, String>,
}

impl MetricReport {
    /// Mean of the per-item values (0 for no items).
    pub fn mean(metric: &str, per_item: Vec<(String, f64)>, config: BTreeMap<String, String>) -> Self {
        Self {
            metric: metric.into(),
            value: mean(per_item.iter().map(|(_, v)| *v)),
            per_item,
            config,
        }
    }
}

pub fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn new(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self { precision, recall, f1 }
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<&[String], usize> {
    let mut m = BTreeMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

pub const DEFAULT_BLEU_ORDER: usize = 4;

/// Sentence BLEU with clipped n-gram precision, add-one smoothing for
/// n ≥ 2, and the brevity penalty against the closest reference length
/// (shorter wins ties).
pub fn bleu(candidate: &str, references: &[&str], max_n: usize) -> f64 {
    let cand = tokenize(candidate).into_inner();
    let refs: Vec<Vec<String>> = references.iter().map(|r| tokenize(r).into_inner()).collect();
    if cand.is_empty() || refs.iter().all(Vec::is_empty) || max_n == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let cand_counts = ngram_counts(&cand, n);
        let ref_counts: Vec<_> = refs.iter().map(|r| ngram_counts(r, n)).collect();
        let mut clipped = 0usize;
        let mut total = 0usize;
        for (gram, &c) in &cand_counts {
            let max_ref = ref_counts.iter().map(|m| m.get(gram).copied().unwrap_or(0)).max().unwrap_or(0);
            clipped += c.min(max_ref);
            total += c;
        }
        let p = if n == 1 {
            if clipped == 0 {
                return 0.0;
            }
            clipped as f64 / total as f64
        } else {
            (clipped + 1) as f64 / (total + 1) as f64
        };
        log_sum += libm::log(p);
    }
    let c = cand.len();
    let r = refs
        .iter()
        .map(Vec::len)
        .min_by_key(|&len| (len.abs_diff(c), len))
        .unwrap_or(0);
    let bp = if c < r { libm::exp(1.0 - r as f64 / c as f64) } else { 1.0 };
    (bp * libm::exp(log_sum / max_n as f64)).clamp(0.0, 1.0)
}

pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = alloc::vec![0usize; b.len() + 1];
    let mut cur = alloc::vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L over tokens with β = 1.
pub fn rouge_l(candidate: &str, reference: &str) -> Prf {
    let c = tokenize(candidate).into_inner();
    let r = tokenize(reference).into_inner();
    if c.is_empty() || r.is_empty() {
        return Prf::default();
    }
    let l = lcs_len(&c, &r) as f64;
    Prf::new(l / c.len() as f64, l / r.len() as f64)
}

/// Greedy-matching BERTScore without IDF weighting. Each token is embedded
/// on its own; per-token best cosines are clamped into `[0, 1]`.
pub fn bert_score(candidate: &str, reference: &str, embedder: &dyn Embedder) -> Result<Prf, ProviderError> {
    let c = tokenize(candidate).into_inner();
    let r = tokenize(reference).into_inner();
    if c.is_empty() || r.is_empty() {
        return Ok(Prf::default());
    }
    let embed_all = |toks: &[String]| -> Result<Vec<Vec<f64>>, ProviderError> {
        let texts: Vec<&str> = toks.iter().map(String::as_str).collect();
        let mut vs = embedder.embed_batch(&texts)?;
        if vs.len() != toks.len() {
            return Err(ProviderError::Malformed(alloc::format!(
                "expected {} vectors, got {}",
                toks.len(),
                vs.len()
            )));
        }
        for v in &mut vs {
            normalize(v);
        }
        Ok(vs)
    };
    let ce = embed_all(&c)?;
    let re = embed_all(&r)?;
    let best = |from: &[Vec<f64>], to: &[Vec<f64>]| {
        mean(from.iter().map(|x| {
            to.iter()
                .map(|y| dot(x, y))
                .fold(f64::NEG_INFINITY, f64::max)
                .clamp(0.0, 1.0)
        }))
    };
    Ok(Prf::new(best(&ce, &re), best(&re, &ce)))
}

/// Repeated judge verdicts. `true` means the judge found unsupported content.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgePoll {
    pub n: usize,
    pub verdicts: Vec<bool>,
    pub score: f64,
    /// Set when some polls failed; `score` then covers `verdicts` only.
    #[serde(default)]
    pub partial: bool,
}

impl JudgePoll {
    pub fn from_verdicts(n: usize, verdicts: Vec<bool>) -> Self {
        let yes = verdicts.iter().filter(|v| **v).count();
        let score = if verdicts.is_empty() { 0.0 } else { yes as f64 / verdicts.len() as f64 };
        Self {
            n,
            partial: verdicts.len() < n,
            verdicts,
            score,
        }
    }
}

pub const JUDGE_QUESTION: &str =
    "Does the response assert any content that is absent from the context? Answer yes or no.";

pub trait Judge: Send + Sync {
    fn judge_id(&self) -> &str;

    /// One poll; `poll` is the 0-based poll index.
    fn judge(&self, response: &str, context: &[&str], poll: usize) -> Result<bool, ProviderError>;
}

/// Offline judge: says "yes" when lexical grounding recall falls below the
/// grounding threshold. Every poll agrees.
#[derive(Debug, Clone)]
pub struct LexicalJudge {
    tokenizer: Tokenizer,
    threshold: f64,
}

impl Default for LexicalJudge {
    fn default() -> Self {
        Self {
            tokenizer: Tokenizer::with_stopwords(CONTENT_STOPWORDS.iter().copied()),
            threshold: DEFAULT_GROUNDING_THRESHOLD,
        }
    }
}

impl Judge for LexicalJudge {
    fn judge_id(&self) -> &str {
        "mock-lexical"
    }

    fn judge(&self, response: &str, context: &[&str], _poll: usize) -> Result<bool, ProviderError> {
        Ok(grounding_recall_with(&self.tokenizer, response, context) < self.threshold)
    }
}

pub const DEFAULT_POLLS: usize = 5;

/// Poll the judge `n` times. Failed polls are skipped and mark the result
/// partial.
pub fn chainpoll_hallucination(response: &str, context: &[&str], judge: &dyn Judge, n: usize) -> JudgePoll {
    let verdicts = (0..n).filter_map(|i| judge.judge(response, context, i).ok()).collect();
    JudgePoll::from_verdicts(n, verdicts)
}

/// Character noise: each character independently, with probability `p`,
/// is swapped with its successor, dropped, or duplicated (equally likely).
pub fn inject_noise(text: &str, p: f64, rng: &mut ChaCha8Rng) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len() + 8);
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if p > 0.0 && rng.random_bool(p.clamp(0.0, 1.0)) {
            match rng.random_range(0..3u8) {
                0 if i + 1 < chars.len() => {
                    out.push(chars[i + 1]);
                    out.push(c);
                    i += 2;
                    continue;
                }
                0 => out.push(c),
                1 => {}
                _ => {
                    out.push(c);
                    out.push(c);
                }
            }
        } else {
            out.push(c);
        }
        i += 1;
    }
    out
}

/// Noisy copies of `queries`, reproducible from `seed`.
pub fn noisy_queries(queries: &[&str], p: f64, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    queries.iter().map(|q| inject_noise(q, p, &mut rng)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalItem {
    pub query: String,
    pub group_id: String,
    pub top1_in_group: bool,
    /// 1-based rank of the first in-group hit within the top `k`.
    pub first_in_group_rank: Option<usize>,
    pub top_score: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub top1_group_accuracy: f64,
    pub mrr: f64,
    pub acceptance_rate_at_tau: f64,
    pub tau: f64,
    pub k: usize,
    pub items: Vec<RetrievalItem>,
}

/// Search each held-out `(query, group_id)` against `index` and score the
/// ranking by group membership.
pub fn retrieval_eval(
    holdout: &[(String, String)],
    index: &HybridIndex,
    embedder: &dyn Embedder,
    scorer: &dyn PairScorer,
    k: usize,
    tau: f64,
) -> Result<RetrievalReport, RetrievalError> {
    if holdout.is_empty() {
        return Err(RetrievalError::EmptyHoldout);
    }
    let mut items = Vec::with_capacity(holdout.len());
    for (query, group) in holdout {
        let hits = index.search(query, embedder, scorer)?;
        let top = &hits[..hits.len().min(k)];
        let first = top
            .iter()
            .position(|h| index.group_of(&h.record_id) == Some(group.as_str()))
            .map(|i| i + 1);
        let decision = decide_relevance(&hits, tau);
        items.push(RetrievalItem {
            query: query.clone(),
            group_id: group.clone(),
            top1_in_group: first == Some(1),
            first_in_group_rank: first,
            top_score: decision.top_score,
            accepted: decision.accepted,
        });
    }
    Ok(summarize(items, k, tau))
}

pub fn summarize(items: Vec<RetrievalItem>, k: usize, tau: f64) -> RetrievalReport {
    let n = items.len().max(1) as f64;
    let acc = items.iter().filter(|i| i.top1_in_group).count() as f64 / n;
    let mrr = items
        .iter()
        .map(|i| i.first_in_group_rank.map_or(0.0, |r| 1.0 / r as f64))
        .sum::<f64>()
        / n;
    let accepted = items.iter().filter(|i| i.accepted).count() as f64 / n;
    RetrievalReport {
        top1_group_accuracy: acc,
        mrr,
        acceptance_rate_at_tau: accepted,
        tau,
        k,
        items,
    }
}
