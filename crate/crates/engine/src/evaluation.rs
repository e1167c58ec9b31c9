//! Evaluation suites: text similarity, hallucination polling, retrieval
//! generalisability, robustness to noise, scalability, and per-theme route
//! tables. Reports are plain JSON documents.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use guardqa_core::corpus::{holdout_split, QARecord, SplitError};
use guardqa_core::metrics::{
    bert_score, bleu, chainpoll_hallucination, noisy_queries, retrieval_eval, rouge_l, Judge, MetricReport,
    RetrievalReport, DEFAULT_BLEU_ORDER,
};
use guardqa_core::provider::{embed, normalize, Embedder, ProviderError};
use guardqa_core::retrieval::sparse::{idf, term_weight};
use guardqa_core::retrieval::{Bm25Params, HybridConfig, HybridIndex, JaccardScorer, RetrievalError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::pipeline::{index_tokenizer, AskRequest, Engine, RouteTaken};
use crate::synthetic::{self, SyntheticSpec};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error("noise level {0} is outside [0, 0.3]")]
    NoiseLevel(f64),
    #[error("bad input line {line}: {message}")]
    Input { line: usize, message: String },
    #[error("thread pool: {0}")]
    Pool(String),
}

/// Run `f` on a pool of `threads` workers.
pub fn with_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T, EvalError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| EvalError::Pool(e.to_string()))?;
    Ok(pool.install(f))
}

fn cfg(pairs: &[(&str, String)]) -> BTreeMap<String, String> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextItem {
    pub id: String,
    pub candidate: String,
    pub references: Vec<String>,
}

pub fn parse_text_items(jsonl: &str) -> Result<Vec<TextItem>, EvalError> {
    jsonl
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| EvalError::Input {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// BLEU, ROUGE-L F1 and BERTScore F1 per item, each averaged.
pub fn text_suite(items: &[TextItem], embedder: &dyn Embedder) -> Result<Vec<MetricReport>, EvalError> {
    let rows: Vec<(String, f64, f64, Result<f64, ProviderError>)> = items
        .par_iter()
        .map(|it| {
            let refs: Vec<&str> = it.references.iter().map(String::as_str).collect();
            let b = bleu(&it.candidate, &refs, DEFAULT_BLEU_ORDER);
            let r = refs.iter().map(|r| rouge_l(&it.candidate, r).f1).fold(0.0, f64::max);
            let mut best = Ok(0.0);
            for r in &refs {
                match bert_score(&it.candidate, r, embedder) {
                    Ok(p) => best = best.map(|b: f64| b.max(p.f1)),
                    Err(e) => {
                        best = Err(e);
                        break;
                    }
                }
            }
            (it.id.clone(), b, r, best)
        })
        .collect();
    let mut bleu_items = Vec::new();
    let mut rouge_items = Vec::new();
    let mut bert_items = Vec::new();
    for (id, b, r, bs) in rows {
        bleu_items.push((id.clone(), b));
        rouge_items.push((id.clone(), r));
        bert_items.push((id, bs?));
    }
    for v in [&mut bleu_items, &mut rouge_items, &mut bert_items] {
        v.sort_by(|a, b| a.0.cmp(&b.0));
    }
    Ok(vec![
        MetricReport::mean(
            "bleu",
            bleu_items,
            cfg(&[("max_n", DEFAULT_BLEU_ORDER.to_string()), ("smoothing", "add-1 for n>=2".into())]),
        ),
        MetricReport::mean("rouge_l_f1", rouge_items, cfg(&[("beta", "1".into())])),
        MetricReport::mean(
            "bert_score_f1",
            bert_items,
            cfg(&[("embedder", embedder.provider_id().into()), ("idf", "none".into())]),
        ),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingItem {
    pub id: String,
    pub response: String,
    pub context: Vec<String>,
}

/// Hallucination score per item: the fraction of judge polls answering yes.
pub fn hallucination_suite(items: &[GroundingItem], judge: &dyn Judge, polls: usize) -> MetricReport {
    let mut per: Vec<(String, f64)> = items
        .par_iter()
        .map(|it| {
            let ctx: Vec<&str> = it.context.iter().map(String::as_str).collect();
            (it.id.clone(), chainpoll_hallucination(&it.response, &ctx, judge, polls).score)
        })
        .collect();
    per.sort_by(|a, b| a.0.cmp(&b.0));
    MetricReport::mean(
        "hallucination",
        per,
        cfg(&[("judge", judge.judge_id().into()), ("polls", polls.to_string())]),
    )
}

pub fn build_index(records: &[QARecord], embedder: &dyn Embedder, dimension: usize) -> Result<HybridIndex, RetrievalError> {
    HybridIndex::build(records, HybridConfig::default(), index_tokenizer(), embedder, dimension)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralisationReport {
    pub seed: u64,
    pub fraction: f64,
    pub train_size: usize,
    pub holdout_size: usize,
    pub retrieval: RetrievalReport,
}

/// Hold out part of every paraphrase group, index the rest, and score the
/// held-out questions against it.
pub fn retrieval_suite(
    records: &[QARecord],
    seed: u64,
    fraction: f64,
    embedder: &dyn Embedder,
    dimension: usize,
    tau: f64,
) -> Result<GeneralisationReport, EvalError> {
    let split = holdout_split(records, seed, fraction)?;
    let by_id: BTreeMap<&str, &QARecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
    let train: Vec<QARecord> = split.train.iter().map(|id| by_id[id.as_str()].clone()).collect();
    let holdout: Vec<(String, String)> = split
        .held_out
        .iter()
        .map(|id| {
            let r = by_id[id.as_str()];
            (r.sanitized_question.clone(), r.group_id.clone())
        })
        .collect();
    let index = build_index(&train, embedder, dimension)?;
    let scorer = JaccardScorer::new(index_tokenizer());
    let k = index.config().top_k;
    let report = retrieval_eval(&holdout, &index, embedder, &scorer, k, tau)?;
    Ok(GeneralisationReport {
        seed,
        fraction,
        train_size: train.len(),
        holdout_size: holdout.len(),
        retrieval: report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooReport {
    pub queries: usize,
    pub top1_group_accuracy: f64,
    /// Records whose rank-1 hit was outside their group.
    pub misses: Vec<String>,
}

/// Leave-one-paraphrase-out: each member of a multi-member group is
/// searched against an index of every other record.
pub fn leave_one_out(records: &[QARecord], embedder: &dyn Embedder, dimension: usize) -> Result<LooReport, EvalError> {
    let mut sizes: BTreeMap<&str, usize> = BTreeMap::new();
    for r in records {
        *sizes.entry(&r.group_id).or_default() += 1;
    }
    let scorer = JaccardScorer::new(index_tokenizer());
    let probes: Vec<usize> = (0..records.len()).filter(|&i| sizes[records[i].group_id.as_str()] > 1).collect();
    let outcomes: Result<Vec<(String, bool)>, RetrievalError> = probes
        .par_iter()
        .map(|&i| {
            let rest: Vec<QARecord> = records
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, r)| r.clone())
                .collect();
            let index = build_index(&rest, embedder, dimension)?;
            let q = &records[i];
            let hits = index.search(&q.sanitized_question, embedder, &scorer)?;
            let ok = hits.first().and_then(|h| index.group_of(&h.record_id)) == Some(q.group_id.as_str());
            Ok((q.id.clone(), ok))
        })
        .collect();
    let outcomes = outcomes?;
    let hits = outcomes.iter().filter(|(_, ok)| *ok).count();
    let mut misses: Vec<String> = outcomes.into_iter().filter(|(_, ok)| !ok).map(|(id, _)| id).collect();
    misses.sort();
    Ok(LooReport {
        queries: probes.len(),
        top1_group_accuracy: if probes.is_empty() { 0.0 } else { hits as f64 / probes.len() as f64 },
        misses,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub noise: f64,
    pub seed: u64,
    pub clean_accuracy: f64,
    pub noisy_accuracy: f64,
    /// `noisy − clean`.
    pub delta: f64,
    pub noisy_queries: Vec<String>,
}

pub fn robustness_suite(
    holdout: &[(String, String)],
    index: &HybridIndex,
    embedder: &dyn Embedder,
    p: f64,
    seed: u64,
    tau: f64,
) -> Result<RobustnessReport, EvalError> {
    if !(0.0..=0.3).contains(&p) {
        return Err(EvalError::NoiseLevel(p));
    }
    let scorer = JaccardScorer::new(index_tokenizer());
    let k = index.config().top_k;
    let clean = retrieval_eval(holdout, index, embedder, &scorer, k, tau)?;
    let queries: Vec<&str> = holdout.iter().map(|(q, _)| q.as_str()).collect();
    let noisy = noisy_queries(&queries, p, seed);
    let noisy_holdout: Vec<(String, String)> = noisy
        .iter()
        .zip(holdout)
        .map(|(q, (_, g))| (q.clone(), g.clone()))
        .collect();
    let dirty = retrieval_eval(&noisy_holdout, index, embedder, &scorer, k, tau)?;
    Ok(RobustnessReport {
        noise: p,
        seed,
        clean_accuracy: clean.top1_group_accuracy,
        noisy_accuracy: dirty.top1_group_accuracy,
        delta: dirty.top1_group_accuracy - clean.top1_group_accuracy,
        noisy_queries: noisy,
    })
}

/// Brute-force BM25 over raw token lists: every document, every query
/// token, straight from the formula. Sorted by score then id.
pub fn bm25_oracle(docs: &[(String, Vec<String>)], query: &[String], params: Bm25Params) -> Vec<(String, f64)> {
    let n = docs.len();
    if n == 0 {
        return Vec::new();
    }
    let avg = docs.iter().map(|(_, t)| t.len() as f64).sum::<f64>() / n as f64;
    let df: BTreeMap<&str, usize> = query
        .iter()
        .map(|q| (q.as_str(), docs.iter().filter(|(_, t)| t.contains(q)).count()))
        .collect();
    let mut out = Vec::new();
    for (id, toks) in docs {
        let mut score = 0.0;
        for q in query {
            let tf = toks.iter().filter(|t| *t == q).count();
            if tf == 0 {
                continue;
            }
            let df = df[q.as_str()];
            score += idf(n, df) * term_weight(params, tf as f64, toks.len() as f64, avg);
        }
        if score > 0.0 {
            out.push((id.clone(), score));
        }
    }
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}

/// Brute-force cosine between the query and every document vector, as the
/// provider returned it.
pub fn cosine_oracle(
    docs: &[(String, Vec<f64>)],
    query: &str,
    embedder: &dyn Embedder,
) -> Result<Vec<(String, f64)>, RetrievalError> {
    let mut q = embed(query, embedder)?;
    normalize(&mut q);
    let mut out = Vec::new();
    for (id, v) in docs {
        let mut v = v.clone();
        if !normalize(&mut v) {
            continue;
        }
        let s: f64 = q.iter().zip(&v).map(|(a, b)| a * b).sum();
        if s > 0.0 {
            out.push((id.clone(), s.min(1.0)));
        }
    }
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(out)
}

/// Check a truncated ranking against the full oracle ranking: the first
/// `got.len()` oracle scores match position by position within `tol`, every
/// returned id carries its oracle score, and nothing positive was cut short.
/// Near-ties may swap ids across the cut, so ids are not compared by position.
pub fn rankings_agree(got: &[(String, f64)], oracle: &[(String, f64)], depth: usize, tol: f64) -> bool {
    if got.len() != oracle.len().min(depth) {
        return false;
    }
    let by_id: BTreeMap<&str, f64> = oracle.iter().map(|(i, s)| (i.as_str(), *s)).collect();
    got.iter().zip(oracle).all(|((gi, gs), (_, ws))| {
        (gs - ws).abs() <= tol && by_id.get(gi.as_str()).is_some_and(|s| (s - gs).abs() <= tol)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalePoint {
    pub docs: usize,
    pub build_ms: f64,
    pub queries: usize,
    pub p50_search_ms: f64,
    pub p95_search_ms: f64,
    pub oracle_checks: usize,
    pub oracle_passed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalabilityReport {
    pub seed: u64,
    pub points: Vec<ScalePoint>,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Build an index per size, time `queries` searches run one at a time, and
/// spot-check `checks` of them against the brute-force oracles.
pub fn scalability_suite(
    sizes: &[usize],
    queries: usize,
    checks: usize,
    seed: u64,
    embedder: &dyn Embedder,
    dimension: usize,
) -> Result<ScalabilityReport, EvalError> {
    let mut points = Vec::new();
    for &size in sizes {
        let spec = SyntheticSpec::for_size(size, seed);
        let records = synthetic::generate(&spec);
        let t = Instant::now();
        let index = build_index(&records, embedder, dimension)?;
        let build_ms = t.elapsed().as_secs_f64() * 1e3;
        let scorer = JaccardScorer::new(index_tokenizer());
        let probes = synthetic::probe_queries(&spec, queries, seed ^ size as u64);
        let mut lat = Vec::with_capacity(probes.len());
        for (q, _) in &probes {
            let t = Instant::now();
            index.search(q, embedder, &scorer)?;
            lat.push(t.elapsed().as_secs_f64() * 1e3);
        }
        lat.sort_by(f64::total_cmp);
        let depth = index.config().candidates.max(index.config().top_k);
        let tok = index_tokenizer();
        let docs_tokens: Vec<(String, Vec<String>)> = records
            .iter()
            .map(|r| (r.id.clone(), tok.tokenize(&r.sanitized_question).into_inner()))
            .collect();
        let docs_vec: Vec<(String, Vec<f64>)> = records
            .par_iter()
            .map(|r| Ok((r.id.clone(), embed(&r.sanitized_question, embedder)?)))
            .collect::<Result<_, ProviderError>>()?;
        let step = (probes.len() / checks.max(1)).max(1);
        let sampled: Vec<&(String, String)> = probes.iter().step_by(step).take(checks).collect();
        let passed: Result<Vec<bool>, RetrievalError> = sampled
            .par_iter()
            .map(|(q, _)| {
                let qt = tok.tokenize(q);
                let got: Vec<(String, f64)> = index
                    .sparse()
                    .search(&qt, depth)
                    .into_iter()
                    .map(|h| (h.record_id, h.sparse_score))
                    .collect();
                let want = bm25_oracle(&docs_tokens, &qt.into_inner(), index.sparse().params());
                let mut qv = embed(q, embedder)?;
                normalize(&mut qv);
                let got_dense: Vec<(String, f64)> = index
                    .dense()
                    .search(&qv, depth)?
                    .into_iter()
                    .map(|h| (h.record_id, h.dense_score))
                    .collect();
                let want_dense = cosine_oracle(&docs_vec, q, embedder)?;
                let sparse_ok = rankings_agree(&got, &want, depth, 1e-9);
                let dense_ok = rankings_agree(&got_dense, &want_dense, depth, 1e-9);
                if !(sparse_ok && dense_ok) {
                    tracing::warn!(sparse_ok, dense_ok, "oracle disagreement");
                }
                Ok(sparse_ok && dense_ok)
            })
            .collect();
        let passed = passed?;
        points.push(ScalePoint {
            docs: records.len(),
            build_ms,
            queries: probes.len(),
            p50_search_ms: percentile(&lat, 0.50),
            p95_search_ms: percentile(&lat, 0.95),
            oracle_checks: passed.len(),
            oracle_passed: passed.iter().filter(|p| **p).count(),
        });
    }
    Ok(ScalabilityReport { seed, points })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ThemeRates {
    pub asked: usize,
    pub retrieval: usize,
    pub generation: usize,
    pub refusal: usize,
    pub escalated: usize,
    pub error: usize,
    pub answer_rate: f64,
    pub refusal_rate: f64,
}

/// Route counts per theme, for a human to inspect for skew.
pub fn bias_table(engine: &Engine, queries: &[(String, String)]) -> BTreeMap<String, ThemeRates> {
    let routes: Vec<(String, RouteTaken)> = queries
        .par_iter()
        .map(|(theme, q)| (theme.clone(), engine.answer(&AskRequest::text(q)).route_taken))
        .collect();
    let mut table: BTreeMap<String, ThemeRates> = BTreeMap::new();
    for (theme, route) in routes {
        let row = table.entry(theme).or_default();
        row.asked += 1;
        match route {
            RouteTaken::Retrieval => row.retrieval += 1,
            RouteTaken::Generation => row.generation += 1,
            RouteTaken::Refusal => row.refusal += 1,
            RouteTaken::Escalated => row.escalated += 1,
            RouteTaken::Error => row.error += 1,
        }
    }
    for row in table.values_mut() {
        row.answer_rate = (row.retrieval + row.generation) as f64 / row.asked as f64;
        row.refusal_rate = row.refusal as f64 / row.asked as f64;
    }
    table
}

/// Distinct themes in a record set, for table headers.
pub fn themes(records: &[QARecord]) -> BTreeSet<&str> {
    records.iter().map(|r| r.theme.as_str()).collect()
}
