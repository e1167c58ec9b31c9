//! One PASS/FAIL line per acceptance criterion. Runs offline with mock
//! providers; exits nonzero if any criterion fails.

mod support;

use std::collections::BTreeMap;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use axum::body::Body;
use axum::http::{header, Request};
use chrono::DateTime;
use guardqa::config::ServiceConfig;
use guardqa::evaluation;
use guardqa::pipeline::{index_tokenizer, AskRequest, Engine, Provenance, RouteTaken};
use guardqa::providers::ProviderSet;
use guardqa::service::{router, AppState};
use guardqa::synthetic::{self, SyntheticSpec};
use guardqa_core::corpus::{group_id_for, QARecord, RecordSource, RecordStatus};
use guardqa_core::guardrails::Action;
use guardqa_core::metrics::{bert_score, bleu, rouge_l};
use guardqa_core::provider::{Embedder, HashingEmbedder};
use guardqa_core::retrieval::{
    calibrate_threshold, Bm25Params, HoldoutObservation, HybridConfig, HybridIndex, InvertedIndex, JaccardScorer,
};
use guardqa_core::sanitizer::{PiiKind, Sanitizer};
use guardqa_core::text::{TokenStream, Tokenizer};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::*;
use tower::ServiceExt;

type Outcome = Result<String, String>;
type Check = Box<dyn Fn() -> Outcome>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

// ---------------------------------------------------------------- log capture

#[derive(Clone, Default)]
struct LogBuffer(Arc<Mutex<Vec<u8>>>);

impl Write for LogBuffer {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.lock().unwrap().extend_from_slice(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

impl<'a> tracing_subscriber::fmt::MakeWriter<'a> for LogBuffer {
    type Writer = LogBuffer;

    fn make_writer(&'a self) -> Self::Writer {
        self.clone()
    }
}

impl LogBuffer {
    fn text(&self) -> String {
        String::from_utf8_lossy(&self.0.lock().unwrap()).into_owned()
    }
}

// -------------------------------------------------------------------- oracles

fn bm25_brute_force(docs: &[(String, Vec<String>)], query: &[String]) -> Vec<(String, f64)> {
    let (k1, b) = (1.2, 0.75);
    let n = docs.len() as f64;
    let avg = docs.iter().map(|(_, t)| t.len()).sum::<usize>() as f64 / n;
    let mut out: Vec<(String, f64)> = docs
        .iter()
        .filter_map(|(id, toks)| {
            let s: f64 = query
                .iter()
                .map(|q| {
                    let tf = toks.iter().filter(|t| *t == q).count() as f64;
                    if tf == 0.0 {
                        return 0.0;
                    }
                    let df = docs.iter().filter(|(_, t)| t.contains(q)).count() as f64;
                    let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
                    idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * toks.len() as f64 / avg))
                })
                .sum();
            (s > 0.0).then(|| (id.clone(), s))
        })
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}

fn exhaustive_threshold(obs: &[HoldoutObservation]) -> (f64, f64) {
    let n = obs.len() as f64;
    let mut best = (f64::INFINITY, 0.0);
    let candidates = obs.iter().map(|o| o.top_score).chain([f64::INFINITY]);
    for tau in candidates {
        let acc = obs.iter().filter(|o| o.top_score >= tau).count() as f64;
        let tp = obs.iter().filter(|o| o.top_score >= tau && o.in_group).count() as f64;
        let f1 = 2.0 * tp / (acc + n);
        if f1 > best.1 || (f1 == best.1 && tau > best.0) {
            best = (tau, f1);
        }
    }
    best
}

// ------------------------------------------------------------------ criteria

fn bm25_oracle_equivalence() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xB325);
    let (mut compared, mut tie_swaps) = (0, 0);
    for corpus in 0..20 {
        let vocab = rng.random_range(5..40);
        let n = rng.random_range(1..=100);
        let docs: Vec<(String, Vec<String>)> = (0..n)
            .map(|i| {
                let len = rng.random_range(1..=12);
                (format!("c{corpus}-d{i:03}"), (0..len).map(|_| format!("v{}", rng.random_range(0..vocab))).collect())
            })
            .collect();
        let joined: Vec<(String, String)> = docs.iter().map(|(i, t)| (i.clone(), t.join(" "))).collect();
        let index = InvertedIndex::from_documents(
            joined.iter().map(|(i, t)| (i.as_str(), t.as_str())),
            Bm25Params::default(),
            Tokenizer::new(),
        )
        .map_err(|e| e.to_string())?;
        for _ in 0..10 {
            let q: Vec<String> = (0..rng.random_range(1..=5)).map(|_| format!("v{}", rng.random_range(0..vocab + 3))).collect();
            let want = bm25_brute_force(&docs, &q);
            let got = index.search(&TokenStream::new(q.clone()), n);
            ensure!(got.len() == want.len(), "corpus {corpus} {q:?}: {} hits, oracle {}", got.len(), want.len());
            let oracle: BTreeMap<&str, f64> = want.iter().map(|(i, s)| (i.as_str(), *s)).collect();
            for (g, w) in got.iter().zip(&want) {
                ensure!((g.sparse_score - w.1).abs() <= 1e-9, "corpus {corpus}: {} vs {}", g.sparse_score, w.1);
                // positions may differ only inside a tie within tolerance
                let own = oracle.get(g.record_id.as_str()).copied().unwrap_or(f64::NAN);
                ensure!((own - w.1).abs() <= 1e-9, "corpus {corpus} {q:?}: {} out of order", g.record_id);
                if g.record_id != w.0 {
                    tie_swaps += 1;
                }
                compared += 1;
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    ensure!(secs < 10.0, "took {secs:.2}s");
    Ok(format!("20 corpora, {compared} ranked scores within 1e-9, {tie_swaps} swaps inside 1e-9 ties, {secs:.2}s"))
}

fn record(id: String, question: String, answer: &str) -> QARecord {
    QARecord {
        id,
        group_id: group_id_for(answer),
        caller_query_transcription: question.clone(),
        relevant_question: question.clone(),
        sanitized_question: question,
        answer: answer.into(),
        theme: "t".into(),
        sub_theme: "s".into(),
        language: "hi".into(),
        status: RecordStatus::Published,
        created_at: DateTime::UNIX_EPOCH,
        source: RecordSource::Ingest,
    }
}

fn incremental_equals_batch() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x1C4E);
    let e = HashingEmbedder::new(128);
    let scorer = JaccardScorer::new(index_tokenizer());
    for seq in 0..50 {
        let n = rng.random_range(1..=60);
        let records: Vec<QARecord> = (0..n)
            .map(|i| {
                let len = rng.random_range(1..=10);
                let q: Vec<String> = (0..len).map(|_| format!("w{}", rng.random_range(0..30))).collect();
                let answer = format!("answer {}", rng.random_range(0..12));
                record(format!("s{seq}-r{i:03}"), q.join(" "), &answer)
            })
            .collect();
        let batch = HybridIndex::build(&records, HybridConfig::default(), index_tokenizer(), &e, 128)
            .map_err(|err| err.to_string())?;
        let mut inc = HybridIndex::new(HybridConfig::default(), index_tokenizer(), 128, e.provider_id());
        for r in &records {
            inc.add_document(r, &e).map_err(|err| err.to_string())?;
        }
        let (bs, is) = (batch.sparse(), inc.sparse());
        ensure!(is.doc_count() == bs.doc_count(), "seq {seq}: doc count");
        ensure!(is.avg_doc_length() == bs.avg_doc_length(), "seq {seq}: avg length");
        ensure!(is.doc_lengths() == bs.doc_lengths(), "seq {seq}: lengths");
        let terms: Vec<&str> = bs.terms().collect();
        ensure!(is.terms().collect::<Vec<_>>() == terms, "seq {seq}: vocabulary");
        for t in terms {
            ensure!(is.postings(t) == bs.postings(t), "seq {seq}: postings for {t}");
            ensure!(is.doc_freq(t) == bs.doc_freq(t), "seq {seq}: df for {t}");
        }
        ensure!(inc.version() == batch.version() && inc.groups() == batch.groups(), "seq {seq}: version/groups");
        for p in 0..20 {
            let probe: Vec<String> = (0..rng.random_range(1..=6)).map(|_| format!("w{}", rng.random_range(0..32))).collect();
            let probe = probe.join(" ");
            let a = inc.search(&probe, &e, &scorer).map_err(|err| err.to_string())?;
            let b = batch.search(&probe, &e, &scorer).map_err(|err| err.to_string())?;
            ensure!(a.len() <= 10 && a == b, "seq {seq} probe {p}: top-10 differs");
        }
    }
    Ok("50 sequences, 20 probes each: postings, stats and top-10 identical".into())
}

fn calibration_oracle() -> Outcome {
    let obs = |v: &[(f64, bool)]| -> Vec<HoldoutObservation> {
        v.iter().map(|&(top_score, in_group)| HoldoutObservation { top_score, in_group }).collect()
    };
    let fixtures = [
        ("all-in-group", obs(&[(0.91, true), (0.55, true), (0.72, true), (0.55, true)])),
        ("none-in-group", obs(&[(0.8, false), (0.6, false), (0.3, false)])),
        ("mixed", obs(&[(0.9, true), (0.8, false), (0.6, true), (0.5, true), (0.2, false), (0.6, false)])),
    ];
    let mut notes = Vec::new();
    for (name, f) in &fixtures {
        let cal = calibrate_threshold(f).map_err(|e| e.to_string())?;
        let (tau, f1) = exhaustive_threshold(f);
        ensure!(cal.tau == tau, "{name}: τ {} vs oracle {tau}", cal.tau);
        ensure!((cal.f1 - f1).abs() < 1e-12, "{name}: F1 {} vs oracle {f1}", cal.f1);
        notes.push(format!("{name} τ={tau} F1={f1:.4}"));
    }
    let all = calibrate_threshold(&fixtures[0].1).map_err(|e| e.to_string())?;
    ensure!(all.f1 == 1.0, "all-in-group F1 {}", all.f1);
    Ok(notes.join(", "))
}

fn generalisation_floor() -> Outcome {
    let spec = SyntheticSpec::default();
    let records = synthetic::generate(&spec);
    let groups: BTreeMap<&str, usize> = records.iter().fold(BTreeMap::new(), |mut m, r| {
        *m.entry(r.group_id.as_str()).or_default() += 1;
        m
    });
    ensure!(groups.len() >= 200, "{} groups", groups.len());
    ensure!(groups.values().all(|n| (2..=4).contains(n)), "group sizes outside 2..=4");
    let dim = ServiceConfig::default().embedding_dimension;
    let e = HashingEmbedder::new(dim);
    let r = evaluation::leave_one_out(&records, &e, dim).map_err(|e| e.to_string())?;
    ensure!(r.top1_group_accuracy >= 0.80, "top-1 group accuracy {:.4} < 0.80", r.top1_group_accuracy);
    Ok(format!(
        "{} groups, {} held-out paraphrases, top-1 group accuracy {:.4} (floor 0.80)",
        groups.len(),
        r.queries,
        r.top1_group_accuracy
    ))
}

fn guardrail_suite() -> Outcome {
    let (engine, llm) = engine_with_corpus();
    let cases = injection_cases();
    ensure!(cases.len() >= 50, "{} injection fixtures", cases.len());
    for q in &cases {
        let env = engine.answer(&AskRequest::text(q));
        ensure!(
            env.route_taken == RouteTaken::Refusal && env.rail_report.input_verdict.action == Action::Refuse,
            "not refused: {q}"
        );
    }
    ensure!(llm.calls() == 0, "{} LLM calls", llm.calls());

    let s = Sanitizer::default();
    let kinds = [PiiKind::Phone, PiiKind::Age, PiiKind::Name, PiiKind::Place, PiiKind::IdNumber];
    let mut per_kind = 0;
    for (i, kind) in kinds.into_iter().enumerate() {
        let cases = pii_cases(kind, 120, 0x5EED + i as u64);
        per_kind = cases.len();
        for (text, surface) in &cases {
            let out = s.redact(text).text;
            ensure!(!out.to_lowercase().contains(&surface.to_lowercase()), "{kind}: {surface:?} survives in {out:?}");
            ensure!(out.contains(&kind.placeholder()), "{kind}: no placeholder in {out:?}");
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0x1DE4);
    let pool = [
        "mera naam", "my name is", "Priya", "rahul", "Patna", "uttar pradesh", "saal", "years", "umar", "[PHONE]", "[NAME]",
        "+91", "-", " ", ",", "हिंदी", "é", "\u{301}", "0",
    ];
    for _ in 0..1000 {
        let mut text = String::new();
        for _ in 0..rng.random_range(0..16) {
            match rng.random_range(0..4) {
                0 => text.push_str(pool.choose(&mut rng).unwrap()),
                1 => text.extend((0..rng.random_range(1..13)).map(|_| char::from(b'0' + rng.random_range(0..10u8)))),
                2 => text.extend((0..rng.random_range(1..8)).map(|_| char::from(b'a' + rng.random_range(0..26u8)))),
                _ => text.push(char::from_u32(rng.random_range(0x20..0x3000)).unwrap_or(' ')),
            }
            text.push(' ');
        }
        let once = s.redact(&text).text;
        let twice = s.redact(&once).text;
        ensure!(once == twice, "not idempotent on {text:?}");
    }
    Ok(format!(
        "{} injections refused with 0 LLM calls, {per_kind} PII cases per kind redacted, 1000 strings idempotent",
        cases.len()
    ))
}

fn online_learning_closure() -> Outcome {
    let t = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let q = "zyxw qvtr plokm";
    let open = || Engine::open(&config(dir.path())).map_err(|e| e.to_string());
    let record_id = {
        let engine = open()?;
        let text = read_fixture("corpus5.jsonl");
        engine.write(|s| s.ingest_str(&text, chrono::Utc::now())).map_err(|e| e.to_string())?.map_err(|e| e.to_string())?;
        let env = engine.answer(&AskRequest::text(q));
        ensure!(env.route_taken == RouteTaken::Escalated, "first ask routed {:?}", env.route_taken);
        let Provenance::Moderation { item_id } = env.provenance else {
            return Err("no moderation item".into());
        };
        let resolved = engine
            .resolve_moderation(&item_id, "Counsellor se baat karein.", "other", "unclear")
            .map_err(|e| e.to_string())?;
        let again = engine.answer(&AskRequest::text(q));
        ensure!(again.route_taken == RouteTaken::Retrieval, "in-process re-ask routed {:?}", again.route_taken);
        ensure!(
            again.provenance == Provenance::Record { record_id: resolved.record_id.clone() },
            "in-process re-ask cites {:?}",
            again.provenance
        );
        resolved.record_id
    };
    let engine = open()?;
    let env = engine.answer(&AskRequest::text(q));
    ensure!(env.route_taken == RouteTaken::Retrieval, "after restart routed {:?}", env.route_taken);
    ensure!(env.provenance == Provenance::Record { record_id: record_id.clone() }, "after restart cites {:?}", env.provenance);
    let secs = t.elapsed().as_secs_f64();
    ensure!(secs < 5.0, "took {secs:.2}s");
    Ok(format!("escalate → resolve → retrieval of {record_id}, in process and after replay, {secs:.2}s"))
}

fn metric_correctness() -> Outcome {
    #[derive(serde::Deserialize)]
    struct Fixture {
        metric: String,
        candidate: String,
        reference: String,
        expected: f64,
        #[serde(default)]
        max_n: Option<usize>,
        #[serde(default)]
        dimension: Option<usize>,
    }
    let fixtures: Vec<Fixture> = serde_json::from_str(&read_fixture("metrics.json")).map_err(|e| e.to_string())?;
    ensure!(fixtures.len() == 3, "{} fixtures", fixtures.len());
    for f in &fixtures {
        let got = match f.metric.as_str() {
            "bleu" => bleu(&f.candidate, &[&f.reference], f.max_n.unwrap_or(4)),
            "rouge_l_f1" => rouge_l(&f.candidate, &f.reference).f1,
            "bert_score_f1" => {
                bert_score(&f.candidate, &f.reference, &HashingEmbedder::new(f.dimension.unwrap_or(512)))
                    .map_err(|e| e.to_string())?
                    .f1
            }
            other => return Err(format!("unknown metric {other}")),
        };
        ensure!((got - f.expected).abs() <= 1e-9, "{}: {got} vs {}", f.metric, f.expected);
    }

    let e = HashingEmbedder::new(512);
    let mut rng = ChaCha8Rng::seed_from_u64(0x3E7);
    let sentence = |rng: &mut ChaCha8Rng, prefix: &str| -> String {
        (0..rng.random_range(1..=14)).map(|_| format!("{prefix}{}", rng.random_range(0..25))).collect::<Vec<_>>().join(" ")
    };
    for _ in 0..1000 {
        let a = sentence(&mut rng, "w");
        let b = sentence(&mut rng, "w");
        let bs = bert_score(&a, &b, &e).map_err(|e| e.to_string())?;
        let rl = rouge_l(&a, &b);
        for v in [bleu(&a, &[&b], 4), rl.precision, rl.recall, rl.f1, bs.precision, bs.recall, bs.f1] {
            ensure!((0.0..=1.0).contains(&v), "{v} out of [0,1] for {a:?} / {b:?}");
        }
        let same = bert_score(&a, &a, &e).map_err(|e| e.to_string())?;
        ensure!((bleu(&a, &[&a], 4) - 1.0).abs() < 1e-12, "BLEU identity on {a:?}");
        ensure!((rouge_l(&a, &a).f1 - 1.0).abs() < 1e-12, "ROUGE-L identity on {a:?}");
        ensure!((same.f1 - 1.0).abs() < 1e-12, "BERTScore identity on {a:?}");
    }
    for (a, b) in [("alpha beta gamma", "delta epsilon"), ("periods late", "condom kahan milega")] {
        ensure!(bleu(a, &[b], 4) == 0.0, "BLEU disjoint {a:?}");
        ensure!(rouge_l(a, b).f1 == 0.0, "ROUGE-L disjoint {a:?}");
        let bs = bert_score(a, b, &e).map_err(|e| e.to_string())?.f1;
        ensure!(bs == 0.0, "BERTScore disjoint {a:?}: {bs}");
    }
    Ok("3 hand-derived fixtures within 1e-9, identity = 1, disjoint = 0, 1000 random pairs in [0,1]".into())
}

fn walk(dir: &Path, out: &mut Vec<std::path::PathBuf>) {
    for entry in std::fs::read_dir(dir).into_iter().flatten().flatten() {
        let p = entry.path();
        if p.is_dir() {
            walk(&p, out);
        } else {
            out.push(p);
        }
    }
}

fn privacy_at_the_edge(logs: &LogBuffer) -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let engine = Engine::open(&config(dir.path())).map_err(|e| e.to_string())?;
    let text = read_fixture("corpus5.jsonl");
    engine.write(|s| s.ingest_str(&text, chrono::Utc::now())).map_err(|e| e.to_string())?.map_err(|e| e.to_string())?;
    let engine = Arc::new(engine);
    let app = router(AppState::new(engine.clone()), 1 << 20);
    let queries = pii_queries();
    ensure!(queries.len() == 20, "{} PII fixtures", queries.len());

    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().map_err(|e| e.to_string())?;
    let mut bodies = String::new();
    rt.block_on(async {
        let get = |uri: &str| Request::get(uri).body(Body::empty()).unwrap();
        for q in &queries {
            let req = Request::post("/v1/ask")
                .header(header::CONTENT_TYPE, "application/json")
                .body(Body::from(serde_json::json!({ "text": q.query }).to_string()))
                .unwrap();
            for r in [req, get("/v1/moderation/queue"), get("/v1/metrics")] {
                let resp = app.clone().oneshot(r).await.unwrap();
                let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
                bodies.push_str(&String::from_utf8_lossy(&bytes));
            }
        }
    });
    let open_items = engine.queue().len();
    engine.checkpoint().map_err(|e| e.to_string())?;

    let mut files = Vec::new();
    walk(dir.path(), &mut files);
    let mut haystacks = vec![
        ("logs".to_string(), logs.text()),
        ("metrics".to_string(), engine.telemetry().render()),
        ("responses".to_string(), bodies),
    ];
    for f in &files {
        haystacks.push((f.display().to_string(), String::from_utf8_lossy(&std::fs::read(f).unwrap_or_default()).into_owned()));
    }
    let log_lines = haystacks[0].1.lines().count();
    ensure!(log_lines > 0, "no log output captured");
    for q in &queries {
        for surface in &q.pii {
            let needle = surface.to_lowercase();
            for (name, hay) in &haystacks {
                ensure!(!hay.to_lowercase().contains(&needle), "{surface:?} found in {name}");
            }
        }
    }
    Ok(format!(
        "20 queries, {log_lines} TRACE log lines, {} store files, {open_items} queue items: no raw PII",
        files.len()
    ))
}

fn scalability_harness() -> Outcome {
    let dim = ServiceConfig::default().embedding_dimension;
    let e = HashingEmbedder::new(dim);
    let report = evaluation::scalability_suite(&[10_000], 1000, 20, 0, &e, dim).map_err(|e| e.to_string())?;
    let out = Path::new(env!("CARGO_TARGET_TMPDIR")).join("scalability.json");
    std::fs::write(&out, serde_json::to_string_pretty(&report).unwrap()).map_err(|e| e.to_string())?;
    let p = &report.points[0];
    ensure!(p.docs >= 10_000 && p.queries == 1000, "{} docs, {} queries", p.docs, p.queries);
    ensure!(p.oracle_passed == 20 && p.oracle_checks == 20, "oracle {}/{}", p.oracle_passed, p.oracle_checks);
    ensure!(p.p50_search_ms < 10.0, "p50 {:.3} ms", p.p50_search_ms);
    Ok(format!(
        "{} docs built in {:.0} ms, p50 {:.3} ms, p95 {:.3} ms, oracle 20/20; report at {}",
        p.docs,
        p.build_ms,
        p.p50_search_ms,
        p.p95_search_ms,
        out.display()
    ))
}

fn offline_with_mocks() -> Outcome {
    let cfg = ServiceConfig::default();
    let p = &cfg.providers;
    for (kind, pc) in [("embedding", &p.embedding), ("llm", &p.llm), ("asr", &p.asr), ("mt", &p.mt), ("tts", &p.tts), ("judge", &p.judge)] {
        ensure!(pc.is_mock() && pc.url.is_none(), "{kind} provider is not an offline mock");
    }
    let set = ProviderSet::from_config(&cfg).map_err(|e| e.to_string())?;
    ensure!(set.permits.is_empty(), "HTTP provider permits allocated");
    let console = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../console/node_modules");
    ensure!(!console.exists(), "console dependencies present");
    Ok(format!("all six providers mock ({}), no HTTP clients, console not built", set.embedder.provider_id()))
}

fn main() {
    let logs = LogBuffer::default();
    let subscriber = tracing_subscriber::fmt()
        .with_max_level(tracing::Level::TRACE)
        .with_ansi(false)
        .with_writer(logs.clone())
        .finish();
    tracing::subscriber::set_global_default(subscriber).expect("first subscriber");

    let criteria: Vec<(&str, Check)> = vec![
        ("bm25-oracle-equivalence", Box::new(bm25_oracle_equivalence)),
        ("incremental-equals-batch", Box::new(incremental_equals_batch)),
        ("threshold-calibration-oracle", Box::new(calibration_oracle)),
        ("retrieval-generalisation-floor", Box::new(generalisation_floor)),
        ("guardrail-suite", Box::new(guardrail_suite)),
        ("online-learning-closure", Box::new(online_learning_closure)),
        ("metric-correctness", Box::new(metric_correctness)),
        ("privacy-at-the-edge", Box::new({
            let logs = logs.clone();
            move || privacy_at_the_edge(&logs)
        })),
        ("scalability-harness", Box::new(scalability_harness)),
        ("offline-with-mocks", Box::new(offline_with_mocks)),
    ];

    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in &criteria {
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name:<32} {detail} [{secs:.2}s]"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name:<32} {why} [{secs:.2}s]");
            }
        }
    }
    println!("{} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
