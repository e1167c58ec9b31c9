//! Request orchestration: language routing, input rails, retrieval, the
//! generation fallback, output rails, and the moderation loop.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{mpsc, Arc, Mutex, MutexGuard, RwLock};
use std::time::Instant;

use chrono::{DateTime, Utc};
use guardqa_core::corpus::{group_id_for, CorpusEvent, EventOp, QARecord, RecordSource, RecordStatus};
use guardqa_core::generation::{
    generate, prompt_digest, select_context, select_icl_examples, FinishReason, GenerationError, GenerationRequest,
    TokenUsage,
};
use guardqa_core::guardrails::{
    default_rules, enforce, Action, RailReport, RailRule, RuleError, RuleSet, Verdict, NOTE_OFF_TOPIC,
};
use guardqa_core::retrieval::{
    decide_relevance, HybridIndex, JaccardScorer, PairScorer, RelevanceDecision, RetrievalError, RetrievalHit,
};
use guardqa_core::sanitizer::{PiiRules, Sanitizer};
use guardqa_core::text::{collapse_whitespace, Tokenizer};
use serde::{Deserialize, Serialize};

use crate::config::ServiceConfig;
use crate::langbridge::{AudioRef, LangBridge, LanguageRoute, QueryInput, Sleeper};
use crate::moderation::{EscalationReason, ModerationItem, ModerationQueue, QueueError, Resolution};
use crate::providers::{ProviderSet, ProviderSetupError};
use crate::store::{CorpusStore, StoreError};
use crate::telemetry::Telemetry;

pub const INDEX_FILE: &str = "index.json";

/// Answer text when the request could not be processed at all.
pub const ERROR_TEMPLATE: &str = "Sorry, something went wrong while handling your question. Please try again in a little while.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AskRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio: Option<AudioRef>,
    #[serde(default)]
    /// Caller language; adjusts the configured route when `route` is unset.
    pub language: Option<String>,
    #[serde(default)]
    pub session_id: String,
    /// Overrides the configured route for this request.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub route: Option<LanguageRoute>,
}

impl AskRequest {
    pub fn text(q: &str) -> Self {
        Self {
            query_text: Some(q.to_string()),
            audio: None,
            language: None,
            session_id: String::new(),
            route: None,
        }
    }

    pub fn audio(uri: &str) -> Result<Self, crate::langbridge::LangError> {
        Ok(Self {
            query_text: None,
            audio: Some(AudioRef::new(uri)?),
            language: None,
            session_id: String::new(),
            route: None,
        })
    }

    pub fn input(&self) -> Result<QueryInput, AskError> {
        match (&self.query_text, &self.audio) {
            (Some(t), None) if !t.trim().is_empty() => Ok(QueryInput::Text(t.clone())),
            (Some(_), None) => Err(AskError::EmptyQuery),
            (None, Some(a)) => Ok(QueryInput::Audio(a.clone())),
            _ => Err(AskError::NotExactlyOne),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AskError {
    #[error("exactly one of text and audio_uri is required")]
    NotExactlyOne,
    #[error("query text is empty")]
    EmptyQuery,
    #[error("invalid route: {0}")]
    BadRoute(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RouteTaken {
    Retrieval,
    Generation,
    Refusal,
    Escalated,
    Error,
}

impl RouteTaken {
    pub const ALL: [RouteTaken; 5] = [
        RouteTaken::Retrieval,
        RouteTaken::Generation,
        RouteTaken::Refusal,
        RouteTaken::Escalated,
        RouteTaken::Error,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Retrieval => "retrieval",
            Self::Generation => "generation",
            Self::Refusal => "refusal",
            Self::Escalated => "escalated",
            Self::Error => "error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Record {
        record_id: String,
    },
    Generation {
        provider_id: String,
        prompt_digest: String,
        context_ids: Vec<String>,
        attempts: u32,
        finish_reason: FinishReason,
        usage: TokenUsage,
        provider_latency_ms: u64,
    },
    Moderation {
        item_id: String,
    },
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerEnvelope {
    pub answer_text: String,
    pub answer_audio: Option<AudioRef>,
    pub route_taken: RouteTaken,
    /// Absent when the request ended before retrieval ran.
    pub relevance: Option<RelevanceDecision>,
    pub provenance: Provenance,
    pub rail_report: RailReport,
    /// Stage name to microseconds, in execution order.
    pub timings: Vec<(String, u64)>,
    pub corpus_version: u64,
    pub index_version: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    pub trace_id: String,
}

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Queue(#[from] QueueError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Rules(#[from] RuleError),
    #[error(transparent)]
    Providers(#[from] ProviderSetupError),
    #[error("cannot load {path}: {message}")]
    Load { path: PathBuf, message: String },
}

#[derive(Debug, thiserror::Error)]
pub enum ResolveError {
    #[error("unknown moderation item {0}")]
    NotFound(String),
    #[error("not open")]
    NotOpen,
    #[error("answer is empty")]
    EmptyAnswer,
    #[error("answer rejected by output rails")]
    RailRejected(Verdict),
    #[error(transparent)]
    Store(StoreError),
    #[error(transparent)]
    Queue(QueueError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolved {
    pub record_id: String,
    pub corpus_version: u64,
    pub index_version: u64,
}

/// What readers see: the index plus the published records behind it.
#[derive(Debug)]
pub struct Served {
    pub index: HybridIndex,
    pub records: BTreeMap<String, QARecord>,
    pub corpus_version: u64,
}

#[derive(Serialize, Deserialize)]
struct IndexFile {
    corpus_version: u64,
    index: HybridIndex,
}

struct Writer {
    store: CorpusStore,
    events: mpsc::Receiver<CorpusEvent>,
}

pub struct Engine {
    config: ServiceConfig,
    served: RwLock<Arc<Served>>,
    writer: Mutex<Writer>,
    queue: Mutex<ModerationQueue>,
    rules: RuleSet,
    providers: ProviderSet,
    bridge: LangBridge,
    scorer: Arc<dyn PairScorer>,
    telemetry: Arc<Telemetry>,
    sleep: Sleeper,
    clock: Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine").field("providers", &self.providers).finish()
    }
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

fn us(t: Instant) -> u64 {
    t.elapsed().as_micros() as u64
}

fn load_err(path: &Path, e: impl std::fmt::Display) -> EngineError {
    EngineError::Load {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn word_lines(text: &str) -> impl Iterator<Item = String> + '_ {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
}

/// PII rules from config: the JSON rules file, then extra lexicon files.
pub fn load_sanitizer(cfg: &ServiceConfig) -> Result<Sanitizer, EngineError> {
    let mut rules = match &cfg.pii_rules_path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| load_err(p, e))?;
            serde_json::from_str::<PiiRules>(&text).map_err(|e| load_err(p, e))?
        }
        None => PiiRules::default(),
    };
    if let Some(p) = &cfg.name_lexicon_path {
        rules.name_lexicon.extend(word_lines(&std::fs::read_to_string(p).map_err(|e| load_err(p, e))?));
    }
    if let Some(p) = &cfg.gazetteer_path {
        rules.gazetteer.extend(word_lines(&std::fs::read_to_string(p).map_err(|e| load_err(p, e))?));
    }
    Sanitizer::new(rules).map_err(|e| load_err(Path::new("pii rules"), e))
}

/// Rail rules from config, with `words_file` lists read relative to the
/// rules file. Threshold rules without an explicit threshold take the
/// configured topic and grounding values.
pub fn load_rules(cfg: &ServiceConfig, sanitizer: Sanitizer) -> Result<RuleSet, EngineError> {
    let mut rules: Vec<RailRule> = match &cfg.rules_path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| load_err(p, e))?;
            let mut rules: Vec<RailRule> = serde_json::from_str(&text).map_err(|e| load_err(p, e))?;
            let base = p.parent().unwrap_or(Path::new("."));
            for r in &mut rules {
                if let Some(f) = r.payload.words_file.take() {
                    let path = base.join(f);
                    let words = std::fs::read_to_string(&path).map_err(|e| load_err(&path, e))?;
                    r.payload.words.extend(word_lines(&words));
                }
            }
            rules
        }
        None => default_rules(),
    };
    for r in &mut rules {
        use guardqa_core::guardrails::RuleKind;
        if r.payload.threshold.is_none() || cfg.rules_path.is_none() {
            match r.kind {
                RuleKind::Topic => r.payload.threshold = Some(cfg.topic_threshold),
                RuleKind::Grounding => r.payload.threshold = Some(cfg.grounding_threshold),
                _ => {}
            }
        }
    }
    Ok(RuleSet::new(rules, sanitizer)?)
}

pub fn index_tokenizer() -> Tokenizer {
    Tokenizer::new()
}

impl Engine {
    /// Engine over a store directory, with providers and rules from config.
    pub fn open(cfg: &ServiceConfig) -> Result<Self, EngineError> {
        let sanitizer = load_sanitizer(cfg)?;
        let rules = load_rules(cfg, sanitizer.clone())?;
        let providers = ProviderSet::from_config(cfg)?;
        let store = CorpusStore::open(&cfg.store_dir, sanitizer, cfg.snapshot_every)?;
        let queue = ModerationQueue::open(&cfg.store_dir)?;
        Self::assemble(cfg.clone(), store, queue, rules, providers)
    }

    /// Fully in-memory engine; nothing touches disk.
    pub fn in_memory(cfg: &ServiceConfig, providers: ProviderSet) -> Result<Self, EngineError> {
        let sanitizer = load_sanitizer(cfg)?;
        let rules = load_rules(cfg, sanitizer.clone())?;
        let store = CorpusStore::in_memory(sanitizer);
        Self::assemble(cfg.clone(), store, ModerationQueue::in_memory(), rules, providers)
    }

    pub fn assemble(
        config: ServiceConfig,
        mut store: CorpusStore,
        queue: ModerationQueue,
        rules: RuleSet,
        providers: ProviderSet,
    ) -> Result<Self, EngineError> {
        let events = store.subscribe();
        let served = Self::initial_index(&config, &store, &providers)?;
        let sleep: Sleeper = Arc::new(std::thread::sleep);
        let bridge = LangBridge {
            route: config.route.clone(),
            asr: providers.asr.clone(),
            mt: providers.mt.clone(),
            tts: providers.tts.clone(),
            glossary: config.glossary.clone(),
            retry: config.retry,
            sleep: sleep.clone(),
        };
        Ok(Self {
            served: RwLock::new(Arc::new(served)),
            writer: Mutex::new(Writer { store, events }),
            queue: Mutex::new(queue),
            rules,
            bridge,
            scorer: Arc::new(JaccardScorer::new(index_tokenizer())),
            telemetry: Arc::new(Telemetry::new()),
            sleep,
            clock: Arc::new(Utc::now),
            providers,
            config,
        })
    }

    /// Reuse `index.json` when it matches the store version and embedder;
    /// otherwise rebuild from the published records.
    fn initial_index(config: &ServiceConfig, store: &CorpusStore, providers: &ProviderSet) -> Result<Served, EngineError> {
        let records: BTreeMap<String, QARecord> =
            store.published().into_iter().map(|r| (r.id.clone(), r)).collect();
        if let Some(dir) = store.dir() {
            let path = dir.join(INDEX_FILE);
            if let Ok(text) = std::fs::read_to_string(&path) {
                if let Ok(f) = serde_json::from_str::<IndexFile>(&text) {
                    if f.corpus_version == store.version()
                        && f.index.dense().provider_id() == providers.embedder.provider_id()
                        && f.index.len() == records.len()
                    {
                        let mut index = f.index;
                        index.set_config(config.retrieval);
                        return Ok(Served {
                            index,
                            records,
                            corpus_version: store.version(),
                        });
                    }
                }
            }
        }
        let list: Vec<QARecord> = records.values().cloned().collect();
        let index = HybridIndex::build(
            &list,
            config.retrieval,
            index_tokenizer(),
            providers.embedder.as_ref(),
            config.embedding_dimension,
        )?;
        let served = Served {
            index,
            records,
            corpus_version: store.version(),
        };
        if let Some(dir) = store.dir() {
            save_index(dir, &served)?;
        }
        Ok(served)
    }

    pub fn with_sleep(mut self, sleep: Sleeper) -> Self {
        self.bridge.sleep = sleep.clone();
        self.sleep = sleep;
        self
    }

    pub fn with_clock(mut self, clock: Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>) -> Self {
        self.clock = clock;
        self
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn rules(&self) -> &RuleSet {
        &self.rules
    }

    pub fn providers(&self) -> &ProviderSet {
        &self.providers
    }

    pub fn telemetry(&self) -> &Arc<Telemetry> {
        &self.telemetry
    }

    pub fn served(&self) -> Arc<Served> {
        self.served.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn corpus_version(&self) -> u64 {
        lock(&self.writer).store.version()
    }

    pub fn index_version(&self) -> u64 {
        self.served().index.version()
    }

    pub fn queue(&self) -> MutexGuard<'_, ModerationQueue> {
        lock(&self.queue)
    }

    /// Run `f` against the store under the writer lock, then bring the
    /// served index up to date with whatever it committed.
    pub fn write<T>(&self, f: impl FnOnce(&mut CorpusStore) -> T) -> Result<T, EngineError> {
        let mut w = lock(&self.writer);
        let out = f(&mut w.store);
        self.refresh(&mut w)?;
        Ok(out)
    }

    fn refresh(&self, w: &mut Writer) -> Result<(), EngineError> {
        let events: Vec<CorpusEvent> = w.events.try_iter().collect();
        if events.is_empty() {
            return Ok(());
        }
        let current = self.served();
        let mut index = current.index.clone();
        let mut records = current.records.clone();
        let mut rebuild = false;
        for e in &events {
            match (e.op, e.record.status) {
                (EventOp::Add, RecordStatus::Published) => {
                    index.add_document(&e.record, self.providers.embedder.as_ref())?;
                    records.insert(e.record.id.clone(), e.record.clone());
                }
                (EventOp::Add, _) => {}
                (EventOp::UpdateStatus, _) => rebuild = true,
            }
        }
        if rebuild {
            let list = w.store.published();
            index = HybridIndex::build(
                &list,
                self.config.retrieval,
                index_tokenizer(),
                self.providers.embedder.as_ref(),
                self.config.embedding_dimension,
            )?;
            records = list.into_iter().map(|r| (r.id.clone(), r)).collect();
        }
        let served = Served {
            index,
            records,
            corpus_version: w.store.version(),
        };
        if let Some(dir) = w.store.dir() {
            save_index(dir, &served)?;
        }
        *self.served.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(served);
        Ok(())
    }

    fn trace_id() -> String {
        format!("{:016x}", rand::random::<u64>())
    }

    /// Answer one request. Never fails: every outcome is an envelope.
    pub fn answer(&self, request: &AskRequest) -> AnswerEnvelope {
        self.telemetry.incr("guardqa_asks_total", None);
        let env = self.answer_inner(request);
        self.telemetry.incr("guardqa_route_total", Some(("route", env.route_taken.as_str())));
        for (rule, _) in triggered(&env.rail_report) {
            self.telemetry.incr("guardqa_rail_triggers_total", Some(("rule", rule)));
        }
        for (stage, t) in &env.timings {
            self.telemetry.observe_latency(stage, *t);
        }
        tracing::info!(trace_id = %env.trace_id, route = env.route_taken.as_str(), corpus_version = env.corpus_version, "answered");
        env
    }

    fn answer_inner(&self, request: &AskRequest) -> AnswerEnvelope {
        let served = self.served();
        let mut env = AnswerEnvelope {
            answer_text: String::new(),
            answer_audio: None,
            route_taken: RouteTaken::Error,
            relevance: None,
            provenance: Provenance::None,
            rail_report: RailReport::default(),
            timings: Vec::new(),
            corpus_version: served.corpus_version,
            index_version: served.index.version(),
            warnings: Vec::new(),
            trace_id: Self::trace_id(),
        };
        let route = match (&request.route, &request.language) {
            (Some(r), _) => r.clone(),
            (None, Some(l)) if !l.trim().is_empty() => self.config.route.for_language(l.trim()),
            _ => self.config.route.clone(),
        };
        let mut speak = request.audio.is_some();
        let input = match request.input() {
            Ok(i) => i,
            Err(e) => {
                env.warnings.push(e.to_string());
                return self.finish(env, ERROR_TEMPLATE, &route, false);
            }
        };
        if let Err(e) = route.validate() {
            env.warnings.push(AskError::BadRoute(e).to_string());
            return self.finish(env, ERROR_TEMPLATE, &route, speak);
        }
        let t = Instant::now();
        let routed = match self.bridge.route_input(&input, &route, self.rules.sanitizer()) {
            Ok(r) => r,
            Err(e) => {
                env.timings.push(("input".into(), us(t)));
                env.warnings.push(format!("input routing failed: {e}"));
                return self.finish(env, ERROR_TEMPLATE, &route, speak);
            }
        };
        env.timings.extend(routed.stages.iter().cloned());
        speak = speak || routed.from_audio;

        // input rails that need no retrieval
        let t = Instant::now();
        let pre = self.rules.check_input(&routed.text, None);
        env.timings.push(("input_rails".into(), us(t)));
        if pre.action >= Action::Escalate {
            return self.input_stop(env, pre, &routed.text, &route, speak);
        }
        let query = pre
            .transformed_text
            .clone()
            .unwrap_or_else(|| collapse_whitespace(&routed.text));

        let t = Instant::now();
        let hits = match served
            .index
            .search(&query, self.providers.embedder.as_ref(), self.scorer.as_ref())
        {
            Ok(h) => Some(h),
            Err(e) => {
                env.warnings.push(format!("retrieval unavailable: {e}"));
                None
            }
        };
        env.timings.push(("retrieval".into(), us(t)));
        let topic = match &hits {
            Some(h) if !served.index.is_empty() => Some(h.first().map_or(0.0, |h| h.final_score)),
            _ => None,
        };
        let verdict = self.rules.check_input(&routed.text, topic);
        env.rail_report.input_verdict = verdict.clone();
        if verdict.action >= Action::Escalate {
            return self.input_stop(env, verdict, &query, &route, speak);
        }
        let hits = hits.unwrap_or_default();
        if hits.iter().any(|h| h.rerank_fallback) {
            env.warnings.push("re-ranker unavailable; fused order kept".into());
        }
        let relevance = decide_relevance(&hits, self.config.tau);
        env.relevance = Some(relevance);

        if relevance.accepted {
            if let Some(record) = served.records.get(&hits[0].record_id) {
                let t = Instant::now();
                let out = self.rules.check_retrieved(&record.answer);
                env.timings.push(("output_rails".into(), us(t)));
                let text = enforce(&out, &record.answer, &self.config.templates, None);
                env.rail_report.output_verdict = Some(out);
                env.route_taken = RouteTaken::Retrieval;
                env.provenance = Provenance::Record {
                    record_id: record.id.clone(),
                };
                return self.finish(env, &text, &route, speak);
            }
            env.warnings.push("top hit missing from served records".into());
        }
        self.generate_answer(env, &served, &query, &hits, &route, speak)
    }

    fn input_stop(
        &self,
        mut env: AnswerEnvelope,
        verdict: Verdict,
        redacted_query: &str,
        route: &LanguageRoute,
        speak: bool,
    ) -> AnswerEnvelope {
        env.rail_report.input_verdict = verdict.clone();
        if verdict.action == Action::Refuse {
            env.route_taken = RouteTaken::Refusal;
            let text = self.config.templates.refusal.clone();
            return self.finish(env, &text, route, speak);
        }
        let reason = if verdict.notes.iter().any(|n| n == NOTE_OFF_TOPIC) {
            EscalationReason::OffTopic
        } else {
            EscalationReason::RailEscalated
        };
        let redacted = self.rules.sanitizer().redact(&collapse_whitespace(redacted_query)).text;
        self.escalate_into(env, &redacted, reason, &verdict, route, speak)
    }

    fn escalate_into(
        &self,
        mut env: AnswerEnvelope,
        redacted: &str,
        reason: EscalationReason,
        verdict: &Verdict,
        route: &LanguageRoute,
        speak: bool,
    ) -> AnswerEnvelope {
        let t = Instant::now();
        let item = self.escalate(redacted, reason);
        env.timings.push(("escalate".into(), us(t)));
        match item {
            Ok(item) => {
                env.route_taken = RouteTaken::Escalated;
                let text = enforce(
                    &Verdict {
                        action: Action::Escalate,
                        ..verdict.clone()
                    },
                    "",
                    &self.config.templates,
                    Some(&item.id),
                );
                env.provenance = Provenance::Moderation { item_id: item.id };
                self.finish(env, &text, route, speak)
            }
            Err(e) => {
                env.warnings.push(format!("moderation store failed: {e}"));
                env.route_taken = RouteTaken::Error;
                self.finish(env, ERROR_TEMPLATE, route, speak)
            }
        }
    }

    fn generate_answer(
        &self,
        mut env: AnswerEnvelope,
        served: &Served,
        query: &str,
        hits: &[RetrievalHit],
        route: &LanguageRoute,
        speak: bool,
    ) -> AnswerEnvelope {
        let lookup = |id: &str| served.records.get(id);
        let g = &self.config.generation;
        let examples = select_icl_examples(hits, g.icl_examples, lookup);
        let context = select_context(hits, g.context_passages, lookup);
        let t = Instant::now();
        let mut prompt_tpl = self.config.prompt.clone();
        prompt_tpl.language_directive = route.pipeline_lang.clone();
        let outcome = prompt_tpl
            .render(query, &examples, &context)
            .map_err(GenerationError::from)
            .and_then(|prompt| {
                let mut req = GenerationRequest::new(prompt.clone(), self.providers.llm.provider_id());
                req.max_tokens = g.max_tokens;
                req.temperature = g.temperature;
                req.timeout_ms = self.config.providers.llm.timeout_ms;
                generate(self.providers.llm.as_ref(), &req, &self.config.retry, |d| (self.sleep)(d))
                    .map(|r| (prompt, r))
            });
        env.timings.push(("generation".into(), us(t)));
        let redacted = self.rules.sanitizer().redact(query).text;
        let (prompt, result) = match outcome {
            Ok((p, r)) if r.finish_reason != FinishReason::Filtered && r.finish_reason != FinishReason::Error => (p, r),
            Ok((_, r)) => {
                env.warnings.push(format!("generation finished with {:?}", r.finish_reason));
                let v = env.rail_report.input_verdict.clone();
                return self.escalate_into(
                    env,
                    &redacted,
                    EscalationReason::LowRelevanceAndGenerationUnavailable,
                    &v,
                    route,
                    speak,
                );
            }
            Err(e) => {
                env.warnings.push(format!("generation failed: {e}"));
                let v = env.rail_report.input_verdict.clone();
                return self.escalate_into(
                    env,
                    &redacted,
                    EscalationReason::LowRelevanceAndGenerationUnavailable,
                    &v,
                    route,
                    speak,
                );
            }
        };
        let grounding: Vec<String> = context.iter().map(|c| c.grounding_text()).collect();
        let grounding_refs: Vec<&str> = grounding.iter().map(String::as_str).collect();
        let t = Instant::now();
        let out = self.rules.check_output(&result.text, &grounding_refs);
        env.timings.push(("output_rails".into(), us(t)));
        env.rail_report.output_verdict = Some(out.clone());
        env.provenance = Provenance::Generation {
            provider_id: self.providers.llm.provider_id().to_string(),
            prompt_digest: prompt_digest(&prompt),
            context_ids: context.iter().map(|c| c.record_id.clone()).collect(),
            attempts: result.attempts,
            finish_reason: result.finish_reason,
            usage: result.usage,
            provider_latency_ms: result.provider_latency_ms,
        };
        match out.action {
            Action::Allow | Action::Redact => {
                env.route_taken = RouteTaken::Generation;
                let text = enforce(&out, &result.text, &self.config.templates, None);
                self.finish(env, &text, route, speak)
            }
            Action::Escalate => self.escalate_into(env, &redacted, EscalationReason::OutputEscalated, &out, route, speak),
            Action::Refuse => {
                env.route_taken = RouteTaken::Refusal;
                let text = self.config.templates.refusal.clone();
                self.finish(env, &text, route, speak)
            }
        }
    }

    fn finish(&self, mut env: AnswerEnvelope, text: &str, route: &LanguageRoute, speak: bool) -> AnswerEnvelope {
        let out = self.bridge.route_output(text, route, speak);
        env.answer_text = out.text;
        env.answer_audio = out.audio;
        env.warnings.extend(out.warnings);
        env.timings.extend(out.stages);
        env.rail_report.timings_us = env
            .timings
            .iter()
            .filter(|(k, _)| k.ends_with("_rails"))
            .cloned()
            .collect();
        env
    }

    /// Open (or find) a moderation item for an already redacted query.
    pub fn escalate(&self, redacted: &str, reason: EscalationReason) -> Result<ModerationItem, QueueError> {
        let text = if self.rules.sanitizer().is_clean(redacted) {
            redacted.to_string()
        } else {
            self.rules.sanitizer().redact(redacted).text
        };
        let item = lock(&self.queue).escalate(&text, reason, (self.clock)())?;
        self.telemetry
            .incr("guardqa_escalations_total", Some(("reason", reason.as_str())));
        Ok(item)
    }

    /// Publish a moderator's answer for an open item and index it.
    pub fn resolve_moderation(
        &self,
        item_id: &str,
        answer: &str,
        theme: &str,
        sub_theme: &str,
    ) -> Result<Resolved, ResolveError> {
        let mut w = lock(&self.writer);
        let item = match lock(&self.queue).require_open(item_id) {
            Ok(i) => i.clone(),
            Err(QueueError::NotFound(id)) => return Err(ResolveError::NotFound(id)),
            Err(QueueError::NotOpen) => return Err(ResolveError::NotOpen),
            Err(e) => return Err(ResolveError::Queue(e)),
        };
        let answer = collapse_whitespace(answer);
        if answer.is_empty() {
            return Err(ResolveError::EmptyAnswer);
        }
        let verdict = self.rules.check_output(&answer, &[]);
        if verdict.action != Action::Allow {
            return Err(ResolveError::RailRejected(verdict));
        }
        let record_id = format!("rec-{}", item.id.trim_start_matches("mod-"));
        let record = QARecord {
            id: record_id.clone(),
            group_id: group_id_for(&answer),
            caller_query_transcription: item.query_text.clone(),
            relevant_question: item.query_text.clone(),
            sanitized_question: item.query_text.clone(),
            answer: answer.clone(),
            theme: theme.to_string(),
            sub_theme: sub_theme.to_string(),
            language: self.config.route.pipeline_lang.clone(),
            status: RecordStatus::Published,
            created_at: (self.clock)(),
            source: RecordSource::Moderation,
        };
        let corpus_version = w.store.append_record(record).map_err(ResolveError::Store)?;
        self.refresh(&mut w).map_err(|e| match e {
            EngineError::Retrieval(r) => ResolveError::Retrieval(r),
            EngineError::Store(s) => ResolveError::Store(s),
            other => ResolveError::Store(StoreError::Corrupt {
                path: PathBuf::from(INDEX_FILE),
                line: 0,
                message: other.to_string(),
            }),
        })?;
        lock(&self.queue)
            .resolve(
                item_id,
                Resolution {
                    answer,
                    theme: theme.to_string(),
                    sub_theme: sub_theme.to_string(),
                    record_id: record_id.clone(),
                },
            )
            .map_err(ResolveError::Queue)?;
        self.telemetry.incr("guardqa_resolutions_total", None);
        Ok(Resolved {
            record_id,
            corpus_version,
            index_version: self.index_version(),
        })
    }

    /// Flush a snapshot so the next start replays little.
    pub fn checkpoint(&self) -> Result<(), EngineError> {
        lock(&self.writer).store.write_snapshot()?;
        Ok(())
    }
}

fn triggered(report: &RailReport) -> impl Iterator<Item = (&str, ())> {
    report
        .input_verdict
        .triggered
        .iter()
        .chain(report.output_verdict.iter().flat_map(|v| v.triggered.iter()))
        .map(|s| (s.as_str(), ()))
}

fn save_index(dir: &Path, served: &Served) -> Result<(), EngineError> {
    let path = dir.join(INDEX_FILE);
    let tmp = dir.join(format!("{INDEX_FILE}.tmp"));
    let file = IndexFile {
        corpus_version: served.corpus_version,
        index: served.index.clone(),
    };
    let text = serde_json::to_string(&file).map_err(|e| load_err(&path, e))?;
    std::fs::write(&tmp, text).map_err(|e| load_err(&tmp, e))?;
    std::fs::rename(&tmp, &path).map_err(|e| load_err(&path, e))?;
    Ok(())
}
