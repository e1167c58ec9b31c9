//! HTTP JSON adapters for every external provider, a counting semaphore that
//! bounds concurrent calls, and construction of the provider set from config.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use guardqa_core::generation::{FinishReason, GenerationRequest, GenerationResult, LlmProvider, MockLlm, TokenUsage};
use guardqa_core::metrics::{Judge, LexicalJudge, JUDGE_QUESTION};
use guardqa_core::provider::{Embedder, HashingEmbedder, ProviderError};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::config::{ProviderConfig, ServiceConfig};
use crate::langbridge::{
    AudioRef, MockAsr, MockMt, MockTts, SpeechRecognizer, SpeechSynthesizer, TranscriptionResult, Translator,
};

/// Counting semaphore. `peak` records the most permits ever held at once.
#[derive(Debug)]
pub struct Permits {
    held: Mutex<usize>,
    freed: Condvar,
    max: usize,
    peak: AtomicUsize,
}

pub struct PermitGuard<'a>(&'a Permits);

impl Drop for PermitGuard<'_> {
    fn drop(&mut self) {
        let mut held = self.0.held.lock().unwrap_or_else(|e| e.into_inner());
        *held -= 1;
        self.0.freed.notify_one();
    }
}

impl Permits {
    pub fn new(max: usize) -> Self {
        Self {
            held: Mutex::new(0),
            freed: Condvar::new(),
            max: max.max(1),
            peak: AtomicUsize::new(0),
        }
    }

    pub fn acquire(&self) -> PermitGuard<'_> {
        let mut held = self.held.lock().unwrap_or_else(|e| e.into_inner());
        while *held >= self.max {
            held = self.freed.wait(held).unwrap_or_else(|e| e.into_inner());
        }
        *held += 1;
        self.peak.fetch_max(*held, Ordering::Relaxed);
        PermitGuard(self)
    }

    pub fn max(&self) -> usize {
        self.max
    }

    pub fn peak(&self) -> usize {
        self.peak.load(Ordering::Relaxed)
    }
}

/// Shared transport: POST a JSON body, parse a JSON reply, map failures to
/// [`ProviderError`].
pub struct HttpClient {
    id: String,
    url: String,
    model: Option<String>,
    key: Option<String>,
    agent: ureq::Agent,
    permits: Arc<Permits>,
}

impl std::fmt::Debug for HttpClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpClient").field("id", &self.id).field("url", &self.url).finish()
    }
}

fn map_ureq(e: ureq::Error) -> ProviderError {
    match e {
        ureq::Error::Timeout(_) => ProviderError::Timeout,
        ureq::Error::StatusCode(c) => ProviderError::Status(c),
        ureq::Error::Json(e) => ProviderError::Malformed(e.to_string()),
        ureq::Error::Io(e) if e.kind() == std::io::ErrorKind::TimedOut => ProviderError::Timeout,
        other => ProviderError::Unreachable(other.to_string()),
    }
}

impl HttpClient {
    pub fn new(cfg: &ProviderConfig, permits: Arc<Permits>) -> Result<Self, ProviderError> {
        let url = cfg
            .url
            .clone()
            .ok_or_else(|| ProviderError::Rejected(format!("provider {} has no url", cfg.id)))?;
        let key = cfg.key_env.as_deref().and_then(|k| std::env::var(k).ok());
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(cfg.timeout_ms)))
            .build()
            .into();
        Ok(Self {
            id: cfg.id.clone(),
            url,
            model: cfg.model.clone(),
            key,
            agent,
            permits,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn model(&self) -> &str {
        self.model.as_deref().unwrap_or(&self.id)
    }

    pub fn post<T: DeserializeOwned>(&self, body: &Value) -> Result<T, ProviderError> {
        let _permit = self.permits.acquire();
        let mut req = self.agent.post(&self.url).header("Content-Type", "application/json");
        if let Some(k) = &self.key {
            req = req.header("Authorization", &format!("Bearer {k}"));
        }
        let mut resp = req.send_json(body).map_err(map_ureq)?;
        resp.body_mut().read_json::<T>().map_err(map_ureq)
    }
}

pub struct HttpEmbedder(pub HttpClient);

#[derive(Deserialize)]
struct VectorsReply {
    vectors: Vec<Vec<f64>>,
}

impl Embedder for HttpEmbedder {
    fn provider_id(&self) -> &str {
        self.0.id()
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, ProviderError> {
        let reply: VectorsReply = self.0.post(&json!({"texts": texts, "model": self.0.model()}))?;
        if reply.vectors.len() != texts.len() {
            return Err(ProviderError::Malformed(format!(
                "{} vectors for {} texts",
                reply.vectors.len(),
                texts.len()
            )));
        }
        Ok(reply.vectors)
    }
}

pub struct HttpLlm(pub HttpClient);

#[derive(Deserialize)]
struct CompletionReply {
    text: String,
    #[serde(default)]
    finish_reason: Option<String>,
    #[serde(default)]
    usage: Option<TokenUsage>,
}

fn finish_reason(s: Option<&str>) -> FinishReason {
    match s {
        None | Some("stop") => FinishReason::Stop,
        Some("length") => FinishReason::Length,
        Some("filtered") | Some("content_filter") => FinishReason::Filtered,
        Some(_) => FinishReason::Error,
    }
}

impl LlmProvider for HttpLlm {
    fn provider_id(&self) -> &str {
        self.0.id()
    }

    fn complete(&self, request: &GenerationRequest) -> Result<GenerationResult, ProviderError> {
        let t = Instant::now();
        let body = json!({
            "model": self.0.model(),
            "messages": [
                {"role": "system", "content": request.prompt.system},
                {"role": "user", "content": request.prompt.user},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let reply: CompletionReply = self.0.post(&body)?;
        Ok(GenerationResult {
            text: reply.text,
            provider_latency_ms: t.elapsed().as_millis() as u64,
            usage: reply.usage.unwrap_or_default(),
            finish_reason: finish_reason(reply.finish_reason.as_deref()),
            attempts: 1,
        })
    }
}

/// LLM-as-judge over the completion endpoint. Polls differ only by index so
/// a provider may vary its sampling seed.
pub struct HttpJudge(pub HttpClient);

impl Judge for HttpJudge {
    fn judge_id(&self) -> &str {
        self.0.id()
    }

    fn judge(&self, response: &str, context: &[&str], poll: usize) -> Result<bool, ProviderError> {
        let body = json!({
            "model": self.0.model(),
            "messages": [
                {"role": "system", "content": JUDGE_QUESTION},
                {"role": "user", "content": format!("Context:\n{}\n\nResponse:\n{response}", context.join("\n---\n"))},
            ],
            "temperature": 1.0,
            "max_tokens": 8,
            "seed": poll,
        });
        let reply: CompletionReply = self.0.post(&body)?;
        let word = reply.text.trim().to_ascii_lowercase();
        if word.starts_with("yes") {
            Ok(true)
        } else if word.starts_with("no") {
            Ok(false)
        } else {
            Err(ProviderError::Malformed(format!("judge said {:?}", reply.text)))
        }
    }
}

pub struct HttpAsr(pub HttpClient);

#[derive(Deserialize)]
struct AsrReply {
    text: String,
    #[serde(default = "one")]
    confidence: f64,
}

fn one() -> f64 {
    1.0
}

impl SpeechRecognizer for HttpAsr {
    fn provider_id(&self) -> &str {
        self.0.id()
    }

    fn transcribe(&self, audio: &AudioRef, lang: &str) -> Result<TranscriptionResult, ProviderError> {
        let reply: AsrReply = self.0.post(&json!({"audio_uri": audio.uri, "lang": lang}))?;
        Ok(TranscriptionResult {
            text: reply.text,
            language: lang.into(),
            confidence: reply.confidence,
        })
    }
}

pub struct HttpMt(pub HttpClient);

#[derive(Deserialize)]
struct TextReply {
    text: String,
}

impl Translator for HttpMt {
    fn provider_id(&self) -> &str {
        self.0.id()
    }

    fn translate(&self, text: &str, src: &str, tgt: &str) -> Result<String, ProviderError> {
        let reply: TextReply = self.0.post(&json!({"text": text, "src": src, "tgt": tgt}))?;
        Ok(reply.text)
    }
}

pub struct HttpTts(pub HttpClient);

#[derive(Deserialize)]
struct TtsReply {
    audio_uri: String,
}

impl SpeechSynthesizer for HttpTts {
    fn provider_id(&self) -> &str {
        self.0.id()
    }

    fn synthesize(&self, text: &str, lang: &str) -> Result<AudioRef, ProviderError> {
        let reply: TtsReply = self.0.post(&json!({"text": text, "lang": lang}))?;
        AudioRef::new(&reply.audio_uri).map_err(|e| ProviderError::Malformed(e.to_string()))
    }
}

/// Everything the engine may call out to.
#[derive(Clone)]
pub struct ProviderSet {
    pub embedder: Arc<dyn Embedder>,
    pub llm: Arc<dyn LlmProvider>,
    pub judge: Arc<dyn Judge>,
    pub asr: Option<Arc<dyn SpeechRecognizer>>,
    pub mt: Option<Arc<dyn Translator>>,
    pub tts: Option<Arc<dyn SpeechSynthesizer>>,
    /// Shared by all HTTP providers of one kind, keyed by kind.
    pub permits: BTreeMap<&'static str, Arc<Permits>>,
}

impl std::fmt::Debug for ProviderSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProviderSet")
            .field("embedder", &self.embedder.provider_id())
            .field("llm", &self.llm.provider_id())
            .field("judge", &self.judge.judge_id())
            .finish()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ProviderSetupError {
    #[error("{kind} provider: {message}")]
    Invalid { kind: &'static str, message: String },
}

impl ProviderSet {
    /// Offline providers only.
    pub fn mock(dimension: usize) -> Self {
        Self {
            embedder: Arc::new(HashingEmbedder::new(dimension)),
            llm: Arc::new(MockLlm::new()),
            judge: Arc::new(LexicalJudge::default()),
            asr: Some(Arc::new(MockAsr::default())),
            mt: Some(Arc::new(MockMt::new())),
            tts: Some(Arc::new(MockTts::new())),
            permits: BTreeMap::new(),
        }
    }

    pub fn from_config(cfg: &ServiceConfig) -> Result<Self, ProviderSetupError> {
        let mut set = Self::mock(cfg.embedding_dimension);
        let p = &cfg.providers;
        let mut client = |kind: &'static str, pc: &ProviderConfig| -> Result<HttpClient, ProviderSetupError> {
            let permits = set
                .permits
                .entry(kind)
                .or_insert_with(|| Arc::new(Permits::new(cfg.limits.provider_permits)))
                .clone();
            HttpClient::new(pc, permits).map_err(|e| ProviderSetupError::Invalid {
                kind,
                message: e.to_string(),
            })
        };
        if !p.embedding.is_mock() {
            if p.embedding.is_disabled() {
                return Err(ProviderSetupError::Invalid {
                    kind: "embedding",
                    message: "an embedding provider is required".into(),
                });
            }
            let c = client("embedding", &p.embedding)?;
            set.embedder = Arc::new(HttpEmbedder(c));
        }
        if !p.llm.is_mock() {
            if p.llm.is_disabled() {
                set.llm = Arc::new(Unavailable("none".into()));
            } else {
                set.llm = Arc::new(HttpLlm(client("llm", &p.llm)?));
            }
        }
        if !p.judge.is_mock() && !p.judge.is_disabled() {
            set.judge = Arc::new(HttpJudge(client("judge", &p.judge)?));
        }
        if p.asr.is_disabled() {
            set.asr = None;
        } else if p.asr.is_mock() {
            if let Some(path) = &cfg.asr_fixtures_path {
                let text = std::fs::read_to_string(path).map_err(|e| ProviderSetupError::Invalid {
                    kind: "asr",
                    message: format!("{}: {e}", path.display()),
                })?;
                let asr = MockAsr::from_json(&text).map_err(|e| ProviderSetupError::Invalid {
                    kind: "asr",
                    message: format!("{}: {e}", path.display()),
                })?;
                set.asr = Some(Arc::new(asr));
            }
        } else {
            set.asr = Some(Arc::new(HttpAsr(client("asr", &p.asr)?)));
        }
        if p.mt.is_disabled() {
            set.mt = None;
        } else if !p.mt.is_mock() {
            set.mt = Some(Arc::new(HttpMt(client("mt", &p.mt)?)));
        }
        if p.tts.is_disabled() {
            set.tts = None;
        } else if !p.tts.is_mock() {
            set.tts = Some(Arc::new(HttpTts(client("tts", &p.tts)?)));
        }
        Ok(set)
    }
}

/// An LLM that always reports itself unreachable; stands in when generation
/// is switched off so every low-relevance query escalates.
#[derive(Debug)]
pub struct Unavailable(pub String);

impl LlmProvider for Unavailable {
    fn provider_id(&self) -> &str {
        &self.0
    }

    fn complete(&self, _: &GenerationRequest) -> Result<GenerationResult, ProviderError> {
        Err(ProviderError::Unreachable("generation disabled".into()))
    }
}
