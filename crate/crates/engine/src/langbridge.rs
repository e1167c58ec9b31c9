//! Speech and translation plumbing around the pipeline: ASR on the way in,
//! MT in and out when the route asks for it, TTS on the way out.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use guardqa_core::generation::RetryPolicy;
use guardqa_core::provider::ProviderError;
use guardqa_core::sanitizer::{PiiKind, Sanitizer};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AudioFormat {
    Wav,
    Mp3,
    #[default]
    Opaque,
}

/// A pointer to audio held elsewhere. The engine never stores audio bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioRef {
    pub uri: String,
    #[serde(default)]
    pub duration: f64,
    #[serde(default)]
    pub format: AudioFormat,
}

impl AudioRef {
    pub fn new(uri: &str) -> Result<Self, LangError> {
        if uri.trim().is_empty() {
            return Err(LangError::EmptyUri);
        }
        let format = match uri.rsplit('.').next() {
            Some("wav") => AudioFormat::Wav,
            Some("mp3") => AudioFormat::Mp3,
            _ => AudioFormat::Opaque,
        };
        Ok(Self {
            uri: uri.to_string(),
            duration: 0.0,
            format,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptionResult {
    pub text: String,
    pub language: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RouteMode {
    #[default]
    Direct,
    Translate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LanguageRoute {
    pub mode: RouteMode,
    pub source_lang: String,
    pub pipeline_lang: String,
    pub output_lang: String,
}

impl Default for LanguageRoute {
    fn default() -> Self {
        Self::direct("hi")
    }
}

impl LanguageRoute {
    pub fn direct(lang: &str) -> Self {
        Self {
            mode: RouteMode::Direct,
            source_lang: lang.into(),
            pipeline_lang: lang.into(),
            output_lang: lang.into(),
        }
    }

    pub fn translate(source: &str, pipeline: &str) -> Self {
        Self {
            mode: RouteMode::Translate,
            source_lang: source.into(),
            pipeline_lang: pipeline.into(),
            output_lang: source.into(),
        }
    }

    /// The same route for a caller speaking `lang`. Translate mode keeps
    /// its pipeline language and drops to direct when the two coincide.
    pub fn for_language(&self, lang: &str) -> Self {
        if lang == self.source_lang {
            return self.clone();
        }
        match self.mode {
            RouteMode::Translate if lang != self.pipeline_lang => Self::translate(lang, &self.pipeline_lang),
            _ => Self::direct(lang),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        for (k, v) in [
            ("source_lang", &self.source_lang),
            ("pipeline_lang", &self.pipeline_lang),
            ("output_lang", &self.output_lang),
        ] {
            if v.trim().is_empty() {
                return Err(format!("{k} is empty"));
            }
        }
        match self.mode {
            RouteMode::Direct if self.pipeline_lang != self.source_lang => {
                Err("direct mode needs pipeline_lang equal to source_lang".into())
            }
            RouteMode::Translate if self.pipeline_lang == self.source_lang => {
                Err("translate mode needs pipeline_lang different from source_lang".into())
            }
            _ => Ok(()),
        }
    }
}

pub trait SpeechRecognizer: Send + Sync {
    fn provider_id(&self) -> &str;
    fn transcribe(&self, audio: &AudioRef, lang: &str) -> Result<TranscriptionResult, ProviderError>;
}

pub trait Translator: Send + Sync {
    fn provider_id(&self) -> &str;
    fn translate(&self, text: &str, src: &str, tgt: &str) -> Result<String, ProviderError>;
}

pub trait SpeechSynthesizer: Send + Sync {
    fn provider_id(&self) -> &str;
    fn synthesize(&self, text: &str, lang: &str) -> Result<AudioRef, ProviderError>;
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LangError {
    #[error("no fixture")]
    NoFixture,
    #[error("empty transcription")]
    EmptyTranscription,
    #[error("null translation")]
    NullTranslation,
    #[error("empty text")]
    EmptyText,
    #[error("empty audio uri")]
    EmptyUri,
    #[error("translation lost placeholder {0}")]
    PlaceholderLost(String),
    #[error("{0} provider not configured")]
    NotConfigured(&'static str),
    #[error("{stage} provider failed after {attempts} attempts: {last}")]
    Provider {
        stage: &'static str,
        attempts: u32,
        last: ProviderError,
    },
}

pub type Sleeper = Arc<dyn Fn(Duration) + Send + Sync>;

pub fn thread_sleeper() -> Sleeper {
    Arc::new(std::thread::sleep)
}

pub fn no_sleep() -> Sleeper {
    Arc::new(|_| {})
}

fn with_retry<T>(
    stage: &'static str,
    policy: &RetryPolicy,
    sleep: &Sleeper,
    call: impl FnMut(u32) -> Result<T, ProviderError>,
) -> Result<T, LangError> {
    policy
        .run(call, |d| sleep(d))
        .map(|(v, _)| v)
        .map_err(|(last, attempts)| match last {
            ProviderError::Rejected(ref m) if m == "no fixture" => LangError::NoFixture,
            last => LangError::Provider { stage, attempts, last },
        })
}

pub fn transcribe(
    audio: &AudioRef,
    lang: &str,
    provider: &dyn SpeechRecognizer,
    policy: &RetryPolicy,
    sleep: &Sleeper,
) -> Result<TranscriptionResult, LangError> {
    if audio.uri.trim().is_empty() {
        return Err(LangError::EmptyUri);
    }
    let mut out = with_retry("asr", policy, sleep, |_| provider.transcribe(audio, lang))?;
    if out.text.trim().is_empty() {
        return Err(LangError::EmptyTranscription);
    }
    out.confidence = out.confidence.clamp(0.0, 1.0);
    Ok(out)
}

const SENTINEL_OPEN: char = '⟦';
const SENTINEL_CLOSE: char = '⟧';

fn sentinel(i: usize) -> String {
    format!("{SENTINEL_OPEN}{i}{SENTINEL_CLOSE}")
}

/// Swap placeholders and glossary terms for numbered sentinels so the MT
/// provider cannot touch them. Returns the protected text and what each
/// sentinel becomes afterwards.
fn protect(text: &str, glossary: &BTreeMap<String, String>) -> (String, Vec<String>) {
    let mut restore = Vec::new();
    let mut out = text.to_string();
    for kind in PiiKind::ALL {
        let ph = kind.placeholder();
        if out.contains(&ph) {
            let s = sentinel(restore.len());
            out = out.replace(&ph, &s);
            restore.push(ph);
        }
    }
    // longest terms first so "birth control pill" beats "pill"
    let mut terms: Vec<(&String, &String)> = glossary.iter().filter(|(k, _)| !k.trim().is_empty()).collect();
    terms.sort_by(|a, b| b.0.chars().count().cmp(&a.0.chars().count()).then(a.0.cmp(b.0)));
    for (term, forced) in terms {
        let replaced = replace_word_ci(&out, term, &sentinel(restore.len()));
        if replaced != out {
            out = replaced;
            restore.push(forced.clone());
        }
    }
    (out, restore)
}

fn replace_word_ci(text: &str, term: &str, with: &str) -> String {
    let lower = text.to_lowercase();
    let needle = term.to_lowercase();
    if lower.len() != text.len() {
        // case folding changed byte offsets; fall back to exact matching
        return replace_word_exact(text, term, with);
    }
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    let mut from = 0;
    while let Some(pos) = lower[from..].find(&needle) {
        let start = from + pos;
        let end = start + needle.len();
        let before_ok = text[..start].chars().next_back().is_none_or(|c| !c.is_alphanumeric());
        let after_ok = text[end..].chars().next().is_none_or(|c| !c.is_alphanumeric());
        if before_ok && after_ok {
            out.push_str(&text[last..start]);
            out.push_str(with);
            last = end;
        }
        from = end;
    }
    out.push_str(&text[last..]);
    out
}

fn replace_word_exact(text: &str, term: &str, with: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for (start, m) in text.match_indices(term) {
        let end = start + m.len();
        let before_ok = text[..start].chars().next_back().is_none_or(|c| !c.is_alphanumeric());
        let after_ok = text[end..].chars().next().is_none_or(|c| !c.is_alphanumeric());
        if before_ok && after_ok && start >= last {
            out.push_str(&text[last..start]);
            out.push_str(with);
            last = end;
        }
    }
    out.push_str(&text[last..]);
    out
}

fn unprotect(text: &str, restore: &[String]) -> Result<String, LangError> {
    let mut out = text.to_string();
    for (i, r) in restore.iter().enumerate() {
        let s = sentinel(i);
        if !out.contains(&s) {
            return Err(LangError::PlaceholderLost(r.clone()));
        }
        out = out.replace(&s, r);
    }
    Ok(out)
}

fn placeholder_count(text: &str) -> usize {
    PiiKind::ALL.iter().map(|k| text.matches(&k.placeholder()).count()).sum()
}

pub fn translate(
    text: &str,
    src: &str,
    tgt: &str,
    provider: &dyn Translator,
    glossary: &BTreeMap<String, String>,
    policy: &RetryPolicy,
    sleep: &Sleeper,
) -> Result<String, LangError> {
    if src == tgt {
        return Err(LangError::NullTranslation);
    }
    let (protected, restore) = protect(text, glossary);
    let raw = with_retry("mt", policy, sleep, |_| provider.translate(&protected, src, tgt))?;
    let out = unprotect(&raw, &restore)?;
    let before = placeholder_count(text);
    if placeholder_count(&out) < before {
        return Err(LangError::PlaceholderLost("placeholder".into()));
    }
    Ok(out)
}

pub fn synthesize(
    text: &str,
    lang: &str,
    provider: &dyn SpeechSynthesizer,
    policy: &RetryPolicy,
    sleep: &Sleeper,
) -> Result<AudioRef, LangError> {
    if text.trim().is_empty() {
        return Err(LangError::EmptyText);
    }
    let out = with_retry("tts", policy, sleep, |_| provider.synthesize(text, lang))?;
    if out.uri.trim().is_empty() {
        return Err(LangError::Provider {
            stage: "tts",
            attempts: 1,
            last: ProviderError::Malformed("empty audio uri".into()),
        });
    }
    Ok(out)
}

/// Fixture-backed ASR: a uri maps to its registered transcript.
#[derive(Debug, Default)]
pub struct MockAsr {
    fixtures: BTreeMap<String, String>,
    calls: AtomicUsize,
}

impl MockAsr {
    pub const ID: &'static str = "mock";

    pub fn new(fixtures: BTreeMap<String, String>) -> Self {
        Self {
            fixtures,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        Ok(Self::new(serde_json::from_str(text)?))
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

impl SpeechRecognizer for MockAsr {
    fn provider_id(&self) -> &str {
        Self::ID
    }

    fn transcribe(&self, audio: &AudioRef, lang: &str) -> Result<TranscriptionResult, ProviderError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let text = self
            .fixtures
            .get(&audio.uri)
            .ok_or_else(|| ProviderError::Rejected("no fixture".into()))?;
        Ok(TranscriptionResult {
            text: text.clone(),
            language: lang.to_string(),
            confidence: 1.0,
        })
    }
}

/// Marks text with its language pair instead of translating it.
#[derive(Debug, Default)]
pub struct MockMt {
    calls: AtomicUsize,
}

impl MockMt {
    pub const ID: &'static str = "mock";

    pub fn new() -> Self {
        Self::default()
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn marker(src: &str, tgt: &str) -> String {
        format!("⟪{src}→{tgt}⟫")
    }
}

impl Translator for MockMt {
    fn provider_id(&self) -> &str {
        Self::ID
    }

    fn translate(&self, text: &str, src: &str, tgt: &str) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        Ok(format!("{}{text}", Self::marker(src, tgt)))
    }
}

#[derive(Debug, Default)]
pub struct MockTts {
    calls: AtomicUsize,
}

impl MockTts {
    pub const ID: &'static str = "mock";
    pub const SCHEME: &'static str = "mock-tts://";

    pub fn new() -> Self {
        Self::default()
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

impl SpeechSynthesizer for MockTts {
    fn provider_id(&self) -> &str {
        Self::ID
    }

    fn synthesize(&self, text: &str, lang: &str) -> Result<AudioRef, ProviderError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let mut h = Sha256::new();
        h.update(lang.as_bytes());
        h.update([0]);
        h.update(text.as_bytes());
        let hex: String = h.finalize()[..16].iter().map(|b| format!("{b:02x}")).collect();
        Ok(AudioRef {
            uri: format!("{}{hex}", Self::SCHEME),
            duration: 0.0,
            format: AudioFormat::Opaque,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum QueryInput {
    Text(String),
    Audio(AudioRef),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutedInput {
    /// What the pipeline sees, in the pipeline language.
    pub text: String,
    /// The query in the caller's language; raw for text input.
    pub source_text: String,
    pub transcription: Option<TranscriptionResult>,
    pub from_audio: bool,
    pub stages: Vec<(String, u64)>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RoutedOutput {
    pub text: String,
    pub audio: Option<AudioRef>,
    pub warnings: Vec<String>,
    pub stages: Vec<(String, u64)>,
}

fn elapsed_us(t: Instant) -> u64 {
    t.elapsed().as_micros() as u64
}

/// Route plus the providers it may call. Missing providers are `None`.
#[derive(Clone)]
pub struct LangBridge {
    pub route: LanguageRoute,
    pub asr: Option<Arc<dyn SpeechRecognizer>>,
    pub mt: Option<Arc<dyn Translator>>,
    pub tts: Option<Arc<dyn SpeechSynthesizer>>,
    pub glossary: BTreeMap<String, String>,
    pub retry: RetryPolicy,
    pub sleep: Sleeper,
}

impl std::fmt::Debug for LangBridge {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LangBridge")
            .field("route", &self.route)
            .field("asr", &self.asr.as_ref().map(|p| p.provider_id().to_string()))
            .field("mt", &self.mt.as_ref().map(|p| p.provider_id().to_string()))
            .field("tts", &self.tts.as_ref().map(|p| p.provider_id().to_string()))
            .finish()
    }
}

impl LangBridge {
    /// All-mock bridge with an empty fixture registry.
    pub fn mock(route: LanguageRoute) -> Self {
        Self {
            route,
            asr: Some(Arc::new(MockAsr::default())),
            mt: Some(Arc::new(MockMt::new())),
            tts: Some(Arc::new(MockTts::new())),
            glossary: BTreeMap::new(),
            retry: RetryPolicy::default(),
            sleep: no_sleep(),
        }
    }

    /// Input half of the route. In translate mode the text is redacted
    /// before it leaves for the MT provider.
    pub fn route_input(
        &self,
        input: &QueryInput,
        route: &LanguageRoute,
        sanitizer: &Sanitizer,
    ) -> Result<RoutedInput, LangError> {
        let mut stages = Vec::new();
        let (source_text, transcription, from_audio) = match input {
            QueryInput::Text(t) => (t.clone(), None, false),
            QueryInput::Audio(a) => {
                let t = Instant::now();
                let asr = self.asr.as_deref().ok_or(LangError::NotConfigured("asr"))?;
                let tr = transcribe(a, &route.source_lang, asr, &self.retry, &self.sleep)?;
                stages.push(("asr".to_string(), elapsed_us(t)));
                (tr.text.clone(), Some(tr), true)
            }
        };
        let text = match route.mode {
            RouteMode::Direct => source_text.clone(),
            RouteMode::Translate => {
                let t = Instant::now();
                let mt = self.mt.as_deref().ok_or(LangError::NotConfigured("mt"))?;
                let redacted = sanitizer.redact(&source_text).text;
                let out = translate(
                    &redacted,
                    &route.source_lang,
                    &route.pipeline_lang,
                    mt,
                    &self.glossary,
                    &self.retry,
                    &self.sleep,
                )?;
                stages.push(("mt_in".to_string(), elapsed_us(t)));
                out
            }
        };
        Ok(RoutedInput {
            text,
            source_text,
            transcription,
            from_audio,
            stages,
        })
    }

    /// Output half. Never fails: a failed translation keeps the pipeline
    /// language text and a failed synthesis drops the audio, each with a
    /// warning.
    pub fn route_output(&self, answer: &str, route: &LanguageRoute, speak: bool) -> RoutedOutput {
        let mut out = RoutedOutput {
            text: answer.to_string(),
            ..RoutedOutput::default()
        };
        let mut lang = route.pipeline_lang.clone();
        if route.mode == RouteMode::Translate && route.output_lang != route.pipeline_lang {
            let t = Instant::now();
            match self.mt.as_deref() {
                None => out.warnings.push("mt provider not configured; answer left untranslated".into()),
                Some(mt) => match translate(
                    answer,
                    &route.pipeline_lang,
                    &route.output_lang,
                    mt,
                    &self.glossary,
                    &self.retry,
                    &self.sleep,
                ) {
                    Ok(text) => {
                        out.text = text;
                        lang = route.output_lang.clone();
                    }
                    Err(e) => out.warnings.push(format!("output translation failed: {e}")),
                },
            }
            out.stages.push(("mt_out".to_string(), elapsed_us(t)));
        }
        if speak {
            let t = Instant::now();
            match self.tts.as_deref() {
                None => out.warnings.push("tts provider not configured; text only".into()),
                Some(tts) => match synthesize(&out.text, &lang, tts, &self.retry, &self.sleep) {
                    Ok(a) => out.audio = Some(a),
                    Err(e) => out.warnings.push(format!("speech synthesis failed: {e}")),
                },
            }
            out.stages.push(("tts".to_string(), elapsed_us(t)));
        }
        out
    }
}
