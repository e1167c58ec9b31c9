//! Prompt construction, ICL example selection, the LLM provider contract and
//! the retry policy shared by every provider call.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicUsize, Ordering};
use core::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::QARecord;
use crate::provider::ProviderError;
use crate::retrieval::RetrievalHit;
use crate::text::collapse_whitespace;

pub const DEFAULT_TEMPERATURE: f64 = 0.2;
pub const DEFAULT_MAX_TOKENS: u32 = 512;
pub const DEFAULT_ICL_EXAMPLES: usize = 3;
pub const DEFAULT_CONTEXT_PASSAGES: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IclExample {
    pub record_id: String,
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextPassage {
    pub record_id: String,
    pub question: String,
    pub answer: String,
}

impl ContextPassage {
    pub fn from_record(r: &QARecord) -> Self {
        Self {
            record_id: r.id.clone(),
            question: r.sanitized_question.clone(),
            answer: r.answer.clone(),
        }
    }

    /// Text the grounding rail compares against.
    pub fn grounding_text(&self) -> String {
        format!("{} {}", self.question, self.answer)
    }
}

/// Top hits as `(question, answer)` pairs, one per paraphrase group, in hit
/// order, at most `k`.
pub fn select_icl_examples<'a>(
    hits: &[RetrievalHit],
    k: usize,
    lookup: impl Fn(&str) -> Option<&'a QARecord>,
) -> Vec<IclExample> {
    let mut groups = BTreeSet::new();
    let mut out = Vec::new();
    for h in hits {
        if out.len() >= k {
            break;
        }
        let Some(r) = lookup(&h.record_id) else {
            continue;
        };
        if groups.insert(r.group_id.as_str()) {
            out.push(IclExample {
                record_id: r.id.clone(),
                question: r.sanitized_question.clone(),
                answer: r.answer.clone(),
            });
        }
    }
    out
}

/// The first `k` hits as context passages.
pub fn select_context<'a>(
    hits: &[RetrievalHit],
    k: usize,
    lookup: impl Fn(&str) -> Option<&'a QARecord>,
) -> Vec<ContextPassage> {
    hits.iter()
        .filter_map(|h| lookup(&h.record_id))
        .take(k)
        .map(ContextPassage::from_record)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("template slot {0} is missing")]
    MissingSlot(&'static str),
    #[error("template slot {0} appears more than once")]
    RepeatedSlot(&'static str),
    #[error("query is empty")]
    EmptyQuery,
}

/// A system preamble and a body with `{examples}`, `{context}` and
/// `{query}` slots. `{query}` is mandatory and must appear once; the
/// preamble may use `{language}` and nothing else.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptTemplate {
    pub system_preamble: String,
    pub body: String,
    pub language_directive: String,
}

pub const SLOT_EXAMPLES: &str = "{examples}";
pub const SLOT_CONTEXT: &str = "{context}";
pub const SLOT_QUERY: &str = "{query}";
pub const CONTEXT_LABEL: &str = "[record ";

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            system_preamble: "You are a warm, non-judgemental sexual and reproductive health educator for adolescents and young adults.\n\
Rules:\n\
- Never ask for or repeat names, phone numbers, ages, places or other personal details.\n\
- Only answer questions about sexual and reproductive health, puberty, relationships and wellbeing. Politely refuse anything else.\n\
- Answer in {language}, in short, simple sentences.\n\
- If the reference material does not cover the question, say \"I don't know\" and suggest speaking to a counsellor. Do not invent facts."
                .into(),
            body: "{examples}{context}User question:\n{query}\n\nAnswer:".into(),
            language_directive: "hi".into(),
        }
    }
}

/// A rendered prompt. `system` never contains user text; `user` holds the
/// examples, context and query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub system: String,
    pub user: String,
}

impl Prompt {
    pub fn text(&self) -> String {
        format!("{}\n\n{}", self.system, self.user)
    }
}

pub fn language_name(tag: &str) -> &str {
    match tag {
        "hi" => "Hindi",
        "en" => "English",
        "bn" => "Bengali",
        "ta" => "Tamil",
        other => other,
    }
}

impl PromptTemplate {
    pub fn validate(&self) -> Result<(), PromptError> {
        for slot in [SLOT_EXAMPLES, SLOT_CONTEXT, SLOT_QUERY] {
            let n = self.body.matches(slot).count();
            if n > 1 {
                return Err(PromptError::RepeatedSlot(slot_name(slot)));
            }
            if n == 0 && slot == SLOT_QUERY {
                return Err(PromptError::MissingSlot("query"));
            }
        }
        Ok(())
    }

    /// Deterministic rendering. Slots are substituted in a single left to
    /// right pass, so slot markers inside user text stay literal.
    pub fn render(&self, query: &str, examples: &[IclExample], context: &[ContextPassage]) -> Result<Prompt, PromptError> {
        self.validate()?;
        let query = collapse_whitespace(query);
        if query.is_empty() {
            return Err(PromptError::EmptyQuery);
        }
        if (!examples.is_empty() && !self.body.contains(SLOT_EXAMPLES))
            || (!context.is_empty() && !self.body.contains(SLOT_CONTEXT))
        {
            let slot = if examples.is_empty() { "context" } else { "examples" };
            return Err(PromptError::MissingSlot(slot));
        }
        let system = self
            .system_preamble
            .replace("{language}", language_name(&self.language_directive));

        let mut ex = String::new();
        if !examples.is_empty() {
            ex.push_str("Examples:\n");
            for e in examples {
                ex.push_str(&format!("Q: {}\nA: {}\n\n", e.question, e.answer));
            }
        }
        let mut ctx = String::new();
        if !context.is_empty() {
            ctx.push_str("Reference material:\n");
            for c in context {
                ctx.push_str(&format!("{CONTEXT_LABEL}{}]\nQ: {}\nA: {}\n\n", c.record_id, c.question, c.answer));
            }
        }

        let mut user = String::with_capacity(self.body.len() + ex.len() + ctx.len() + query.len());
        let mut rest = self.body.as_str();
        while let Some(open) = rest.find('{') {
            user.push_str(&rest[..open]);
            let tail = &rest[open..];
            let (fill, len) = if tail.starts_with(SLOT_EXAMPLES) {
                (ex.as_str(), SLOT_EXAMPLES.len())
            } else if tail.starts_with(SLOT_CONTEXT) {
                (ctx.as_str(), SLOT_CONTEXT.len())
            } else if tail.starts_with(SLOT_QUERY) {
                (query.as_str(), SLOT_QUERY.len())
            } else {
                ("{", 1)
            };
            user.push_str(fill);
            rest = &tail[len..];
        }
        user.push_str(rest);
        Ok(Prompt { system, user })
    }
}

fn slot_name(slot: &str) -> &'static str {
    match slot {
        SLOT_EXAMPLES => "examples",
        SLOT_CONTEXT => "context",
        _ => "query",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: Prompt,
    pub max_tokens: u32,
    pub temperature: f64,
    pub provider_id: String,
    pub timeout_ms: u64,
    pub attempt: u32,
}

impl GenerationRequest {
    pub fn new(prompt: Prompt, provider_id: &str) -> Self {
        Self {
            prompt,
            max_tokens: DEFAULT_MAX_TOKENS,
            temperature: DEFAULT_TEMPERATURE,
            provider_id: provider_id.into(),
            timeout_ms: 30_000,
            attempt: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
    Filtered,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u32,
    pub completion_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub text: String,
    pub provider_latency_ms: u64,
    pub usage: TokenUsage,
    pub finish_reason: FinishReason,
    pub attempts: u32,
}

/// One chat-completion call. Retries are the caller's job (see
/// [`RetryPolicy`]).
pub trait LlmProvider: Send + Sync {
    fn provider_id(&self) -> &str;

    fn complete(&self, request: &GenerationRequest) -> Result<GenerationResult, ProviderError>;
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GenerationError {
    #[error("provider unavailable")]
    Unavailable { attempts: u32, last: ProviderError },
    #[error("provider refused the request: {0}")]
    Rejected(ProviderError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// Exponential backoff: attempt `i` (0-based) waits `base · factor^(i-1)`
/// before running, for at most `1 + max_retries` attempts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_ms: u64,
    pub factor: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 2,
            base_ms: 500,
            factor: 2,
        }
    }
}

impl RetryPolicy {
    pub fn delay_before(&self, attempt: u32) -> Duration {
        if attempt == 0 {
            return Duration::ZERO;
        }
        let mult = (self.factor as u64).saturating_pow(attempt - 1);
        Duration::from_millis(self.base_ms.saturating_mul(mult))
    }

    /// Run `call` until it succeeds, fails without being retriable, or the
    /// attempts run out. `sleep` is handed each backoff delay.
    pub fn run<T>(
        &self,
        mut call: impl FnMut(u32) -> Result<T, ProviderError>,
        mut sleep: impl FnMut(Duration),
    ) -> Result<(T, u32), (ProviderError, u32)> {
        let mut attempt = 0;
        loop {
            let wait = self.delay_before(attempt);
            if !wait.is_zero() {
                sleep(wait);
            }
            match call(attempt) {
                Ok(v) => return Ok((v, attempt + 1)),
                Err(e) if e.is_retriable() && attempt < self.max_retries => attempt += 1,
                Err(e) => return Err((e, attempt + 1)),
            }
        }
    }
}

/// `generate` with retries: retriable failures are retried per `policy`;
/// exhausting them gives [`GenerationError::Unavailable`].
pub fn generate(
    provider: &dyn LlmProvider,
    request: &GenerationRequest,
    policy: &RetryPolicy,
    sleep: impl FnMut(Duration),
) -> Result<GenerationResult, GenerationError> {
    let outcome = policy.run(
        |attempt| {
            let mut req = request.clone();
            req.attempt = attempt;
            provider.complete(&req)
        },
        sleep,
    );
    match outcome {
        Ok((mut result, attempts)) => {
            result.attempts = attempts;
            if result.finish_reason == FinishReason::Stop && result.text.trim().is_empty() {
                result.finish_reason = FinishReason::Error;
            }
            Ok(result)
        }
        Err((e, attempts)) if e.is_retriable() => Err(GenerationError::Unavailable { attempts, last: e }),
        Err((e, _)) => Err(GenerationError::Rejected(e)),
    }
}

pub const MOCK_UNKNOWN_ANSWER: &str =
    "I don't know the answer to this yet. Please speak to a trained counsellor for help.";

/// Offline LLM: echoes the answer of the first context passage followed by
/// its record id, or a fixed "I don't know" reply when there is none.
#[derive(Debug, Default)]
pub struct MockLlm {
    calls: AtomicUsize,
}

impl MockLlm {
    pub const ID: &'static str = "mock";

    pub fn new() -> Self {
        Self::default()
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn respond(prompt: &Prompt) -> String {
        match first_context(&prompt.user) {
            Some((id, answer)) => format!("{answer} (source: {id})"),
            None => MOCK_UNKNOWN_ANSWER.into(),
        }
    }
}

fn first_context(user: &str) -> Option<(&str, &str)> {
    let at = user.find(CONTEXT_LABEL)?;
    let rest = &user[at + CONTEXT_LABEL.len()..];
    let close = rest.find(']')?;
    let id = &rest[..close];
    let after = &rest[close..];
    let a = after.find("\nA: ")?;
    let answer = &after[a + 4..];
    let end = answer.find('\n').unwrap_or(answer.len());
    Some((id, &answer[..end]))
}

impl LlmProvider for MockLlm {
    fn provider_id(&self) -> &str {
        Self::ID
    }

    fn complete(&self, request: &GenerationRequest) -> Result<GenerationResult, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let text = Self::respond(&request.prompt);
        let prompt_tokens = crate::text::tokenize(&request.prompt.text()).len() as u32;
        let completion_tokens = crate::text::tokenize(&text).len() as u32;
        Ok(GenerationResult {
            text,
            provider_latency_ms: 0,
            usage: TokenUsage {
                prompt_tokens,
                completion_tokens,
            },
            finish_reason: FinishReason::Stop,
            attempts: 1,
        })
    }
}

/// Short stable digest of a prompt, for traces that must not carry the text.
pub fn prompt_digest(prompt: &Prompt) -> String {
    let d = Sha256::digest(prompt.text().as_bytes());
    d[..8].iter().map(|b| format!("{b:02x}")).collect()
}
