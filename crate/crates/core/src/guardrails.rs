//! Deterministic input and output rails.
//!
//! A rule set is an ordered list of [`RailRule`]s compiled once. Checking a
//! text runs every rule of the matching stage; the verdict is the most severe
//! action among the rules that fired.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use alloc::{format, vec};

use aho_corasick::AhoCorasick;
use regex_automata::meta::Regex;
use regex_automata::util::syntax;
use serde::{Deserialize, Serialize};

use crate::sanitizer::{PiiKind, Sanitizer};
use crate::text::{collapse_whitespace, Tokenizer, CONTENT_STOPWORDS};

/// Enforcement actions in increasing severity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
pub enum Action {
    #[default]
    Allow,
    Redact,
    Escalate,
    Refuse,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Allow, Action::Redact, Action::Escalate, Action::Refuse];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Input,
    Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    Blocklist,
    Pattern,
    Pii,
    Topic,
    Grounding,
}

/// Rule-specific settings. Which fields matter depends on the kind:
/// `patterns` for pattern rules, `words` (plus `words_file`, resolved by the
/// loader) for blocklists, `threshold` for topic and grounding rules.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RulePayload {
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub patterns: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub words: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub words_file: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RailRule {
    pub id: String,
    pub stage: Stage,
    pub kind: RuleKind,
    #[serde(default)]
    pub payload: RulePayload,
    pub action_on_trigger: Action,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Verdict {
    pub action: Action,
    pub triggered: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transformed_text: Option<String>,
    /// Human-readable reasons such as `low grounding`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grounding_recall: Option<f64>,
}

impl Verdict {
    pub fn allow() -> Self {
        Self::default()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RailReport {
    pub input_verdict: Verdict,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_verdict: Option<Verdict>,
    /// Stage name to microseconds.
    #[serde(default)]
    pub timings_us: Vec<(String, u64)>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RuleError {
    #[error("duplicate rule id {0}")]
    DuplicateId(String),
    #[error("rule {id}: bad pattern {pattern:?}: {message}")]
    BadPattern { id: String, pattern: String, message: String },
    #[error("rule {id}: {message}")]
    Invalid { id: String, message: String },
}

pub const NOTE_LOW_GROUNDING: &str = "low grounding";
pub const NOTE_UNGROUNDED: &str = "ungrounded-by-construction";
pub const NOTE_OFF_TOPIC: &str = "off topic";

pub const DEFAULT_TOPIC_THRESHOLD: f64 = 0.05;
pub const DEFAULT_GROUNDING_THRESHOLD: f64 = 0.3;

/// Prompt-injection patterns, matched case-insensitively on
/// whitespace-collapsed text.
pub const INJECTION_PATTERNS: &[&str] = &[
    r"\b(ignore|disregard|skip|bypass)\s+(all\s+|any\s+|the\s+|your\s+|of\s+)*(previous|prior|above|earlier|preceding|original|system)\s+(instructions?|prompts?|rules|directions|guidelines|messages)",
    r"\bforget\s+(all\s+|about\s+)?(your|the|previous|prior|earlier)\s+(instructions?|rules|guidelines|training)",
    r"\bforget\s+everything\s+(above|before|you)",
    r"\bsystem\s+prompt",
    r"\bpretend\s+(you\s+are|you're|to\s+be)\b",
    r"\b(act|behave)\s+as\s+(an?\s+)?(unfiltered|uncensored|unrestricted|jailbroken|evil)\b",
    r"\bjailbr(eak|oken)",
    r"\bdeveloper\s+mode\b",
    r"\byou\s+are\s+now\s+(an?\s+)?(unfiltered|uncensored|unrestricted|free|evil|dan)\b",
    r"\b(reveal|show|print|repeat|leak)\s+(me\s+)?(your|the)\s+(hidden\s+|secret\s+|initial\s+)?(instructions|prompt|rules|guidelines)",
    r"\boverride\s+(your\s+|the\s+|all\s+)?(safety|rules|guardrails|filters|instructions)",
    r"\bnew\s+instructions\s*:",
    r"\b(pichhle|pichle|pehle\s+ke|purane)\s+(sabhi\s+|saare\s+|sare\s+)?(nirdesh|instructions|niyam)\s+(bhool|bhul|ignore|chhod)",
    r"\bapne\s+(niyam|nirdesh|rules)\s+(bhool|bhul|tod|ignore)",
];

/// Abuse directed at the service or at people. Domain vocabulary (anatomy,
/// sex, contraception) is deliberately absent.
pub const ABUSE_WORDS: &[&str] = &[
    "idiot", "stupid bot", "moron", "bastard", "bitch", "asshole", "motherfucker", "fuck you",
    "fuck off", "shut up bitch", "son of a bitch", "dumbass", "retard", "scumbag", "kutta",
    "kutte", "kutti", "kamina", "kamine", "kameena", "harami", "haramzada", "haramkhor", "chutiya",
    "chutiye", "madarchod", "behenchod", "bhenchod", "gandu", "randi", "bhosdike", "ullu ka pattha",
    "suar", "tatti", "nalayak",
];

/// Slurs and degrading language that must never be spoken to a caller.
pub const TOXIC_WORDS: &[&str] = &[
    "slut", "whore", "bitch", "bastard", "retard", "worthless", "disgusting girl", "dirty girl",
    "randi", "chutiya", "harami", "kamina", "besharam",
    "fuck", "idiot",
];

struct Compiled {
    rule: RailRule,
    matcher: Matcher,
}

enum Matcher {
    Patterns(Vec<Regex>),
    Words(Option<AhoCorasick>),
    Pii,
    Threshold(f64),
}

/// Compiled rule set. Cloning shares nothing mutable; reloading is a swap.
pub struct RuleSet {
    compiled: Vec<Compiled>,
    sanitizer: Sanitizer,
    content: Tokenizer,
}

impl core::fmt::Debug for RuleSet {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("RuleSet")
            .field("rules", &self.compiled.iter().map(|c| c.rule.id.as_str()).collect::<Vec<_>>())
            .finish()
    }
}

impl RuleSet {
    pub fn new(rules: Vec<RailRule>, sanitizer: Sanitizer) -> Result<Self, RuleError> {
        let mut seen = BTreeSet::new();
        let mut compiled = Vec::with_capacity(rules.len());
        for rule in rules {
            if !seen.insert(rule.id.clone()) {
                return Err(RuleError::DuplicateId(rule.id));
            }
            if rule.action_on_trigger == Action::Allow {
                return Err(invalid(&rule, "action_on_trigger must not be Allow"));
            }
            let matcher = match rule.kind {
                RuleKind::Pattern => Matcher::Patterns(compile_patterns(&rule)?),
                RuleKind::Blocklist => Matcher::Words(compile_words(&rule)?),
                RuleKind::Pii => Matcher::Pii,
                RuleKind::Topic | RuleKind::Grounding => {
                    let default = if rule.kind == RuleKind::Topic {
                        DEFAULT_TOPIC_THRESHOLD
                    } else {
                        DEFAULT_GROUNDING_THRESHOLD
                    };
                    let t = rule.payload.threshold.unwrap_or(default);
                    if !(0.0..=1.0).contains(&t) {
                        return Err(invalid(&rule, "threshold must lie in [0, 1]"));
                    }
                    Matcher::Threshold(t)
                }
            };
            match (rule.kind, rule.stage) {
                (RuleKind::Topic, Stage::Output) => return Err(invalid(&rule, "topic rules apply to input only")),
                (RuleKind::Grounding, Stage::Input) => return Err(invalid(&rule, "grounding rules apply to output only")),
                _ => {}
            }
            compiled.push(Compiled { rule, matcher });
        }
        Ok(Self {
            compiled,
            sanitizer,
            content: Tokenizer::with_stopwords(CONTENT_STOPWORDS.iter().copied()),
        })
    }

    pub fn rules(&self) -> impl Iterator<Item = &RailRule> {
        self.compiled.iter().map(|c| &c.rule)
    }

    pub fn sanitizer(&self) -> &Sanitizer {
        &self.sanitizer
    }

    pub fn topic_threshold(&self) -> Option<f64> {
        self.compiled.iter().find_map(|c| match (&c.rule.kind, &c.matcher) {
            (RuleKind::Topic, Matcher::Threshold(t)) => Some(*t),
            _ => None,
        })
    }

    /// Input rails. `topic_score` is the best retrieval `final_score` for the
    /// (redacted) query, or `None` when the caller did not run retrieval, in
    /// which case topic rules are skipped.
    pub fn check_input(&self, query: &str, topic_score: Option<f64>) -> Verdict {
        let text = collapse_whitespace(query);
        let mut fired: Vec<(&RailRule, Action)> = Vec::new();
        let mut verdict = Verdict::allow();
        for c in self.stage(Stage::Input) {
            let hit = match (&c.matcher, c.rule.kind) {
                (Matcher::Patterns(p), _) => p.iter().any(|r| r.is_match(&text)),
                (Matcher::Words(w), _) => words_hit(w.as_ref(), &text),
                (Matcher::Pii, _) => !self.sanitizer.is_clean(&text),
                (Matcher::Threshold(t), RuleKind::Topic) => match topic_score {
                    Some(s) if s < *t => {
                        verdict.notes.push(NOTE_OFF_TOPIC.into());
                        true
                    }
                    _ => false,
                },
                (Matcher::Threshold(_), _) => false,
            };
            if hit {
                fired.push((&c.rule, c.rule.action_on_trigger));
            }
        }
        self.finish(verdict, &text, &fired)
    }

    /// Output rails over a response and the passages it should rest on.
    pub fn check_output(&self, response: &str, context: &[&str]) -> Verdict {
        let text = collapse_whitespace(response);
        let mut fired: Vec<(&RailRule, Action)> = Vec::new();
        let mut verdict = Verdict::allow();
        for c in self.stage(Stage::Output) {
            let hit = match (&c.matcher, c.rule.kind) {
                (Matcher::Patterns(p), _) => p.iter().any(|r| r.is_match(&text)),
                (Matcher::Words(w), _) => words_hit(w.as_ref(), &text),
                (Matcher::Pii, _) => !self.sanitizer.is_clean(&text),
                (Matcher::Threshold(t), RuleKind::Grounding) => {
                    if context.iter().all(|p| p.trim().is_empty()) {
                        push_note(&mut verdict, NOTE_UNGROUNDED);
                        false
                    } else {
                        let recall = self.grounding_recall(&text, context);
                        verdict.grounding_recall = Some(recall);
                        if recall < *t {
                            push_note(&mut verdict, NOTE_LOW_GROUNDING);
                            true
                        } else {
                            false
                        }
                    }
                }
                (Matcher::Threshold(_), _) => false,
            };
            if hit {
                fired.push((&c.rule, c.rule.action_on_trigger));
            }
        }
        self.finish(verdict, &text, &fired)
    }

    /// Output PII rules only, for curated answers served from the corpus.
    pub fn check_retrieved(&self, answer: &str) -> Verdict {
        let text = collapse_whitespace(answer);
        let fired: Vec<(&RailRule, Action)> = self
            .stage(Stage::Output)
            .filter(|c| matches!(c.matcher, Matcher::Pii) && !self.sanitizer.is_clean(&text))
            .map(|c| (&c.rule, c.rule.action_on_trigger))
            .collect();
        self.finish(Verdict::allow(), &text, &fired)
    }

    /// Share of the response's content-token occurrences that also occur
    /// somewhere in the context. A response with no content tokens is fully
    /// grounded.
    pub fn grounding_recall(&self, response: &str, context: &[&str]) -> f64 {
        grounding_recall_with(&self.content, response, context)
    }

    fn stage(&self, stage: Stage) -> impl Iterator<Item = &Compiled> {
        self.compiled.iter().filter(move |c| c.rule.stage == stage)
    }

    fn finish(&self, mut verdict: Verdict, text: &str, fired: &[(&RailRule, Action)]) -> Verdict {
        verdict.action = compose(fired.iter().map(|(_, a)| *a));
        verdict.triggered = fired.iter().map(|(r, _)| r.id.clone()).collect();
        if verdict.action == Action::Redact {
            verdict.transformed_text = Some(self.sanitizer.redact(text).text);
        }
        verdict
    }
}

fn push_note(v: &mut Verdict, note: &str) {
    v.notes.push(note.to_string());
}

/// Content-token grounding recall with an explicit tokenizer.
pub fn grounding_recall_with(tokenizer: &Tokenizer, response: &str, context: &[&str]) -> f64 {
    let resp = tokenizer.tokenize(response);
    if resp.is_empty() {
        return 1.0;
    }
    let mut ctx: BTreeSet<String> = BTreeSet::new();
    for p in context {
        ctx.extend(tokenizer.tokenize(p).into_inner());
    }
    let found = resp.iter().filter(|t| ctx.contains(t.as_str())).count();
    found as f64 / resp.len() as f64
}

/// The most severe action, `Allow` when nothing fired.
pub fn compose(actions: impl IntoIterator<Item = Action>) -> Action {
    actions.into_iter().max().unwrap_or(Action::Allow)
}

fn invalid(rule: &RailRule, message: &str) -> RuleError {
    RuleError::Invalid {
        id: rule.id.clone(),
        message: message.into(),
    }
}

fn compile_patterns(rule: &RailRule) -> Result<Vec<Regex>, RuleError> {
    if rule.payload.patterns.is_empty() {
        return Err(invalid(rule, "pattern rule without patterns"));
    }
    rule.payload
        .patterns
        .iter()
        .map(|p| {
            Regex::builder()
                .syntax(syntax::Config::new().case_insensitive(true))
                .build(p)
                .map_err(|e| RuleError::BadPattern {
                    id: rule.id.clone(),
                    pattern: p.clone(),
                    message: e.to_string(),
                })
        })
        .collect()
}

// Entries and texts are both reduced to space-joined tokens with a space on
// each side, so entries only match whole token runs.
fn compile_words(rule: &RailRule) -> Result<Option<AhoCorasick>, RuleError> {
    let entries: Vec<String> = rule
        .payload
        .words
        .iter()
        .map(|w| token_key(w))
        .filter(|k| k.len() > 2)
        .collect();
    if entries.is_empty() {
        return Ok(None);
    }
    AhoCorasick::new(entries)
        .map(Some)
        .map_err(|e| invalid(rule, &format!("bad word list: {e}")))
}

fn token_key(text: &str) -> String {
    let tokens = crate::text::tokenize(text);
    let mut key = String::from(" ");
    for t in tokens.iter() {
        key.push_str(t);
        key.push(' ');
    }
    key
}

fn words_hit(ac: Option<&AhoCorasick>, text: &str) -> bool {
    ac.is_some_and(|ac| ac.is_match(&token_key(text)))
}

/// The default rule set: injection and abuse refusals, PII redaction and an
/// off-topic escalation on input; PII, toxicity and grounding on output.
pub fn default_rules() -> Vec<RailRule> {
    let words = |ws: &[&str]| ws.iter().map(|w| String::from(*w)).collect::<Vec<_>>();
    let rule = |id: &str, stage, kind, payload, action| RailRule {
        id: id.into(),
        stage,
        kind,
        payload,
        action_on_trigger: action,
    };
    vec![
        rule(
            "input.injection",
            Stage::Input,
            RuleKind::Pattern,
            RulePayload {
                patterns: words(INJECTION_PATTERNS),
                ..Default::default()
            },
            Action::Refuse,
        ),
        rule(
            "input.abuse",
            Stage::Input,
            RuleKind::Blocklist,
            RulePayload {
                words: words(ABUSE_WORDS),
                ..Default::default()
            },
            Action::Refuse,
        ),
        rule("input.pii", Stage::Input, RuleKind::Pii, RulePayload::default(), Action::Redact),
        rule(
            "input.topic",
            Stage::Input,
            RuleKind::Topic,
            RulePayload {
                threshold: Some(DEFAULT_TOPIC_THRESHOLD),
                ..Default::default()
            },
            Action::Escalate,
        ),
        rule("output.pii", Stage::Output, RuleKind::Pii, RulePayload::default(), Action::Redact),
        rule(
            "output.toxicity",
            Stage::Output,
            RuleKind::Blocklist,
            RulePayload {
                words: words(TOXIC_WORDS),
                ..Default::default()
            },
            Action::Refuse,
        ),
        rule(
            "output.grounding",
            Stage::Output,
            RuleKind::Grounding,
            RulePayload {
                threshold: Some(DEFAULT_GROUNDING_THRESHOLD),
                ..Default::default()
            },
            Action::Escalate,
        ),
    ]
}

impl Default for RuleSet {
    fn default() -> Self {
        Self::new(default_rules(), Sanitizer::default()).expect("built-in rails compile")
    }
}

/// Texts used by [`enforce`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnforcementTemplates {
    pub refusal: String,
    /// `{ref}` is replaced by the moderation item id.
    pub escalation: String,
}

impl Default for EnforcementTemplates {
    fn default() -> Self {
        Self {
            refusal: "Sorry, I can't help with that request. If you have a question about your health or your body, \
                      please ask it and a trained counsellor will make sure you get an answer."
                .into(),
            escalation: "Thank you for your question. It has been passed to a trained counsellor, who will answer it soon. \
                         Reference: {ref}"
                .into(),
        }
    }
}

/// Apply a verdict to the text about to leave the system.
pub fn enforce(verdict: &Verdict, payload: &str, templates: &EnforcementTemplates, queue_ref: Option<&str>) -> String {
    match verdict.action {
        Action::Allow => payload.into(),
        Action::Redact => verdict.transformed_text.clone().unwrap_or_else(|| payload.into()),
        Action::Refuse => templates.refusal.clone(),
        Action::Escalate => templates.escalation.replace("{ref}", queue_ref.unwrap_or("pending")),
    }
}

/// Which kinds a redaction removed, for audit notes.
pub fn redacted_kinds(sanitizer: &Sanitizer, text: &str) -> BTreeSet<PiiKind> {
    sanitizer.detect_pii(text).into_iter().map(|s| s.kind).collect()
}
