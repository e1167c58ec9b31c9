//! QA records, paraphrase grouping and holdout splits.
//!
//! A paraphrase group is the set of questions sharing one curated answer.
//! Group ids are derived from the whitespace-normalized answer text, so the
//! same answer always lands in the same group regardless of ingest order.

use alloc::borrow::ToOwned;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use chrono::{DateTime, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::sanitizer::Sanitizer;
use crate::text::collapse_whitespace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordStatus {
    Draft,
    #[default]
    Published,
    Retired,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordSource {
    #[default]
    Ingest,
    Moderation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QARecord {
    pub id: String,
    pub group_id: String,
    /// Raw caller transcription; may contain PII.
    pub caller_query_transcription: String,
    pub relevant_question: String,
    pub sanitized_question: String,
    pub answer: String,
    pub theme: String,
    pub sub_theme: String,
    pub language: String,
    pub status: RecordStatus,
    pub created_at: DateTime<Utc>,
    pub source: RecordSource,
}

impl QARecord {
    /// A published record whose three question fields are all `question`.
    pub fn published(id: &str, question: &str, answer: &str) -> Self {
        let answer = collapse_whitespace(answer);
        Self {
            id: id.to_owned(),
            group_id: group_id_for(&answer),
            caller_query_transcription: question.to_owned(),
            relevant_question: question.to_owned(),
            sanitized_question: question.to_owned(),
            answer,
            theme: String::new(),
            sub_theme: String::new(),
            language: DEFAULT_LANGUAGE.to_owned(),
            status: RecordStatus::Published,
            created_at: DateTime::<Utc>::UNIX_EPOCH,
            source: RecordSource::Ingest,
        }
    }

    /// Check the record-level invariants: sanitized question free of PII,
    /// and published records carry an answer and a group.
    pub fn validate(&self, sanitizer: &Sanitizer) -> Result<(), RecordError> {
        if self.id.trim().is_empty() {
            return Err(RecordError::EmptyField("id"));
        }
        if !sanitizer.is_clean(&self.sanitized_question) {
            return Err(RecordError::SanitizationViolated);
        }
        if self.status == RecordStatus::Published {
            if self.answer.trim().is_empty() {
                return Err(RecordError::EmptyField("answer"));
            }
            if self.group_id.trim().is_empty() {
                return Err(RecordError::EmptyField("group_id"));
            }
        }
        Ok(())
    }
}

pub const DEFAULT_LANGUAGE: &str = "hi";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RecordError {
    #[error("missing field: {0}")]
    MissingField(&'static str),
    #[error("empty field: {0}")]
    EmptyField(&'static str),
    #[error("sanitization invariant violated")]
    SanitizationViolated,
    #[error("duplicate id")]
    DuplicateId,
    #[error("group {group_id} already has a different answer")]
    GroupAnswerMismatch { group_id: String },
    #[error("unknown record {0}")]
    UnknownRecord(String),
}

/// One line of a corpus file before validation. Every field is optional here
/// so that missing fields can be reported by name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RecordDraft {
    pub id: Option<String>,
    pub group_id: Option<String>,
    pub caller_query_transcription: Option<String>,
    pub relevant_question: Option<String>,
    pub sanitized_question: Option<String>,
    pub answer: Option<String>,
    pub theme: Option<String>,
    pub sub_theme: Option<String>,
    pub language: Option<String>,
    pub status: Option<RecordStatus>,
    pub created_at: Option<DateTime<Utc>>,
    pub source: Option<RecordSource>,
}

impl RecordDraft {
    /// Build a published record. `id`, `relevant_question` and `answer` are
    /// required; a missing `sanitized_question` is derived with the sanitizer,
    /// a supplied one must already be clean. The group id is always
    /// recomputed from the answer.
    pub fn into_record(self, sanitizer: &Sanitizer, now: DateTime<Utc>) -> Result<QARecord, RecordError> {
        fn required(v: Option<String>, name: &'static str) -> Result<String, RecordError> {
            let v = v.ok_or(RecordError::MissingField(name))?;
            if v.trim().is_empty() {
                return Err(RecordError::EmptyField(name));
            }
            Ok(v)
        }
        let id = required(self.id, "id")?;
        let relevant_question = required(self.relevant_question, "relevant_question")?;
        let answer = collapse_whitespace(&required(self.answer, "answer")?);
        let sanitized_question = match self.sanitized_question {
            Some(q) if !q.trim().is_empty() => q,
            _ => sanitizer.redact(&relevant_question).text,
        };
        let record = QARecord {
            group_id: group_id_for(&answer),
            caller_query_transcription: self
                .caller_query_transcription
                .unwrap_or_else(|| relevant_question.clone()),
            id: id.trim().to_owned(),
            relevant_question,
            sanitized_question,
            answer,
            theme: self.theme.unwrap_or_default(),
            sub_theme: self.sub_theme.unwrap_or_default(),
            language: self.language.unwrap_or_else(|| DEFAULT_LANGUAGE.to_owned()),
            status: RecordStatus::Published,
            created_at: self.created_at.unwrap_or(now),
            source: self.source.unwrap_or_default(),
        };
        record.validate(sanitizer)?;
        Ok(record)
    }
}

/// Per-ingest counts. `accepted + rejected` equals the number of input lines.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub accepted: usize,
    pub rejected: usize,
    pub rejection_reasons: Vec<(usize, String)>,
    pub groups_formed: usize,
}

/// Hex SHA-256 of the whitespace-normalized answer.
pub fn answer_hash(answer: &str) -> String {
    let digest = Sha256::digest(collapse_whitespace(answer).as_bytes());
    let mut hex = String::with_capacity(64);
    for b in digest.iter() {
        hex.push_str(&format!("{b:02x}"));
    }
    hex
}

/// Group id for an answer: `g-` plus the first 16 hex digits of its hash.
pub fn group_id_for(answer: &str) -> String {
    format!("g-{}", &answer_hash(answer)[..16])
}

/// Map every distinct normalized answer (by hash) to its group id.
pub fn group_paraphrases(records: &[QARecord]) -> BTreeMap<String, String> {
    records
        .iter()
        .map(|r| {
            let hash = answer_hash(&r.answer);
            let gid = format!("g-{}", &hash[..16]);
            (hash, gid)
        })
        .collect()
}

/// Set each record's `group_id` from its answer; returns the number of
/// distinct groups.
pub fn assign_groups(records: &mut [QARecord]) -> usize {
    let groups = group_paraphrases(records);
    for r in records.iter_mut() {
        r.group_id = groups[&answer_hash(&r.answer)].clone();
    }
    groups.len()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HoldoutSplit {
    pub train: Vec<String>,
    pub held_out: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SplitError {
    #[error("nothing to hold out")]
    NothingToHoldOut,
    #[error("fraction must be in (0, 1), got {0}")]
    BadFraction(String),
}

/// Number of records held out of a group of `size` members:
/// `ceil(size * fraction)`, capped so one member always stays in train.
pub fn held_out_count(size: usize, fraction: f64) -> usize {
    if size < 2 {
        return 0;
    }
    let raw = libm::ceil(size as f64 * fraction - 1e-12) as usize;
    raw.clamp(1, size - 1)
}

/// Split published records into train and held-out ids. Only multi-member
/// groups contribute held-out records; singletons always train. Groups are
/// visited in id order and members shuffled with a ChaCha8 stream seeded by
/// `seed`, so the split depends only on the seed and the record contents.
pub fn holdout_split(records: &[QARecord], seed: u64, fraction: f64) -> Result<HoldoutSplit, SplitError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(SplitError::BadFraction(format!("{fraction}")));
    }
    let mut groups: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.status == RecordStatus::Published) {
        groups.entry(r.group_id.as_str()).or_default().push(r.id.as_str());
    }
    if groups.values().all(|m| m.len() < 2) {
        return Err(SplitError::NothingToHoldOut);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut held: BTreeSet<&str> = BTreeSet::new();
    for members in groups.values_mut() {
        if members.len() < 2 {
            continue;
        }
        members.sort_unstable();
        let n = held_out_count(members.len(), fraction);
        members.shuffle(&mut rng);
        held.extend(members.iter().take(n));
    }
    let mut train = Vec::new();
    let mut held_out = Vec::new();
    for r in records.iter().filter(|r| r.status == RecordStatus::Published) {
        if held.contains(r.id.as_str()) {
            held_out.push(r.id.clone());
        } else {
            train.push(r.id.clone());
        }
    }
    train.sort();
    held_out.sort();
    Ok(HoldoutSplit { train, held_out })
}

/// Event-log entry for the corpus store.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusEvent {
    pub version: u64,
    pub op: EventOp,
    pub record: QARecord,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventOp {
    Add,
    UpdateStatus,
}

/// Materialized id → record map plus the version of the last applied event.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CorpusSnapshot {
    pub version: u64,
    pub records: BTreeMap<String, QARecord>,
}

impl CorpusSnapshot {
    /// Apply one event. Versions must be consecutive.
    pub fn apply(&mut self, event: &CorpusEvent) -> Result<(), ReplayError> {
        if event.version != self.version + 1 {
            return Err(ReplayError::VersionGap {
                expected: self.version + 1,
                found: event.version,
            });
        }
        match event.op {
            EventOp::Add => {
                if self.records.contains_key(&event.record.id) {
                    return Err(ReplayError::Record(RecordError::DuplicateId));
                }
            }
            EventOp::UpdateStatus => {
                if !self.records.contains_key(&event.record.id) {
                    return Err(ReplayError::Record(RecordError::UnknownRecord(event.record.id.clone())));
                }
            }
        }
        self.records.insert(event.record.id.clone(), event.record.clone());
        self.version = event.version;
        Ok(())
    }

    pub fn replay<'a>(events: impl IntoIterator<Item = &'a CorpusEvent>) -> Result<Self, ReplayError> {
        let mut snap = Self::default();
        for e in events {
            snap.apply(e)?;
        }
        Ok(snap)
    }

    /// Reject a new record that would break the group-answer invariant or
    /// reuse an id.
    pub fn check_insert(&self, record: &QARecord) -> Result<(), RecordError> {
        if self.records.contains_key(&record.id) {
            return Err(RecordError::DuplicateId);
        }
        if let Some(other) = self
            .records
            .values()
            .find(|r| r.group_id == record.group_id && r.answer != record.answer)
        {
            return Err(RecordError::GroupAnswerMismatch {
                group_id: other.group_id.clone(),
            });
        }
        Ok(())
    }

    pub fn published(&self) -> impl Iterator<Item = &QARecord> {
        self.records.values().filter(|r| r.status == RecordStatus::Published)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReplayError {
    #[error("event log gap: expected version {expected}, found {found}")]
    VersionGap { expected: u64, found: u64 },
    #[error(transparent)]
    Record(#[from] RecordError),
}
