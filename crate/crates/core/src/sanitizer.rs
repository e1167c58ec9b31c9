//! Rule-based PII detection and redaction.
//!
//! Five kinds are recognised: phone numbers, ages next to an age cue, names
//! (lexicon entries, or the word after a self-reference cue), places from a
//! gazetteer, and 12-digit identity numbers. Candidate spans from every rule
//! are resolved longest-first, then leftmost, into a sorted non-overlapping
//! list. Spans are byte offsets into the original text.
//!
//! Existing placeholders (`[PHONE]`, `[NAME]`, ...) are masked before any rule
//! runs, which is what makes `redact` idempotent.

use alloc::borrow::ToOwned;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use aho_corasick::AhoCorasick;
use regex_automata::meta::Regex;
use regex_automata::Input;
use serde::{Deserialize, Serialize};

use crate::corpus::QARecord;
use crate::text::is_token_char;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PiiKind {
    Phone,
    Age,
    Name,
    Place,
    IdNumber,
}

impl PiiKind {
    pub const ALL: [PiiKind; 5] = [
        PiiKind::Phone,
        PiiKind::Age,
        PiiKind::Name,
        PiiKind::Place,
        PiiKind::IdNumber,
    ];

    pub fn label(self) -> &'static str {
        match self {
            PiiKind::Phone => "PHONE",
            PiiKind::Age => "AGE",
            PiiKind::Name => "NAME",
            PiiKind::Place => "PLACE",
            PiiKind::IdNumber => "ID_NUMBER",
        }
    }

    /// The redaction token, e.g. `[PHONE]`.
    pub fn placeholder(self) -> String {
        let mut s = String::with_capacity(self.label().len() + 2);
        s.push('[');
        s.push_str(self.label());
        s.push(']');
        s
    }
}

impl fmt::Display for PiiKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PiiSpan {
    pub kind: PiiKind,
    pub start: usize,
    pub end: usize,
    pub surface: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RedactionResult {
    pub text: String,
    pub spans: Vec<PiiSpan>,
    pub clean: bool,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum SanitizeError {
    #[error("nothing to sanitize")]
    NothingToSanitize,
    #[error("invalid {key} pattern {pattern:?}: {message}")]
    BadPattern {
        key: &'static str,
        pattern: String,
        message: String,
    },
    #[error("invalid lexicon {key}: {message}")]
    BadLexicon { key: &'static str, message: String },
}

/// Rule and lexicon configuration. Every key is optional in the JSON form and
/// falls back to the built-in seed lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PiiRules {
    pub phone_patterns: Vec<String>,
    pub age_cues: Vec<String>,
    pub name_lexicon: Vec<String>,
    pub gazetteer: Vec<String>,
    pub id_patterns: Vec<String>,
    /// Self-reference phrases; the word right after one is treated as a name.
    pub name_cues: Vec<String>,
    pub age_min: u32,
    pub age_max: u32,
}

const DEFAULT_PHONE: &str = r"(?:\+91[ -]?|0[ -]?)?[6-9](?:[ -]?[0-9]){9}";
const DEFAULT_ID: &str = r"[0-9]{4}[ -]?[0-9]{4}[ -]?[0-9]{4}";

const DEFAULT_AGE_CUES: &[&str] = &[
    "years", "year", "yrs", "yr", "age", "aged", "umar", "umr", "saal", "sal", "varsh", "baras",
    "साल", "वर्ष", "बरस", "उम्र", "आयु",
];

const DEFAULT_NAME_CUES: &[&str] = &[
    "my name is", "my name's", "i am called", "mera naam", "mera nam", "meraa naam", "मेरा नाम",
];

/// Words allowed between a name cue and the name ("mera naam hai Sita").
const CUE_FILLERS: &[&str] = &["hai", "he", "h", "is", "है"];

const DEFAULT_NAMES: &[&str] = &[
    "sita", "gita", "geeta", "radha", "priya", "pooja", "neha", "anita", "sunita", "kavita",
    "rekha", "meena", "lakshmi", "asha", "savita", "rahul", "amit", "ravi", "ramesh", "suresh",
    "mohan", "sanjay", "arjun", "vijay", "manoj", "rajesh", "deepak", "sunil", "anil", "pankaj",
    "सीता", "गीता", "राधा", "प्रिया", "राहुल", "रमेश", "सुरेश",
];

const DEFAULT_PLACES: &[&str] = &[
    "delhi", "new delhi", "mumbai", "patna", "lucknow", "jaipur", "bihar", "uttar pradesh",
    "madhya pradesh", "jharkhand", "rajasthan", "ranchi", "varanasi", "kanpur", "gaya",
    "muzaffarpur", "bhopal", "indore", "agra", "prayagraj", "dehradun", "gorakhpur", "darbhanga",
    "पटना", "दिल्ली", "बिहार", "लखनऊ", "रांची",
];

impl Default for PiiRules {
    fn default() -> Self {
        fn owned(list: &[&str]) -> Vec<String> {
            list.iter().map(|s| (*s).to_owned()).collect()
        }
        Self {
            phone_patterns: owned(&[DEFAULT_PHONE]),
            age_cues: owned(DEFAULT_AGE_CUES),
            name_lexicon: owned(DEFAULT_NAMES),
            gazetteer: owned(DEFAULT_PLACES),
            id_patterns: owned(&[DEFAULT_ID]),
            name_cues: owned(DEFAULT_NAME_CUES),
            age_min: 5,
            age_max: 99,
        }
    }
}

/// Compiled, immutable rule set. Cheap to share behind an `Arc`; reloading
/// means compiling a new one and swapping it in.
#[derive(Debug, Clone)]
pub struct Sanitizer {
    rules: PiiRules,
    phone: Vec<Regex>,
    ids: Vec<Regex>,
    names: Option<AhoCorasick>,
    places: Option<AhoCorasick>,
    name_cues: Option<AhoCorasick>,
    placeholders: AhoCorasick,
    age_cues: Vec<String>,
}

impl Default for Sanitizer {
    fn default() -> Self {
        Self::new(PiiRules::default()).expect("built-in PII rules compile")
    }
}

fn compile_patterns(key: &'static str, patterns: &[String]) -> Result<Vec<Regex>, SanitizeError> {
    patterns
        .iter()
        .map(|p| {
            Regex::new(p).map_err(|e| SanitizeError::BadPattern {
                key,
                pattern: p.clone(),
                message: e.to_string(),
            })
        })
        .collect()
}

fn compile_lexicon(key: &'static str, words: &[String]) -> Result<Option<AhoCorasick>, SanitizeError> {
    let words: Vec<&str> = words
        .iter()
        .map(|w| w.trim())
        .filter(|w| !w.is_empty())
        .collect();
    if words.is_empty() {
        return Ok(None);
    }
    AhoCorasick::builder()
        .ascii_case_insensitive(true)
        .build(words)
        .map(Some)
        .map_err(|e| SanitizeError::BadLexicon {
            key,
            message: e.to_string(),
        })
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    kind: PiiKind,
    start: usize,
    end: usize,
}

impl Sanitizer {
    pub fn new(rules: PiiRules) -> Result<Self, SanitizeError> {
        let phone = compile_patterns("phone_patterns", &rules.phone_patterns)?;
        let ids = compile_patterns("id_patterns", &rules.id_patterns)?;
        let names = compile_lexicon("name_lexicon", &rules.name_lexicon)?;
        let places = compile_lexicon("gazetteer", &rules.gazetteer)?;
        let name_cues = compile_lexicon("name_cues", &rules.name_cues)?;
        let placeholders = AhoCorasick::new(PiiKind::ALL.iter().map(|k| k.placeholder()))
            .map_err(|e| SanitizeError::BadLexicon {
                key: "placeholders",
                message: e.to_string(),
            })?;
        let age_cues = rules
            .age_cues
            .iter()
            .map(|c| c.trim().to_ascii_lowercase())
            .filter(|c| !c.is_empty())
            .collect();
        Ok(Self {
            rules,
            phone,
            ids,
            names,
            places,
            name_cues,
            placeholders,
            age_cues,
        })
    }

    pub fn rules(&self) -> &PiiRules {
        &self.rules
    }

    /// All PII spans, sorted by start and non-overlapping.
    ///
    /// Replacing a span can expose a new word boundary (`Sita9876543210`
    /// becomes `Sita[PHONE]`), so detection repeats on the redacted text until
    /// nothing new is found. Every pass only looks at text outside
    /// placeholders, which maps back to the original byte for byte.
    pub fn detect_pii(&self, text: &str) -> Vec<PiiSpan> {
        let mut found: Vec<Candidate> = Vec::new();
        let mut current = text.to_owned();
        // (start in current, end in current, start in original)
        let mut segments = alloc::vec![(0usize, text.len(), 0usize)];
        loop {
            let pass = self.detect_pass(&current);
            if pass.is_empty() {
                break;
            }
            for c in pass {
                let &(seg_start, _, orig_start) = segments
                    .iter()
                    .find(|&&(s, e, _)| s <= c.start && c.end <= e)
                    .expect("spans never cross a placeholder");
                let shift = orig_start as isize - seg_start as isize;
                found.push(Candidate {
                    kind: c.kind,
                    start: (c.start as isize + shift) as usize,
                    end: (c.end as isize + shift) as usize,
                });
            }
            found.sort_by_key(|c| c.start);
            segments.clear();
            current.clear();
            let mut cursor = 0;
            for c in &found {
                segments.push((current.len(), current.len() + c.start - cursor, cursor));
                current.push_str(&text[cursor..c.start]);
                current.push('[');
                current.push_str(c.kind.label());
                current.push(']');
                cursor = c.end;
            }
            segments.push((current.len(), current.len() + text.len() - cursor, cursor));
            current.push_str(&text[cursor..]);
        }
        found
            .into_iter()
            .map(|c| PiiSpan {
                kind: c.kind,
                start: c.start,
                end: c.end,
                surface: text[c.start..c.end].to_owned(),
            })
            .collect()
    }

    fn detect_pass(&self, text: &str) -> Vec<Candidate> {
        if text.is_empty() {
            return Vec::new();
        }
        let masked: Vec<(usize, usize)> = self
            .placeholders
            .find_iter(text)
            .map(|m| (m.start(), m.end()))
            .collect();

        let mut candidates = Vec::new();
        for re in &self.phone {
            digit_bounded_matches(re, text, PiiKind::Phone, &mut candidates);
        }
        for re in &self.ids {
            digit_bounded_matches(re, text, PiiKind::IdNumber, &mut candidates);
        }
        self.age_matches(text, &mut candidates);
        if let Some(ac) = &self.names {
            lexicon_matches(ac, text, PiiKind::Name, &mut candidates);
        }
        self.cued_name_matches(text, &mut candidates);
        if let Some(ac) = &self.places {
            lexicon_matches(ac, text, PiiKind::Place, &mut candidates);
        }

        candidates.retain(|c| !masked.iter().any(|&(s, e)| c.start < e && s < c.end));
        resolve_overlaps(candidates)
    }

    /// Replace every detected span with its `[KIND]` placeholder. Returned
    /// spans carry offsets into the original text.
    pub fn redact(&self, text: &str) -> RedactionResult {
        let spans = self.detect_pii(text);
        if spans.is_empty() {
            return RedactionResult {
                text: text.to_owned(),
                spans,
                clean: true,
            };
        }
        let mut out = String::with_capacity(text.len());
        let mut cursor = 0;
        for span in &spans {
            out.push_str(&text[cursor..span.start]);
            out.push('[');
            out.push_str(span.kind.label());
            out.push(']');
            cursor = span.end;
        }
        out.push_str(&text[cursor..]);
        RedactionResult {
            text: out,
            spans,
            clean: false,
        }
    }

    pub fn is_clean(&self, text: &str) -> bool {
        self.detect_pii(text).is_empty()
    }

    /// Derive `sanitized_question` from `relevant_question`.
    pub fn sanitize_record(&self, record: &QARecord) -> Result<QARecord, SanitizeError> {
        if record.relevant_question.trim().is_empty() {
            return Err(SanitizeError::NothingToSanitize);
        }
        let mut out = record.clone();
        out.sanitized_question = self.redact(&record.relevant_question).text;
        Ok(out)
    }

    fn age_matches(&self, text: &str, out: &mut Vec<Candidate>) {
        let bytes = text.as_bytes();
        let mut i = 0;
        while i < bytes.len() {
            if !bytes[i].is_ascii_digit() {
                i += 1;
                continue;
            }
            let start = i;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            let end = i;
            if end - start > 2 {
                continue;
            }
            let value: u32 = text[start..end].parse().unwrap_or(0);
            if value < self.rules.age_min || value > self.rules.age_max {
                continue;
            }
            if char_before(text, start).is_some_and(is_token_char) {
                continue;
            }
            let cue_after = self.cue_follows(text, end);
            let glued = char_after(text, end).is_some_and(is_token_char);
            if cue_after || (!glued && self.cue_precedes(text, start)) {
                out.push(Candidate {
                    kind: PiiKind::Age,
                    start,
                    end,
                });
            }
        }
    }

    fn cue_follows(&self, text: &str, pos: usize) -> bool {
        let rest = text[pos..].trim_start_matches(|c: char| c.is_whitespace() || c == '-');
        let offset = text.len() - rest.len();
        self.age_cues.iter().any(|cue| {
            rest.len() >= cue.len()
                && rest.is_char_boundary(cue.len())
                && rest[..cue.len()].eq_ignore_ascii_case(cue)
                && !char_after(text, offset + cue.len()).is_some_and(is_token_char)
        })
    }

    fn cue_precedes(&self, text: &str, pos: usize) -> bool {
        let head = text[..pos].trim_end_matches(|c: char| c.is_whitespace() || c == '-' || c == ':');
        if head.len() == pos {
            // number glued to the preceding word
            return false;
        }
        self.age_cues.iter().any(|cue| {
            head.len() >= cue.len()
                && head.is_char_boundary(head.len() - cue.len())
                && head[head.len() - cue.len()..].eq_ignore_ascii_case(cue)
                && !char_before(text, head.len() - cue.len()).is_some_and(is_token_char)
        })
    }

    fn cued_name_matches(&self, text: &str, out: &mut Vec<Candidate>) {
        let Some(ac) = &self.name_cues else { return };
        for m in ac.find_overlapping_iter(text) {
            if !is_whole_word(text, m.start(), m.end()) {
                continue;
            }
            let sep = |c: char| c.is_whitespace() || c == ':' || c == ',';
            let rest = &text[m.end()..];
            let mut trimmed = rest.trim_start_matches(sep);
            if trimmed.len() == rest.len() {
                continue;
            }
            for filler in CUE_FILLERS {
                if let Some(after) = trimmed.strip_prefix(filler) {
                    if after.starts_with(sep) {
                        trimmed = after.trim_start_matches(sep);
                        break;
                    }
                }
            }
            let start = text.len() - trimmed.len();
            let word_len: usize = trimmed
                .chars()
                .take_while(|&c| is_token_char(c))
                .map(char::len_utf8)
                .sum();
            let first = trimmed.chars().next();
            if word_len == 0 || first.is_some_and(|c| c.is_ascii_digit()) {
                continue;
            }
            out.push(Candidate {
                kind: PiiKind::Name,
                start,
                end: start + word_len,
            });
        }
    }
}

fn char_before(text: &str, pos: usize) -> Option<char> {
    text[..pos].chars().next_back()
}

fn char_after(text: &str, pos: usize) -> Option<char> {
    text[pos..].chars().next()
}

fn is_whole_word(text: &str, start: usize, end: usize) -> bool {
    text.is_char_boundary(start)
        && text.is_char_boundary(end)
        && !char_before(text, start).is_some_and(is_token_char)
        && !char_after(text, end).is_some_and(is_token_char)
}

fn lexicon_matches(ac: &AhoCorasick, text: &str, kind: PiiKind, out: &mut Vec<Candidate>) {
    for m in ac.find_overlapping_iter(text) {
        if is_whole_word(text, m.start(), m.end()) {
            out.push(Candidate {
                kind,
                start: m.start(),
                end: m.end(),
            });
        }
    }
}

/// Matches of `re` that are not glued to a neighbouring ASCII digit. A failed
/// boundary check restarts the search one character after the rejected start.
fn digit_bounded_matches(re: &Regex, text: &str, kind: PiiKind, out: &mut Vec<Candidate>) {
    let digit = |c: Option<char>| c.is_some_and(|c| c.is_ascii_digit());
    let mut pos = 0;
    while pos <= text.len() {
        let Some(m) = re.search(&Input::new(text).range(pos..)) else {
            break;
        };
        if m.is_empty() {
            pos = next_boundary(text, m.start());
            continue;
        }
        if !digit(char_before(text, m.start())) && !digit(char_after(text, m.end())) {
            out.push(Candidate {
                kind,
                start: m.start(),
                end: m.end(),
            });
            pos = m.end();
        } else {
            pos = next_boundary(text, m.start());
        }
    }
}

fn next_boundary(text: &str, pos: usize) -> usize {
    match text[pos..].chars().next() {
        Some(c) => pos + c.len_utf8(),
        None => text.len() + 1,
    }
}

/// Longest match wins, then leftmost; result sorted by start.
fn resolve_overlaps(mut candidates: Vec<Candidate>) -> Vec<Candidate> {
    candidates.sort_by(|a, b| {
        (b.end - b.start)
            .cmp(&(a.end - a.start))
            .then(a.start.cmp(&b.start))
            .then(a.kind.cmp(&b.kind))
    });
    let mut accepted: Vec<Candidate> = Vec::new();
    for c in candidates {
        if accepted.iter().all(|a| c.end <= a.start || a.end <= c.start) {
            accepted.push(c);
        }
    }
    accepted.sort_by_key(|c| c.start);
    accepted
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn kinds(s: &Sanitizer, text: &str) -> Vec<(PiiKind, String)> {
        s.detect_pii(text)
            .into_iter()
            .map(|sp| (sp.kind, sp.surface))
            .collect()
    }

    #[test]
    fn empty_text_has_no_spans() {
        assert!(Sanitizer::default().detect_pii("").is_empty());
    }

    #[test]
    fn spaced_mobile_number_is_one_phone_span() {
        let s = Sanitizer::default();
        let spans = s.detect_pii("call me at 98765 43210");
        assert_eq!(spans.len(), 1);
        assert_eq!(spans[0].kind, PiiKind::Phone);
        assert_eq!(spans[0].surface, "98765 43210");
        assert_eq!((spans[0].start, spans[0].end), (11, 22));
    }

    #[test]
    fn phone_prefixes_are_part_of_the_span() {
        let s = Sanitizer::default();
        assert_eq!(kinds(&s, "+91 98765-43210"), vec![(PiiKind::Phone, "+91 98765-43210".into())]);
        assert_eq!(kinds(&s, "no. 09876543210"), vec![(PiiKind::Phone, "09876543210".into())]);
    }

    #[test]
    fn numbers_outside_the_phone_shape_are_ignored() {
        let s = Sanitizer::default();
        // starts with 5, 11 digits without prefix, 9 digits
        assert!(s.detect_pii("5876543210").is_empty());
        assert!(s.detect_pii("98765432101").is_empty());
        assert!(s.detect_pii("987654321").is_empty());
    }

    #[test]
    fn name_after_self_reference_cue_and_age_before_years() {
        let s = Sanitizer::default();
        let found = kinds(&s, "mera naam Sita hai, I am 16 years old");
        assert_eq!(
            found,
            vec![(PiiKind::Name, "Sita".into()), (PiiKind::Age, "16".into())]
        );
    }

    #[test]
    fn unknown_name_after_cue_is_still_caught() {
        let s = Sanitizer::default();
        assert_eq!(kinds(&s, "my name is Bholu"), vec![(PiiKind::Name, "Bholu".into())]);
        assert_eq!(kinds(&s, "mera naam hai Bholu"), vec![(PiiKind::Name, "Bholu".into())]);
    }

    #[test]
    fn age_needs_a_cue_and_a_range() {
        let s = Sanitizer::default();
        assert!(s.detect_pii("I have 16 questions").is_empty());
        assert!(s.detect_pii("after 3 years").is_empty());
        assert!(s.detect_pii("after 120 years").is_empty());
        assert_eq!(kinds(&s, "umar 19 hai"), vec![(PiiKind::Age, "19".into())]);
        assert_eq!(kinds(&s, "a 17-year-old girl"), vec![(PiiKind::Age, "17".into())]);
        assert_eq!(kinds(&s, "meri 18 साल की बहन"), vec![(PiiKind::Age, "18".into())]);
    }

    #[test]
    fn places_and_ids() {
        let s = Sanitizer::default();
        assert_eq!(
            kinds(&s, "I live in Uttar Pradesh near Patna"),
            vec![(PiiKind::Place, "Uttar Pradesh".into()), (PiiKind::Place, "Patna".into())]
        );
        assert_eq!(kinds(&s, "aadhaar 1234 5678 9012"), vec![(PiiKind::IdNumber, "1234 5678 9012".into())]);
        assert_eq!(kinds(&s, "id 987654321012"), vec![(PiiKind::IdNumber, "987654321012".into())]);
    }

    #[test]
    fn lexicon_matches_are_whole_words() {
        let s = Sanitizer::default();
        // "gaya" is a place; "gayatri" is not a match
        assert!(s.detect_pii("gayatri mantra").is_empty());
    }

    #[test]
    fn redaction_replaces_with_placeholders() {
        let s = Sanitizer::default();
        let r = s.redact("call 9876543210");
        assert_eq!(r.text, "call [PHONE]");
        assert!(!r.clean);
        assert_eq!(r.spans[0].start, 5);
        let clean = s.redact("is the pill safe?");
        assert!(clean.clean);
        assert_eq!(clean.text, "is the pill safe?");
    }

    #[test]
    fn sanitize_record_redacts_relevant_question() {
        let s = Sanitizer::default();
        let mut rec = QARecord::published("r1", "is it safe at 16 years", "Yes.");
        rec.sanitized_question.clear();
        let out = s.sanitize_record(&rec).unwrap();
        assert_eq!(out.sanitized_question, "is it safe at [AGE] years");
        assert_eq!(out.answer, rec.answer);

        let clean = QARecord::published("r2", "what is puberty", "It is ...");
        assert_eq!(s.sanitize_record(&clean).unwrap().sanitized_question, "what is puberty");

        let empty = QARecord::published("r3", "", "x");
        assert_eq!(s.sanitize_record(&empty), Err(SanitizeError::NothingToSanitize));
    }

    #[test]
    fn placeholders_are_never_redetected() {
        let rules = PiiRules {
            name_lexicon: vec!["rahul".into(), "phone".into(), "name".into()],
            ..PiiRules::default()
        };
        let s = Sanitizer::new(rules).unwrap();
        let once = s.redact("Rahul phone 9876543210");
        assert_eq!(once.text, "[NAME] [NAME] [PHONE]");
        assert_eq!(s.redact(&once.text).text, once.text);
    }

    #[test]
    fn exposed_boundaries_are_redacted_in_the_same_call() {
        let s = Sanitizer::default();
        let r = s.redact("Sita9876543210");
        assert_eq!(r.text, "[NAME][PHONE]");
        assert_eq!(r.spans[0].surface, "Sita");
        assert_eq!((r.spans[1].start, r.spans[1].end), (4, 14));
    }

    #[test]
    fn bad_pattern_is_reported() {
        let rules = PiiRules {
            phone_patterns: vec!["(".into()],
            ..PiiRules::default()
        };
        assert!(matches!(Sanitizer::new(rules), Err(SanitizeError::BadPattern { key: "phone_patterns", .. })));
    }

    #[test]
    fn longest_match_wins_overlaps() {
        let rules = PiiRules {
            gazetteer: vec!["new delhi".into(), "delhi".into()],
            ..PiiRules::default()
        };
        let s = Sanitizer::new(rules).unwrap();
        assert_eq!(kinds(&s, "from New Delhi"), vec![(PiiKind::Place, "New Delhi".into())]);
    }

    fn arb_text() -> impl proptest::strategy::Strategy<Value = String> {
        use proptest::prelude::*;
        let pieces = prop::sample::select(vec![
            "my name is", "mera naam", "Sita", "Rahul", "Patna", "delhi", "16", "5", "99", "120",
            "years", "saal", "age", "umar", "98765", "43210", "9876543210", "+91", "0", "1234",
            "5678", "9012", "[PHONE]", "[NAME]", "[AGE]", "[", "]", "-", ",", ":", " ", "  ",
            "गर्भ", "साल", "pill", "condom", "x", "7", "12",
        ]);
        prop::collection::vec(pieces, 0..16).prop_map(|v| v.concat())
    }

    proptest::proptest! {
        #[test]
        fn redaction_is_idempotent(text in arb_text()) {
            let s = Sanitizer::default();
            let once = s.redact(&text).text;
            proptest::prop_assert_eq!(s.redact(&once).text, once);
        }

        #[test]
        fn spans_are_sorted_disjoint_and_on_boundaries(text in arb_text()) {
            let s = Sanitizer::default();
            let spans = s.detect_pii(&text);
            for w in spans.windows(2) {
                proptest::prop_assert!(w[0].end <= w[1].start);
            }
            for sp in &spans {
                proptest::prop_assert!(sp.start < sp.end && sp.end <= text.len());
                proptest::prop_assert!(text.is_char_boundary(sp.start) && text.is_char_boundary(sp.end));
                proptest::prop_assert_eq!(&text[sp.start..sp.end], sp.surface.as_str());
            }
        }

        #[test]
        fn text_outside_spans_is_untouched(text in arb_text()) {
            let s = Sanitizer::default();
            let r = s.redact(&text);
            let mut rebuilt = String::new();
            let mut cursor = 0;
            for sp in &r.spans {
                rebuilt.push_str(&text[cursor..sp.start]);
                rebuilt.push_str(&sp.kind.placeholder());
                cursor = sp.end;
            }
            rebuilt.push_str(&text[cursor..]);
            proptest::prop_assert_eq!(rebuilt, r.text);
        }
    }
}
