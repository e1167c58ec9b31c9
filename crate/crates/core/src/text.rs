//! Tokenization shared by the indices, the rails and the metrics.
//!
//! Text is NFC-normalized, ASCII letters are lowercased, and tokens are the
//! maximal runs of characters that are alphanumeric or belong to the
//! Devanagari block (U+0900..=U+097F). The block check keeps viramas and
//! vowel signs attached to their consonants; they are combining marks and
//! not alphanumeric on their own.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Deref;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

/// Ordered list of normalized terms. Tokens never contain whitespace.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenStream(Vec<String>);

impl TokenStream {
    pub fn new(tokens: Vec<String>) -> Self {
        Self(tokens)
    }

    pub fn into_inner(self) -> Vec<String> {
        self.0
    }

    /// Distinct terms, sorted.
    pub fn term_set(&self) -> BTreeSet<&str> {
        self.0.iter().map(String::as_str).collect()
    }
}

impl Deref for TokenStream {
    type Target = [String];

    fn deref(&self) -> &[String] {
        &self.0
    }
}

/// True for characters that belong inside a token.
#[inline]
pub fn is_token_char(c: char) -> bool {
    c.is_alphanumeric() || ('\u{0900}'..='\u{097F}').contains(&c)
}

/// Tokenizer with an optional stopword list (empty by default).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tokenizer {
    #[serde(default)]
    stopwords: BTreeSet<String>,
}

impl Tokenizer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stopwords are normalized with the same rules as the text, so
    /// `"The"` and `"the"` are the same entry.
    pub fn with_stopwords<I, S>(stopwords: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut set = BTreeSet::new();
        for word in stopwords {
            for token in raw_tokens(word.as_ref()) {
                set.insert(token);
            }
        }
        Self { stopwords: set }
    }

    pub fn stopwords(&self) -> &BTreeSet<String> {
        &self.stopwords
    }

    pub fn is_stopword(&self, token: &str) -> bool {
        self.stopwords.contains(token)
    }

    pub fn tokenize(&self, text: &str) -> TokenStream {
        let tokens = raw_tokens(text)
            .filter(|t| !self.stopwords.contains(t))
            .collect();
        TokenStream(tokens)
    }
}

/// Tokenize with no stopwords.
pub fn tokenize(text: &str) -> TokenStream {
    TokenStream(raw_tokens(text).collect())
}

fn raw_tokens(text: &str) -> impl Iterator<Item = String> {
    let mut normalized: String = text.nfc().collect();
    normalized.make_ascii_lowercase();
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in normalized.chars() {
        if is_token_char(c) {
            current.push(c);
        } else if !current.is_empty() {
            tokens.push(core::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens.into_iter()
}

/// Trim and collapse every internal whitespace run to a single space.
/// Case is preserved.
pub fn collapse_whitespace(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for word in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Default stopwords used for content-token comparisons (grounding recall and
/// the lexical judge). English function words plus common romanized Hindi
/// particles.
pub const CONTENT_STOPWORDS: &[&str] = &[
    "a", "about", "after", "all", "also", "am", "an", "and", "any", "are", "as", "at", "be",
    "because", "been", "before", "but", "by", "can", "could", "did", "do", "does", "for", "from",
    "had", "has", "have", "he", "her", "him", "his", "how", "i", "if", "in", "into", "is", "it",
    "its", "me", "my", "no", "not", "of", "on", "or", "our", "she", "should", "so", "some", "such",
    "than", "that", "the", "their", "them", "then", "there", "these", "they", "this", "to", "too",
    "very", "was", "we", "were", "what", "when", "where", "which", "who", "why", "will", "with",
    "would", "you", "your", "hai", "hain", "ho", "hota", "hoti", "ka", "ke", "ki", "ko", "kya",
    "mein", "main", "se", "bhi", "aur", "ya", "na", "nahi", "par", "ek", "yeh", "woh",
];
