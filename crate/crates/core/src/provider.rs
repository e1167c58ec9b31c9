//! Provider contracts shared by the core algorithms.
//!
//! Transport, timeouts and retries live in the `guardqa` crate; the core only
//! needs the call shape and an error that says whether a retry makes sense.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::text::tokenize;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum ProviderError {
    #[error("provider timed out")]
    Timeout,
    #[error("provider returned HTTP {0}")]
    Status(u16),
    #[error("provider unreachable: {0}")]
    Unreachable(String),
    #[error("malformed provider response: {0}")]
    Malformed(String),
    #[error("provider rejected the request: {0}")]
    Rejected(String),
}

impl ProviderError {
    /// Timeouts, connection failures and 5xx responses are worth retrying.
    pub fn is_retriable(&self) -> bool {
        match self {
            ProviderError::Timeout | ProviderError::Unreachable(_) => true,
            ProviderError::Status(code) => (500..600).contains(code),
            ProviderError::Malformed(_) | ProviderError::Rejected(_) => false,
        }
    }
}

/// Batch text embedding. Implementations need not normalize; [`embed`] does.
pub trait Embedder: Send + Sync {
    fn provider_id(&self) -> &str;

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, ProviderError>;
}

/// Scale `v` to unit L2 norm in place. Returns false (and leaves `v` alone)
/// for the zero vector.
pub fn normalize(v: &mut [f64]) -> bool {
    let norm = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
    if norm == 0.0 || !norm.is_finite() {
        return false;
    }
    for x in v.iter_mut() {
        *x /= norm;
    }
    true
}

/// Embed one text and re-normalize the provider's vector. Texts with no
/// tokens come back as the zero vector.
pub fn embed(text: &str, provider: &dyn Embedder) -> Result<Vec<f64>, ProviderError> {
    let mut out = provider.embed_batch(&[text])?;
    if out.len() != 1 {
        return Err(ProviderError::Malformed(alloc::format!(
            "expected 1 vector, got {}",
            out.len()
        )));
    }
    let mut v = out.pop().unwrap_or_default();
    normalize(&mut v);
    Ok(v)
}

/// Offline bag-of-words embedder: each token is hashed (SHA-256, first eight
/// bytes, little endian) into one of `dimension` buckets, the bucket counts
/// form the vector, and the result is L2-normalized.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dimension: usize,
    id: String,
}

impl HashingEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        Self {
            dimension,
            id: alloc::format!("mock-hash-{dimension}"),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn bucket(&self, token: &str) -> usize {
        let digest = Sha256::digest(token.as_bytes());
        let mut word = [0u8; 8];
        word.copy_from_slice(&digest[..8]);
        (u64::from_le_bytes(word) % self.dimension as u64) as usize
    }

    pub fn embed_one(&self, text: &str) -> Vec<f64> {
        let mut v = alloc::vec![0.0; self.dimension];
        for token in tokenize(text).iter() {
            v[self.bucket(token)] += 1.0;
        }
        normalize(&mut v);
        v
    }
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_DIMENSION)
    }
}

pub const DEFAULT_DIMENSION: usize = 512;

impl Embedder for HashingEmbedder {
    fn provider_id(&self) -> &str {
        &self.id
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, ProviderError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
