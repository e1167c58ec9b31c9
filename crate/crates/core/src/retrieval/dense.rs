//! Exact cosine search over unit vectors. No ANN structure: a linear scan
//! over rows kept in compressed sparse form, so bag-of-words embeddings cost
//! only their nonzeros.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::{sort_hits, RetrievalError, RetrievalHit};
use crate::provider::normalize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "DenseDump", try_from = "DenseDump")]
pub struct DenseIndex {
    dimension: usize,
    provider_id: String,
    ids: Vec<String>,
    rows: BTreeMap<String, usize>,
    /// Row `r` owns `entries[offsets[r]..offsets[r + 1]]`.
    offsets: Vec<usize>,
    entries: Vec<(u32, f64)>,
}

impl DenseIndex {
    pub fn new(dimension: usize, provider_id: &str) -> Self {
        Self {
            dimension,
            provider_id: provider_id.into(),
            ids: Vec::new(),
            rows: BTreeMap::new(),
            offsets: alloc::vec![0],
            entries: Vec::new(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn provider_id(&self) -> &str {
        &self.provider_id
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.rows.contains_key(id)
    }

    pub fn vector(&self, id: &str) -> Option<Vec<f64>> {
        self.rows.get(id).map(|&r| self.row(r))
    }

    fn row(&self, r: usize) -> Vec<f64> {
        let mut v = alloc::vec![0.0; self.dimension];
        for &(i, x) in &self.entries[self.offsets[r]..self.offsets[r + 1]] {
            v[i as usize] = x;
        }
        v
    }

    /// Store `vector` re-normalized to unit length. The zero vector is
    /// refused with [`RetrievalError::ZeroVector`].
    pub fn add(&mut self, id: &str, mut vector: Vec<f64>) -> Result<(), RetrievalError> {
        if vector.len() != self.dimension {
            return Err(RetrievalError::DimensionMismatch {
                expected: self.dimension,
                found: vector.len(),
            });
        }
        if self.rows.contains_key(id) {
            return Err(RetrievalError::DuplicateDoc(id.into()));
        }
        if !normalize(&mut vector) {
            return Err(RetrievalError::ZeroVector(id.into()));
        }
        self.rows.insert(id.into(), self.ids.len());
        self.ids.push(id.into());
        self.entries
            .extend(vector.iter().enumerate().filter(|(_, x)| **x != 0.0).map(|(i, x)| (i as u32, *x)));
        self.offsets.push(self.entries.len());
        Ok(())
    }

    /// Top `k` documents by cosine with a positive score. `query` must be
    /// unit length (or zero, which matches nothing).
    pub fn search(&self, query: &[f64], k: usize) -> Result<Vec<RetrievalHit>, RetrievalError> {
        if query.len() != self.dimension {
            return Err(RetrievalError::DimensionMismatch {
                expected: self.dimension,
                found: query.len(),
            });
        }
        if k == 0 || self.is_empty() {
            return Ok(Vec::new());
        }
        let mut ranked: Vec<(f64, &str)> = self
            .offsets
            .windows(2)
            .zip(&self.ids)
            .map(|(w, id)| {
                let s: f64 = self.entries[w[0]..w[1]].iter().map(|&(i, x)| x * query[i as usize]).sum();
                (s, id.as_str())
            })
            .filter(|(s, _)| *s > 0.0)
            .collect();
        let order = |a: &(f64, &str), b: &(f64, &str)| {
            b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then_with(|| a.1.cmp(b.1))
        };
        if ranked.len() > k {
            ranked.select_nth_unstable_by(k - 1, order);
        }
        ranked.truncate(k);
        ranked.sort_by(order);
        let mut hits: Vec<RetrievalHit> = ranked
            .into_iter()
            .map(|(s, id)| RetrievalHit::dense(id, s.min(1.0)))
            .collect();
        sort_hits(&mut hits);
        Ok(hits)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DenseDump {
    dimension: usize,
    provider_id: String,
    vectors: Vec<(String, Vec<f64>)>,
}

impl From<DenseIndex> for DenseDump {
    fn from(ix: DenseIndex) -> Self {
        let vectors = ix
            .ids
            .iter()
            .enumerate()
            .map(|(r, id)| (id.clone(), ix.row(r)))
            .collect();
        DenseDump {
            dimension: ix.dimension,
            provider_id: ix.provider_id,
            vectors,
        }
    }
}

impl TryFrom<DenseDump> for DenseIndex {
    type Error = RetrievalError;

    fn try_from(d: DenseDump) -> Result<Self, Self::Error> {
        let mut ix = DenseIndex::new(d.dimension, &d.provider_id);
        for (id, v) in d.vectors {
            ix.add(&id, v)?;
        }
        Ok(ix)
    }
}
