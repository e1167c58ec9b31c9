//! Accept/discard decision on the top hit and the F1 sweep that picks τ.

use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::{RetrievalError, RetrievalHit};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelevanceDecision {
    pub accepted: bool,
    pub top_score: f64,
    #[serde(with = "threshold_serde")]
    pub threshold: f64,
    pub margin: f64,
}

/// Accepted iff there is a top hit and its `final_score` reaches `tau`.
/// With no hits `top_score` is 0.
pub fn decide_relevance(hits: &[RetrievalHit], tau: f64) -> RelevanceDecision {
    let top = hits.first().map(|h| h.final_score);
    let top_score = top.unwrap_or(0.0);
    RelevanceDecision {
        accepted: top.is_some_and(|s| s >= tau),
        top_score,
        threshold: tau,
        margin: top_score - tau,
    }
}

/// Top-1 outcome for one held-out query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoldoutObservation {
    pub top_score: f64,
    pub in_group: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    #[serde(with = "threshold_serde")]
    pub tau: f64,
    pub accepted: usize,
    pub true_positives: usize,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    #[serde(with = "threshold_serde")]
    pub tau: f64,
    pub f1: f64,
    pub holdout_size: usize,
    pub sweep: Vec<SweepPoint>,
}

impl Calibration {
    /// τ = +∞: no candidate beat "never accept".
    pub fn never_accepts(&self) -> bool {
        self.tau == f64::INFINITY
    }
}

/// Every held-out query has a correct answer in the index, so each one is a
/// positive. At threshold τ a query counts as a true positive when it is
/// accepted and its top-1 shares its group, giving
/// `F1 = 2·TP / (accepted + n)`. Candidates are the observed top-1 scores and
/// +∞; the best F1 wins and ties go to the larger τ.
pub fn calibrate_threshold(observations: &[HoldoutObservation]) -> Result<Calibration, RetrievalError> {
    let n = observations.len();
    if n == 0 {
        return Err(RetrievalError::EmptyHoldout);
    }
    let mut sorted: Vec<HoldoutObservation> = observations.to_vec();
    sorted.sort_by(|a, b| b.top_score.partial_cmp(&a.top_score).unwrap_or(Ordering::Equal));

    // descending sweep: at τ = score s every observation with score ≥ s is in
    let mut sweep = Vec::with_capacity(n + 1);
    sweep.push(SweepPoint {
        tau: f64::INFINITY,
        accepted: 0,
        true_positives: 0,
        f1: 0.0,
    });
    let (mut accepted, mut tp) = (0usize, 0usize);
    let mut i = 0;
    while i < n {
        let s = sorted[i].top_score;
        while i < n && sorted[i].top_score == s {
            accepted += 1;
            tp += usize::from(sorted[i].in_group);
            i += 1;
        }
        sweep.push(SweepPoint {
            tau: s,
            accepted,
            true_positives: tp,
            f1: (2 * tp) as f64 / (accepted + n) as f64,
        });
    }

    // exact comparison of 2tp/(acc+n) as rationals; sweep is in descending τ
    // order so the first maximum is the most conservative
    let mut best = 0;
    for (j, p) in sweep.iter().enumerate().skip(1) {
        let b = &sweep[best];
        if (2 * p.true_positives) * (b.accepted + n) > (2 * b.true_positives) * (p.accepted + n) {
            best = j;
        }
    }
    Ok(Calibration {
        tau: sweep[best].tau,
        f1: sweep[best].f1,
        holdout_size: n,
        sweep,
    })
}

/// Serde for thresholds that may be +∞, written as the string `"inf"`.
pub mod threshold_serde {
    use serde::de::{self, Visitor};
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = f64;
            fn expecting(&self, f: &mut core::fmt::Formatter) -> core::fmt::Result {
                f.write_str("a number or \"inf\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
                Ok(v)
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
                Ok(v as f64)
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
                Ok(v as f64)
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
                match v {
                    "inf" | "+inf" | "Infinity" => Ok(f64::INFINITY),
                    _ => Err(E::invalid_value(de::Unexpected::Str(v), &self)),
                }
            }
        }
        d.deserialize_any(V)
    }
}
