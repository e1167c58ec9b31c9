//! Allocation-only core of the guarded QA engine.
//!
//! Everything in this crate is deterministic and free of IO: tokenization,
//! PII rules, the sparse and dense indices with fusion and re-ranking, the
//! relevance threshold and its calibration, guardrail evaluation, prompt
//! rendering and the text-similarity metrics. Provider calls are expressed
//! as traits; the `guardqa` crate supplies HTTP and mock implementations.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod corpus;
pub mod generation;
pub mod guardrails;
pub mod metrics;
pub mod provider;
pub mod retrieval;
pub mod sanitizer;
pub mod text;
