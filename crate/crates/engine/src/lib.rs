//! guardqa engine: corpus store, provider adapters, language routing, the
//! answering pipeline, evaluation suites, HTTP service and CLI.

pub mod cli;
pub mod config;
pub mod evaluation;
pub mod langbridge;
pub mod moderation;
pub mod providers;
pub mod service;
pub mod store;
pub mod synthetic;
pub mod pipeline;
pub mod telemetry;
