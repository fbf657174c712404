//! Causal troubleshooting engine: text quantization, a causal Bayesian
//! network over subsystem, cause, observation and solution, and the
//! queries built on it.

// Probability code indexes several parallel tables by the same category.
#![allow(clippy::needless_range_loop)]

pub mod advisory;
pub mod config;
pub mod corpus;
pub mod engine;
pub mod error;
pub mod evaluation;
pub mod inference;
pub mod model;
pub mod pipeline;
pub mod quantizer;
pub mod service;
pub mod text;
