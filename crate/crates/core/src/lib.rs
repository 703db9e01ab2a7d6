//! Benchmark forge and evaluation harness for logical reasoning over
//! knowledge graphs.
//!
//! The crate covers the full pipeline: load a triple store ([`kg`]),
//! parse query patterns ([`formula`], [`catalog`]), evaluate grounded
//! queries exactly ([`engine`]), reverse-sample new queries from a graph
//! ([`sampler`]), verbalize them into natural-language questions
//! ([`question`]), prompt a chat model ([`gateway`]), pick in-context
//! demonstrations ([`demo`]), and score ranked answers ([`metrics`]).
//!
//! Stages communicate through JSON-lines artifacts ([`artifact`]) so runs
//! are reproducible bit-for-bit from a recorded seed and config.

pub mod artifact;
pub mod catalog;
pub mod demo;
pub mod engine;
pub mod fixture;
pub mod formula;
pub mod gateway;
pub mod kg;
pub mod metrics;
pub mod pipeline;
pub mod question;
pub mod sampler;
pub mod scalar;

pub use scalar::Real;

/// Default scalar type for similarity scores, precisions, and embeddings.
///
/// The numeric kernels in [`metrics`] and [`demo`] are generic over
/// [`Real`]; everything that crosses a file format uses this alias.
pub type Score = f64;

/// Match configuration at the default precision.
pub type ScoreMatchConfig = metrics::MatchConfig<Score>;
