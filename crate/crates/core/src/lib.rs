//! Mining agent execution traces for recurring tool-call chains.
//!
//! The pipeline: ingest traces ([`trace`]), normalize calls with expert rules
//! ([`normalize`]), fold executions into a weighted state graph ([`graph`]),
//! extract high-traffic chains as meta-tools ([`extract`]), and report graph
//! statistics and estimated LLM-call savings ([`metrics`]). [`optimize`]
//! drives an iterative rule-discovery loop around a pluggable analyst.

pub mod error;
pub mod extract;
pub mod graph;
pub mod metrics;
pub mod normalize;
pub mod optimize;
pub mod trace;

pub use error::{Error, Result};
