//! Retrieve-and-re-rank engine for extreme multi-label document coding.
//!
//! Candidates are retrieved in two stages (auxiliary-code co-occurrence,
//! then BM25 against label descriptors) and re-ranked by cosine similarity
//! between a document encoding and label embeddings produced by a
//! graph-biased attention encoder over the label co-occurrence graph.

pub mod artifacts;
pub mod auxiliary;
pub mod bm25;
pub mod config;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod graph;
pub mod graphormer;
pub mod metrics;
pub mod pipeline;
pub mod registry;
pub mod reranker;
pub mod tape;

pub use error::{Error, Result};
