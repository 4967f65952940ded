//! Retrieval-augmented generation engine and evaluation harness.
//!
//! The crate is organized along the pipeline stages:
//!
//! - [`ingest`]: text cleanup and fixed-size overlapping character chunking
//! - [`embed`]: embedding providers (deterministic hashing embedder, remote HTTP service)
//! - [`kb`]: the vector knowledge base with flat and clustered cosine search,
//!   percentile filtering and a checksummed on-disk format
//! - [`gen`]: prompt assembly and chat-completion providers
//! - [`eval`]: answer relevancy, context recall, answer correctness and faithfulness
//! - [`orchestrator`]: configuration, corpus loading and the end-to-end pipeline
//!
//! Data-parallel inner loops run on rayon when the `parallel` feature is enabled
//! (the default) and fall back to plain iteration otherwise; see [`par`].

pub mod embed;
pub mod error;
pub mod eval;
pub mod gen;
pub mod ingest;
pub mod kb;
pub mod orchestrator;
pub mod par;
pub mod remote;
pub mod testing;

pub use error::{Error, Result};
