//! End-to-end pipeline: corpus ingestion through answer generation.

mod config;
mod corpus;
mod pipeline;

pub use config::{EvalSection, IndexSection, IngestSection, PipelineConfig, ServeSection};
pub use corpus::{load_corpus, validate_corpus};
pub use pipeline::{
    content_hash, Clock, FrozenClock, HitView, InitReport, Pipeline, QueryResponse, StageTimings,
    SystemClock,
};
