use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("document is empty after preprocessing")]
    EmptyDocument,

    #[error("invalid chunk policy: chunk_size={chunk_size}, overlap={overlap}")]
    InvalidChunkPolicy { chunk_size: usize, overlap: usize },

    #[error("invalid document: {0}")]
    InvalidDocument(String),

    #[error("duplicate document id `{0}` in corpus")]
    DuplicateDocId(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty input text")]
    EmptyInput,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("batch item {index}: {source}")]
    BatchItem {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("chunk id `{0}` already stored with different text")]
    ConflictingChunk(String),

    #[error("knowledge base is empty")]
    EmptyIndex,

    #[error("unsupported index format version {found} (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },

    #[error("index file is corrupt: {0}")]
    Corrupt(String),

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },

    #[error("remote service unreachable after {attempts} attempt(s): {message}")]
    Unreachable { attempts: u32, message: String },

    #[error("provider refused the request: {0}")]
    Refused(String),

    #[error("malformed provider response: {0}")]
    BadResponse(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Whether retrying the same request may succeed.
    pub fn is_retryable(&self) -> bool {
        match self {
            Error::Unreachable { .. } => true,
            Error::BatchItem { source, .. } | Error::Stage { source, .. } => source.is_retryable(),
            _ => false,
        }
    }

    /// Stable machine-readable code, used in JSON error bodies.
    pub fn code(&self) -> &'static str {
        match self {
            Error::EmptyDocument => "empty_document",
            Error::InvalidChunkPolicy { .. } => "invalid_chunk_policy",
            Error::InvalidDocument(_) => "invalid_document",
            Error::DuplicateDocId(_) => "duplicate_doc_id",
            Error::InvalidConfig(_) => "invalid_config",
            Error::EmptyInput => "empty_input",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::BatchItem { source, .. } => source.code(),
            Error::ConflictingChunk(_) => "conflicting_chunk",
            Error::EmptyIndex => "empty_index",
            Error::VersionMismatch { .. } => "version_mismatch",
            Error::Corrupt(_) => "corrupt_index",
            Error::ChecksumMismatch { .. } => "checksum_failure",
            Error::Unreachable { .. } => "provider_unreachable",
            Error::Refused(_) => "provider_refusal",
            Error::BadResponse(_) => "bad_provider_response",
            Error::Stage { source, .. } => source.code(),
            Error::Io { .. } => "io_error",
            Error::Parse { .. } => "parse_error",
        }
    }
}
