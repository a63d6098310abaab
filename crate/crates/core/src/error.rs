use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{file}:{line}: parse error: {reason}")]
    Parse { file: String, line: u32, reason: String },

    #[error("function `{0}` not found")]
    FunctionNotFound(String),

    #[error("unknown CFG node {0}")]
    UnknownNode(usize),

    #[error("variable `{key}` does not occur in the criterion statement at line {line}")]
    CriterionMismatch { key: String, line: u32 },

    #[error("cannot merge slices of different functions ({0} vs {1})")]
    MixedFunctions(String, String),

    #[error("no key variable survived seed analysis")]
    EmptyResult,

    #[error("no root statement found for key variable `{0}`")]
    NoRootStatement(String),

    #[error("seed analysis failed: {0}")]
    SeedAnalysisFailed(String),

    #[error("occurrence span {start}..={end} is outside a statement of {len} tokens")]
    SpanMismatch { start: usize, end: usize, len: usize },

    #[error("cannot encode an empty token sequence")]
    EmptyInput,

    #[error("cosine similarity of a zero vector")]
    ZeroVector,

    #[error("vector dimensions differ: {0} vs {1}")]
    DimMismatch(usize, usize),

    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),

    #[error("embedding provider protocol violation: {0}")]
    ProviderProtocol(String),

    #[error("function `{0}` has no eligible variable occurrence")]
    NoEligibleOccurrence(String),

    #[error("no seed pair could be pinpointed in `{0}`")]
    AllPairsFailed(String),

    #[error("index manifest mismatch: {0}")]
    ManifestMismatch(String),

    #[error("corrupt index: {0}")]
    CorruptIndex(String),

    #[error("an index is required for this operation")]
    IndexRequired,

    #[error("invalid unified diff: {0}")]
    Diff(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
