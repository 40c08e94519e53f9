use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
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

    #[error("{path}: no rows")]
    Empty { path: PathBuf },

    #[error("{path}:{line}: dimension mismatch, expected {expected} values but found {found}")]
    DimensionMismatch {
        path: PathBuf,
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("duplicate item id `{0}`")]
    DuplicateId(String),

    #[error("invalid item id `{0}`: ids must be non-empty and contain no whitespace")]
    InvalidId(String),

    #[error("unknown item `{item}` for model `{model}`")]
    UnknownItem { model: String, item: String },

    #[error("item `{item}` has a zero-norm vector in model `{model}`")]
    ZeroNorm { model: String, item: String },

    #[error("model `{model}` has {available} scored candidates for query `{query}`, need {needed}")]
    InsufficientScores {
        model: String,
        query: String,
        available: usize,
        needed: usize,
    },

    #[error("corpus has no identity labels")]
    MissingIdentityLabels,

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("suspect sets were built with different k ({0} vs {1})")]
    MismatchedK(usize, usize),

    #[error("model `{0}` appears more than once")]
    DuplicateModel(String),

    #[error("pair ({query}, {candidate}) is not in the suspect set")]
    UnknownPair { query: String, candidate: String },

    #[error("unknown pair id {0}")]
    UnknownPairId(usize),

    #[error("unknown expert `{0}`")]
    UnknownExpert(String),

    #[error("invalid label {0}, expected 0 or 1")]
    InvalidLabel(i64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no positive pairs to evaluate")]
    NoPositives,

    #[error("no evaluable queries (every query lacks positives or negatives)")]
    NoEvaluableQueries,

    #[error("pooled scores contain a single class")]
    SingleClass,

    #[error("zero variance in ranking")]
    ZeroVariance,

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
