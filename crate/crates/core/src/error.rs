use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the crowdlabel library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("annotation list is empty")]
    EmptyAnnotations,

    #[error("vote list is empty")]
    EmptyVotes,

    #[error("row {row}: {message}")]
    SchemaMismatch { row: u64, message: String },

    #[error("row {row}: {message}")]
    MalformedRow { row: u64, message: String },

    #[error("invalid label schema: {0}")]
    InvalidSchema(String),

    #[error("invalid sample {sample_id}: {message}")]
    InvalidSample { sample_id: String, message: String },

    #[error("invalid corpus: {0}")]
    InvalidCorpus(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid feature space: {0}")]
    InvalidFeatureSpace(String),

    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown annotator `{0}`")]
    UnknownAnnotator(String),

    #[error("conditioning mismatch: {0}")]
    ConditioningMismatch(String),

    #[error("no samples in the {0} split")]
    EmptySplit(&'static str),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid selection: {0}")]
    InvalidSelection(String),

    #[error("template error: {0}")]
    Template(String),

    #[error("cannot parse response `{0}` as a label")]
    Unparseable(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid request: {0}")]
    InvalidRequest(String),

    #[error("participant `{participant}` already answered item `{item_id}`")]
    DuplicateResponse { participant: String, item_id: String },

    #[error("unknown survey item `{0}`")]
    UnknownItem(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
