use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty sentence")]
    EmptySentence,
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("unknown style label `{0}`")]
    UnknownStyle(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("synthetic corpus spec error: {0}")]
    Spec(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid style: {0}")]
    InvalidStyle(String),
    #[error("style classifier must be frozen before it is used in a transfer objective")]
    FrozenClassifierRequired,
    #[error("batch shape error: {0}")]
    BatchShape(String),
    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),
    #[error("source styles {source_styles:?} do not match target styles {target_styles:?}")]
    StyleSetMismatch {
        source_styles: Vec<String>,
        target_styles: Vec<String>,
    },
    #[error("training diverged at step {step}: non-finite loss")]
    Divergence { step: u64 },
    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),
    #[error("input mismatch: {0}")]
    InputMismatch(String),
    #[error("invalid metric input: {0}")]
    InvalidMetric(String),
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
