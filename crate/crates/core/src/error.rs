use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse category of an [`Error`], used to pick a process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Config => 1,
            ErrorKind::Data => 2,
            ErrorKind::Numeric => 3,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("line {line}: timestamp does not increase")]
    Ordering { line: u64 },
    #[error("empty input")]
    EmptyInput,
    #[error("non-finite numeric input")]
    NonFinite,
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("configuration: {0}")]
    Config(String),
    #[error("duplicate row for participant {participant}, second {second}")]
    Duplicate { participant: String, second: i64 },
    #[error("participant {participant} is not eligible: {reason}")]
    Eligibility { participant: String, reason: String },
    #[error("labels contain a single class")]
    DegenerateLabels,
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("fold {fold} has no positive rows; reduce the number of folds")]
    FoldConstruction { fold: usize },
    #[error("no scored test seconds for subject {subject}, candidate {candidate}")]
    Incomplete { subject: String, candidate: String },
    #[error("target {target}: {source}")]
    Target {
        target: String,
        #[source]
        source: Box<Error>,
    },
    #[error("stage {stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
    #[error("bad file format in {path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::FoldConstruction { .. } => ErrorKind::Config,
            Error::NonFinite | Error::DegenerateLabels | Error::Numeric(_) => ErrorKind::Numeric,
            Error::Target { source, .. } | Error::Stage { source, .. } => source.kind(),
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn in_stage(self, stage: &str) -> Self {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }
}
