use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },

    #[error("schema error at line {line}: {detail}")]
    Schema { line: usize, detail: String },

    #[error("label error at line {line}: emotion {emotion} is not below class count {classes}")]
    Label {
        line: usize,
        emotion: usize,
        classes: usize,
    },

    #[error("dataset {0} contains no records")]
    EmptyDataset(PathBuf),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coarse failure class, used by the command line to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numeric,
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable identifier.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::Contract(_) => "contract",
            Error::Domain { .. } => "domain",
            Error::Numeric(_) => "numeric",
            Error::Parse { .. } => "parse",
            Error::Schema { .. } => "schema",
            Error::Label { .. } => "label",
            Error::EmptyDataset(_) => "empty-dataset",
            Error::Config(_) => "config",
            Error::Alignment(_) => "alignment",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Domain { .. } | Error::Numeric(_) => ErrorClass::Numeric,
            Error::Config(_) => ErrorClass::Usage,
            _ => ErrorClass::Data,
        }
    }
}
