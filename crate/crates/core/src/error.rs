use thiserror::Error;

/// Errors raised anywhere in the engine.
///
/// The variants map one-to-one onto the failure classes the CLI turns into
/// exit codes (configuration, data, divergence); see [`Error::class`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("training diverged: non-finite value in {term}")]
    Divergence { term: String },

    #[error("audit error: {0}")]
    Audit(String),

    #[error("unknown category {value:?} in column {column:?}")]
    UnknownCategory { column: String, value: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("all {count} trials failed; first error: {first}")]
    AllTrialsFailed { count: usize, first: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Coarse failure class, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Divergence,
    Internal,
}

impl Error {
    pub fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension { op, detail: detail.into() }
    }

    pub fn domain(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain { op, detail: detail.into() }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), source }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::Schema(_) => ErrorClass::Config,
            Error::Data(_) | Error::UnknownCategory { .. } | Error::Csv(_) | Error::Io { .. } => {
                ErrorClass::Data
            }
            Error::Divergence { .. } => ErrorClass::Divergence,
            Error::AllTrialsFailed { first, .. } if first.contains("diverged") => {
                ErrorClass::Divergence
            }
            _ => ErrorClass::Internal,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
