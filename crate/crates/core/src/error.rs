use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("unknown subject `{0}`")]
    UnknownSubject(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("format error at byte {offset}{}: {detail}", entry.as_ref().map(|e| format!(" (entry `{e}`)")).unwrap_or_default())]
    Format {
        offset: u64,
        entry: Option<String>,
        detail: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("gradient check failed: max relative error {max_rel_err:.3e} exceeds {tolerance:.1e}")]
    GradCheck { max_rel_err: f64, tolerance: f64 },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-parsable category, used as the CLI error prefix.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::NonFinite { .. } => "numeric",
            Error::Contract(_) => "contract",
            Error::Config(_) => "config",
            Error::UnknownSubject(_) => "subject",
            Error::Data(_) => "data",
            Error::Format { .. } => "format",
            Error::Validation(_) => "validation",
            Error::Usage(_) => "usage",
            Error::GradCheck { .. } => "gradcheck",
            Error::Io { .. } => "io",
            Error::Json(_) => "schema",
            Error::Csv(_) => "io",
        }
    }

    /// Process exit code for the CLI. Usage errors follow the clap convention.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Usage(_) => 2,
            Error::GradCheck { .. } => 3,
            Error::Format { .. } => 4,
            Error::Validation(_) | Error::Json(_) | Error::Config(_) => 5,
            Error::Data(_) | Error::UnknownSubject(_) => 6,
            _ => 1,
        }
    }
}
