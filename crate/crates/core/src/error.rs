//! Error types shared across the pipeline.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Pipeline-wide error type.
///
/// Variants are grouped by how the CLI maps them to exit codes: parameter and
/// schema problems are validation failures (exit 1), anything wrong with the
/// input data is a data error (exit 2), and solver breakdowns are numerical
/// failures (exit 3).
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("cell {cell}: found {found} RPT anchor(s), need at least 2")]
    InsufficientAnchors { cell: String, found: usize },

    #[error(
        "cell {cell}: anchor {component} decreases between efc {efc_a} ({value_a}) and efc {efc_b} ({value_b})"
    )]
    NonMonotoneAnchors {
        cell: String,
        component: String,
        efc_a: f64,
        value_a: f64,
        efc_b: f64,
        value_b: f64,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("signal quality: {0}")]
    SignalQuality(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("feature schema mismatch: missing [{missing}], unexpected [{extra}]")]
    SchemaMismatch { missing: String, extra: String },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("missing dependency: {0}")]
    Dependency(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
