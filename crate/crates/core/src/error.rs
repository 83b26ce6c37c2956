use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by corpus handling, training, attribution, and evaluation.
///
/// `Validation` covers contract violations in inputs or configuration and maps
/// to exit code 1 in the CLI; everything else is a runtime failure (exit 2).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Input or configuration violates a documented invariant.
    #[error("validation: {0}")]
    Validation(String),

    /// A line of an input file could not be parsed.
    #[error("parse error in {path} at line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// Training produced a non-finite loss or gradient.
    #[error("divergence at epoch {epoch}, batch {batch}: {message}")]
    Divergence {
        epoch: usize,
        batch: usize,
        message: String,
    },

    /// The attribution engine hit a non-finite value.
    #[error("attribution failure{}: {message}", doc_id.as_ref().map(|d| format!(" for doc {d}")).unwrap_or_default())]
    Attribution {
        doc_id: Option<String>,
        message: String,
    },

    /// A required upstream artifact is missing or incomplete.
    #[error("incomplete input: {0}")]
    Incomplete(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn validation(msg: String) -> Self {
        Error::Validation(msg)
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors that indicate bad input rather than a runtime fault.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation(_) | Error::Parse { .. } | Error::Incomplete(_)
        )
    }
}
