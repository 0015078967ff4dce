use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// The configuration does not satisfy the command's schema.
    #[error("invalid configuration: {0}")]
    Schema(String),

    /// A retry cap was exceeded; files written before the failure are kept and flagged.
    #[error("resource exhausted: {0}")]
    Exhausted(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {what}: {message}")]
    Parse { what: String, message: String },
}

/// Machine-readable form of a failed run, printed on stderr.
#[derive(Debug, Serialize)]
pub struct ErrorRecord {
    pub error: &'static str,
    pub exit_code: i32,
    pub message: String,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Schema(_) | CliError::Parse { .. } => 2,
            CliError::Exhausted(_) => 3,
            CliError::Io { .. } => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Schema(_) => "schema",
            CliError::Exhausted(_) => "exhausted",
            CliError::Io { .. } => "io",
            CliError::Parse { .. } => "parse",
        }
    }

    pub fn record(&self) -> ErrorRecord {
        ErrorRecord { error: self.kind(), exit_code: self.exit_code(), message: self.to_string() }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        CliError::Io { path: path.as_ref().display().to_string(), source }
    }
}

impl From<contact_shape::Error> for CliError {
    fn from(e: contact_shape::Error) -> Self {
        use contact_shape::Error as E;
        match e {
            E::BoundaryRetriesExhausted { .. } | E::NoEstimate { .. } => CliError::Exhausted(e.to_string()),
            other => CliError::Schema(other.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
