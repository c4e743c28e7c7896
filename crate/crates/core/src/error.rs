use std::path::PathBuf;

/// Errors raised across the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest error: {0}")]
    Manifest(String),

    /// Malformed tensor file (bad magic, unsupported dtype, payload length mismatch).
    #[error("tensor format error: {0}")]
    Format(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("isolated node at token index {index}")]
    IsolatedNode { index: usize },

    #[error("degenerate {0}")]
    Degenerate(String),

    #[error("eigensolver did not converge (residual {residual:e})")]
    Convergence { residual: f64 },

    #[error("pairing error: {0}")]
    Pairing(String),

    #[error("empty group: {0}")]
    EmptyGroup(String),

    #[error("configuration fingerprint mismatch: {left} vs {right}")]
    FingerprintMismatch { left: String, right: String },

    #[error("usage error: {0}")]
    Usage(String),

    /// Wraps an error with the item/layer it was raised for.
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn with_context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }

    /// Process exit code: 2 for usage and IO problems, 1 for data violations
    /// and degenerate analyses.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Io { .. } | Error::Manifest(_) | Error::Usage(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
