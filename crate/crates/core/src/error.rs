use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    /// A row of an embedding matrix had (near) zero norm and cannot be normalized.
    #[error("degenerate embedding: row {row} has norm {norm:e}")]
    DegenerateEmbedding { row: usize, norm: f64 },

    #[error("degenerate graph: {0}")]
    DegenerateGraph(String),

    #[error("no spectral gap: all eigenvalues are below {zero_tol:e}")]
    NoSpectralGap { zero_tol: f64 },

    /// A quantity that the computation divides by vanished.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("insufficient samples: {got} usable draws, need at least {need}")]
    InsufficientSamples { got: usize, need: usize },

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Diverged { epoch: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}
