use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A level, size or parameter outside its admissible range.
    #[error("domain error: {0}")]
    Domain(String),

    /// Input for which the statistic is undefined (e.g. an all-zero score vector).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}
