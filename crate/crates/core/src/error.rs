use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("design yields no valid scenarios")]
    EmptyDesign,

    #[error("protocol error: {}", .0.join("; "))]
    Protocol(Vec<String>),

    #[error("unknown method `{0}`")]
    UnknownMethod(String),

    #[error("empty report: {0}")]
    EmptyReport(String),

    #[error("pilot shows zero variance")]
    ZeroVariance,

    #[error("invalid filter expression `{0}`")]
    Filter(String),

    #[error("sink write failed: {0}")]
    Sink(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
