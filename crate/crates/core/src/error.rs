use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An input outside the domain an operation is defined on.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("parse error: {0}")]
    Parse(String),

    /// Transport failure that survived every retry.
    #[error("backend error: {0}")]
    Backend(String),

    /// The remote answered, but not in the chat-completion shape.
    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("judge response could not be scored: {0}")]
    JudgeParse(String),

    #[error("mechanism tags could not be parsed: {0}")]
    TagParse(String),

    #[error("setup error: {0}")]
    Setup(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("conflict: {0}")]
    Conflict(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
