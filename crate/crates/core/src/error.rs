use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("transition row (state {state}, action {action}) sums to {sum}, expected 1")]
    NonStochastic { state: usize, action: usize, sum: f64 },

    #[error("negative or non-finite probability {value} at (state {state}, action {action})")]
    BadProbability { state: usize, action: usize, value: f64 },

    #[error("invalid MDP: {0}")]
    InvalidMdp(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("transport problem: {0}")]
    Transport(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("corrupt metric cache {path}: {reason}")]
    CacheCorrupt { path: String, reason: String },

    #[error("undefined: {0}")]
    Undefined(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by bad input rather than a failure while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::NonStochastic { .. }
                | Error::BadProbability { .. }
                | Error::InvalidMdp(_)
                | Error::Parse { .. }
                | Error::Config(_)
                | Error::Dimension(_)
        )
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
