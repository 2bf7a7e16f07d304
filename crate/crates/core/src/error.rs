use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("game solver diverged after {iterations} iterations: {reason}")]
    Diverged {
        iterations: usize,
        reason: String,
        /// Last iterate whose costs were all finite.
        last_stable: Option<Box<crate::game::NashSolution>>,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("measurement model failed: {0}")]
    Measurement(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}
