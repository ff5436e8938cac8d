use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent caller input.
    #[error("invalid input: {0}")]
    Input(String),

    /// A feature value was NaN or infinite.
    #[error("non-finite feature value in sample `{id}` (column {column})")]
    NonFinite { id: String, column: usize },

    /// A parameter violated its documented range.
    #[error("invalid parameter `{name}`: {reason}")]
    Param { name: &'static str, reason: String },

    /// Feature and center dimensions disagree.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    /// A class lost every sample to noise exclusion.
    #[error("class {0} has no samples left after exclusion")]
    EmptyClass(usize),

    #[error("unknown sample `{0}`")]
    UnknownSample(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Param {
            name,
            reason: reason.into(),
        }
    }

    /// Whether the error stems from caller input rather than the environment.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::Io(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
