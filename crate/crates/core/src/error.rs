use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{kind}: shape mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        kind: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{kind}: non-finite value in input")]
    NonFinite { kind: &'static str },

    #[error("non-finite gradient for parameter {param}")]
    NonFiniteGradient { param: String },

    #[error("gradient: {0}")]
    Gradient(String),

    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for errors that signal numeric blow-up rather than misuse.
    pub fn is_non_finite(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::NonFiniteGradient { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
