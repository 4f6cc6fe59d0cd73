use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the controller, plant, simulator, and analysis layers.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    /// Leading principal minor `k` (1-based) is zero to working tolerance.
    #[error("leading principal minor {0} is singular")]
    SingularMinor(usize),

    #[error("non-finite state encountered at t = {t}")]
    NonFiniteState { t: f64 },

    #[error("input gain sign pattern {found:?} disagrees with plant sign matrix {expected:?}")]
    SignMismatch { expected: Vec<f64>, found: Vec<f64> },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("missing analysis-only field `{0}` in trajectory log")]
    MissingField(&'static str),

    #[error("step failed at t = {t}: {source}")]
    AtTime { t: f64, source: Box<Error> },
}

impl Error {
    pub fn invalid(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Self::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn dims(context: &'static str, expected: usize, got: usize) -> Self {
        Self::DimensionMismatch { context, expected, got }
    }

    /// Strips any `AtTime` wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtTime { source, .. } => source.root(),
            other => other,
        }
    }
}
