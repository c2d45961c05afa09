use thiserror::Error;

/// Errors raised by the numerical routines and experiment harnesses.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A parameter set violates its invariants (odd order, non-positive β, ...).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// An input value is unusable (non-finite residual, empty batch, ...).
    #[error("invalid input: {0}")]
    Input(String),

    /// The integration grid does not reach far enough into the tails.
    #[error(
        "support not covered: unnormalized density {value:e} at x = {at} exceeds {threshold:e}"
    )]
    SupportNotCovered { at: f64, value: f64, threshold: f64 },

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
