use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument does not conform to the grid or shape it is used with.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A point outside the domain of a function (e.g. `t <= 0` for the heat kernel).
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid configuration; `field` names the offending parameter.
    #[error("invalid configuration `{field}`: {reason}")]
    Config { field: String, reason: String },

    /// A solver produced a non-finite state.
    #[error("solution blew up at step {step}")]
    BlowUp { step: usize },

    #[error("conjugate gradient stopped after {iterations} iterations at relative residual {residual:e}")]
    NoConvergence { iterations: usize, residual: f64 },

    /// A study could not produce an estimate (all paths exceeded, zero variance, ...).
    #[error("degenerate study: {0}")]
    Degenerate(String),
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
