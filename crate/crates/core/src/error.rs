use thiserror::Error;

/// Errors raised by the engine.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, lengths or dimensions that do not fit together.
    #[error("structural error: {0}")]
    Structural(String),
    /// A value outside the support of the quantity it represents.
    #[error("domain error: {0}")]
    Domain(String),
    /// The sampler could not find a finite starting point.
    #[error("initialization failed: {0}")]
    Initialization(String),
    /// A marginal-likelihood or Bayes factor computation produced no usable value.
    #[error("estimation failed: {0}")]
    Estimation(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn structural(msg: impl Into<String>) -> Error {
    Error::Structural(msg.into())
}

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
