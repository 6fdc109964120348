use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid value: {0}")]
    Value(String),

    #[error("protocol violation: {0}")]
    Protocol(String),

    /// The corrected resultant length was non-positive, so the samples are
    /// too dispersed for the moment estimator.
    #[error("wrapped-normal estimate undefined (corrected R^2 = {r_e_sq})")]
    EstimateUndefined { r_e_sq: f64 },

    #[error("data error: {0}")]
    Data(String),
}
