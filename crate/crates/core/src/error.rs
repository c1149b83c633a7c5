use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("value {value} outside the domain of {what}")]
    Domain { what: &'static str, value: f64 },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("neuron index {index} out of range for a network of {n} neurons")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("negative flow duration {0}")]
    NegativeDuration(f64),

    #[error("gamma = {gamma} is not admissible: the a-priori bound is sqrt(alpha/beta) = {gamma_max}")]
    GammaInadmissible { gamma: f64, gamma_max: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
