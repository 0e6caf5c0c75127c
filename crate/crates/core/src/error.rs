use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Advice attached to singular least-squares failures.
pub const SINGULAR_ADVICE: &str =
    "add measurement noise to the training data (e.g. 1%) or increase the ridge parameter lambda";

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch { context: &'static str, expected: usize, found: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite state at integration step {step}")]
    NonFiniteState { step: usize },

    #[error("channel '{channel}' has a degenerate range (min == max)")]
    DegenerateChannel { channel: String },

    #[error("insufficient history: need index >= {needed}, got {got}")]
    InsufficientHistory { needed: usize, got: usize },

    #[error("projection input component {index} = {value} lies outside (0, 1); normalize first")]
    OutsideUnitInterval { index: usize, value: f64 },

    #[error("could not draw a fresh index pair for feature {feature}")]
    PlanExhausted { feature: usize },

    #[error("least-squares system is numerically singular (condition estimate {condition:e}); {advice}")]
    Singular { condition: f64, advice: &'static str },

    #[error("prediction diverged at step {step}")]
    Diverged { step: usize },

    #[error("limit cycle not reached within {max_steps} steps")]
    NoConvergence { max_steps: usize },

    #[error("unsupported model format version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("unknown channel '{0}'")]
    UnknownChannel(String),

    #[error("malformed data: {0}")]
    Malformed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Numerical failures, as opposed to usage, configuration or I/O problems.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteState { .. }
                | Error::DegenerateChannel { .. }
                | Error::OutsideUnitInterval { .. }
                | Error::PlanExhausted { .. }
                | Error::Singular { .. }
                | Error::Diverged { .. }
                | Error::NoConvergence { .. }
        )
    }
}
