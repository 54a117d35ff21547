use alloc::string::String;

/// Errors raised by the monitoring core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite input in {0}")]
    NonFinite(&'static str),
    #[error("degenerate probability {0} (linear predictor overflow)")]
    DegenerateProbability(f64),
    #[error("outcomes are all one class; logistic MLE does not exist")]
    Separable,
    #[error("need at least {needed} observations, got {got}")]
    TooFewObservations { needed: usize, got: usize },
    #[error("maximum likelihood failed to converge (gradient norm {0:e})")]
    EstimationFailed(f64),
    #[error("stream exhausted: needed {needed} observations, got {got}")]
    StreamExhausted { needed: usize, got: usize },
    #[error("alpha spend exhausted: {wanted} eliminations requested with {available} survivors")]
    SpendExhausted { wanted: usize, available: usize },
    #[error("argument out of range: {0}")]
    OutOfRange(String),
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("AUC undefined: outcomes contain a single class")]
    SingleClass,
}

pub type Result<T> = core::result::Result<T, Error>;
