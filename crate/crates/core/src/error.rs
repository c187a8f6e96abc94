use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum OmtError {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("covariance is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("block exceeds enumeration limit: block {block} has size {size}, limit is {limit}")]
    BlockTooLarge {
        block: usize,
        size: usize,
        limit: usize,
    },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("brute-force enumeration is capped at K = {cap}, got K = {k}")]
    TooManyHypotheses { k: usize, cap: usize },

    #[error("undefined posterior: both densities vanish at z = {0}")]
    UndefinedPosterior(f64),

    #[error("engine requires {expected} dependence")]
    WrongDependence { expected: &'static str },

    #[error("locFDR input is not sorted in nondecreasing order at position {0}")]
    Unsorted(usize),

    #[error(
        "calibration failed to bracket: estimated constraint {value:.6} exceeds target {target:.6} at mu_max = {mu_max}"
    )]
    BracketFailure {
        mu_max: f64,
        value: f64,
        target: f64,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("mixture fit failed: {0}")]
    FitFailed(String),

    #[error("no alternative components")]
    NoAlternative,

    #[error("variant {variant}: {source}")]
    Variant {
        variant: String,
        #[source]
        source: Box<OmtError>,
    },
}

impl OmtError {
    /// True for errors raised while calibrating a policy.
    pub fn is_calibration_failure(&self) -> bool {
        match self {
            OmtError::BracketFailure { .. } => true,
            OmtError::Variant { source, .. } => source.is_calibration_failure(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, OmtError>;
