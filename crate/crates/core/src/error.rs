use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse failure class, used by the CLI to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Input,
    Excitation,
    Divergence,
    Numerical,
}

impl ErrorCategory {
    pub fn as_str(&self) -> &'static str {
        match self {
            ErrorCategory::Input => "input",
            ErrorCategory::Excitation => "excitation",
            ErrorCategory::Divergence => "divergence",
            ErrorCategory::Numerical => "numerical",
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not a proper rotation: {0}")]
    NotARotation(String),
    #[error("rotation angle {0} rad is too close to pi for a unique logarithm")]
    AmbiguousLogarithm(f64),
    #[error("euler conversion at gimbal lock")]
    GimbalLock,
    #[error("singular matrix: {0}")]
    Singular(&'static str),
    #[error("QR factorization yields an improper rotation (input has negative determinant)")]
    ImproperFactorization,

    #[error("magcal: need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("magcal: insufficient attitude coverage (fitted quadric is not an ellipsoid)")]
    InsufficientCoverage,
    #[error("magcal: refine diverged after {iterations} iterations")]
    RefineDiverged { iterations: usize },

    #[error(
        "gyrocal: insufficient excitation for initialization (condition number {condition:.3e})"
    )]
    InsufficientExcitation { condition: f64 },
    #[error("gyrocal: need at least {needed} initialization intervals, got {got}")]
    TooFewIntervals { needed: usize, got: usize },
    #[error("gyrocal: invalid propagation step dt = {0}")]
    InvalidStep(f64),
    #[error("gyrocal: filter produced non-finite state at t = {0}")]
    FilterDiverged(f64),

    #[error("empty series")]
    EmptySeries,
    #[error("series length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("timestamps misaligned at index {index}")]
    MisalignedTimestamps { index: usize },
    #[error("timestamps not strictly increasing at index {index}")]
    NonMonotonic { index: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Log(#[from] crate::log::LogError),
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::InsufficientCoverage
            | Error::InsufficientExcitation { .. }
            | Error::TooFewIntervals { .. } => ErrorCategory::Excitation,
            Error::RefineDiverged { .. } | Error::FilterDiverged(_) => ErrorCategory::Divergence,
            Error::NotARotation(_)
            | Error::AmbiguousLogarithm(_)
            | Error::GimbalLock
            | Error::Singular(_)
            | Error::ImproperFactorization => ErrorCategory::Numerical,
            _ => ErrorCategory::Input,
        }
    }
}
