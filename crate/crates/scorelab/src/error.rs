use thiserror::Error;

/// Crate-wide error type. Variants carry enough context to diagnose the
/// failing call without a debugger; numerical failures that still produced a
/// usable partial value report it.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("input collection is empty")]
    EmptyInput,

    #[error("dataset contains duplicate point {0}")]
    DuplicatePoint(f64),

    #[error("dataset contains non-finite value {0}")]
    NonFinite(f64),

    #[error("time must be strictly positive, got {0}")]
    NonPositiveTime(f64),

    #[error("noise level out of range: mu={mu}, sigma={sigma} (need mu in (0,1], sigma in (0,1))")]
    InvalidNoiseLevel { mu: f64, sigma: f64 },

    #[error("index {index} out of range {min}..={max}")]
    IndexOutOfRange { index: usize, min: usize, max: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("operation requires a theory-mode network (scalar input, inner weights in {{-1,+1}})")]
    NotTheoryMode,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("training diverged at step {step}: risk {risk:.3e} exceeds {factor:.0e} x initial {initial:.3e}")]
    DivergenceDetected { step: usize, risk: f64, initial: f64, factor: f64 },

    #[error("iteration did not converge after {iters} steps; last estimate {last:.6e}")]
    NoConvergence { iters: usize, last: f64 },

    #[error("quadrature refinement stalled; partial value {partial:.6e}")]
    NonConvergentQuadrature { partial: f64 },

    #[error("sample too small: need at least {need}, got {got}")]
    InsufficientSample { need: usize, got: usize },

    #[error("i/o: {0}")]
    Io(String),

    #[error("parse: {0}")]
    Parse(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
