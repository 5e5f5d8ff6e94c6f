//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("system size {n} exceeds the supported maximum of {max} qubits")]
    TooManyQubits { n: usize, max: usize },

    #[error("site index {site} out of range for {n} qubits")]
    SiteOutOfRange { site: usize, n: usize },

    #[error("basis label 'I' is not measurable; bases must use X, Y, Z only")]
    IdentityInBasis,

    #[error("trajectory diverged (scale {trace_mag:.3e}) at t = {t}")]
    DivergedTrajectory { trace_mag: f64, t: f64 },

    #[error("step limit of {max_steps} exceeded at t = {t}")]
    StepLimitExceeded { max_steps: usize, t: f64 },

    #[error("step size underflow ({dt:.3e}) at t = {t}")]
    StepUnderflow { dt: f64, t: f64 },

    #[error("rates must be strictly positive, got {0}")]
    NonPositiveRate(f64),

    #[error("outcome distribution not normalizable: sum = {sum} (state corrupted)")]
    BadDistribution { sum: f64 },

    #[error("NaN gradient encountered at step {step}")]
    NanGradient { step: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dataset incomplete: {0}")]
    IncompleteDataset(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
