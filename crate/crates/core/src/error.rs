use thiserror::Error;

/// Errors raised by the numerical routines of this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("spectrum must contain at least one variance")]
    EmptySpectrum,

    #[error("variance at index {index} is negative or not finite: {value}")]
    InvalidVariance { index: usize, value: f64 },

    #[error("spectrum is not sorted in non-increasing order at index {index}")]
    UnsortedSpectrum { index: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("dimension {d} out of range 1..={max}")]
    DimensionOutOfRange { d: usize, max: usize },

    #[error("time {t} outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },

    #[error("log-SNR is singular at t = 0")]
    SingularLogSnr,

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("matrix is not positive semidefinite (eigenvalue {eigenvalue:e})")]
    NotPositiveSemidefinite { eigenvalue: f64 },

    #[error("Jacobi eigensolver did not converge within {sweeps} sweeps")]
    EigenNoConvergence { sweeps: usize },

    #[error("ratio sigma/sigma_hat undefined at index {index}: sigma_hat = 0 but sigma > 0")]
    UndefinedRatio { index: usize },

    #[error("eps_u too large: estimated variance at index {index} is below 4 S eps_u")]
    EpsilonTooLarge { index: usize },

    #[error("degenerate sample: {n} rows for dimension {dim}")]
    DegenerateSample { n: usize, dim: usize },

    #[error("unsupported schedule: {0}")]
    UnsupportedSchedule(&'static str),

    #[error("csv: {0}")]
    Csv(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}
