use thiserror::Error;

/// Errors produced while building designs, permutations, noise models and estimates.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unbalanced design: stimulus {label:?} appears {count} times, expected {expected}")]
    UnbalancedDesign {
        label: String,
        count: usize,
        expected: usize,
    },
    #[error("degenerate design: need at least 2 distinct stimuli, found {0}")]
    DegenerateDesign(usize),
    #[error("empty schedule")]
    EmptySchedule,
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("non-finite value at position {0}")]
    NonFinite(usize),
    #[error("no replication: every stimulus is shown once, within-treatment contrast undefined")]
    NoReplication,
    #[error("design has no block labels")]
    MissingBlocks,
    #[error("odd/even swap requires an even length, got {0}")]
    OddLength(usize),
    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("autoregressive coefficients {0:?} do not define a stationary process")]
    NonStationary(Vec<f64>),
    #[error("covariance factorization failed after jitter {jitter:e}")]
    FactorizationFailure { jitter: f64 },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("permutation is trivial for this design (alpha = {alpha})")]
    TrivialPermutation { alpha: f64 },
    #[error("series length {len} exceeds the REML size limit {limit}")]
    SizeGuard { len: usize, limit: usize },
    #[error("no optimizer start produced a finite likelihood")]
    AllStartsFailed,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(String),
}

impl Error {
    /// Short snake-case name of the variant, used in output flags.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::UnbalancedDesign { .. } => "unbalanced_design",
            Self::DegenerateDesign(_) => "degenerate_design",
            Self::EmptySchedule => "empty_schedule",
            Self::LengthMismatch { .. } => "length_mismatch",
            Self::NonFinite(_) => "non_finite",
            Self::NoReplication => "no_replication",
            Self::MissingBlocks => "missing_blocks",
            Self::OddLength(_) => "odd_length",
            Self::InvalidPermutation(_) => "invalid_permutation",
            Self::InvalidParameter(_) => "invalid_parameter",
            Self::NonStationary(_) => "non_stationary",
            Self::FactorizationFailure { .. } => "factorization_failure",
            Self::DimensionMismatch { .. } => "dimension_mismatch",
            Self::TrivialPermutation { .. } => "trivial_permutation",
            Self::SizeGuard { .. } => "size_guard",
            Self::AllStartsFailed => "all_starts_failed",
            Self::Parse { .. } => "parse",
            Self::Config(_) => "config",
            Self::Io(_) => "io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
        Error::Parse {
            line,
            message: e.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
