use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("a market needs at least one user")]
    EmptyMarket,

    #[error("market has {n} users; profiles support at most {max}")]
    TooManyUsers { n: usize, max: usize },

    #[error("covariance is not symmetric at ({i}, {j}): difference {difference:e}")]
    NotSymmetric { i: usize, j: usize, difference: f64 },

    #[error("covariance is not positive semidefinite: smallest eigenvalue {min_eigenvalue:e}")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },

    #[error("variance of user {index} must be positive, got {value}")]
    NonPositiveVariance { index: usize, value: f64 },

    #[error("non-finite entry in {what}")]
    NonFinite { what: &'static str },

    #[error("user index {index} out of range for {n} users")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("{what} of user {index} must be non-negative, got {value}")]
    Negative { what: &'static str, index: usize, value: f64 },

    #[error("{what} needs n <= {max}, got n = {n}")]
    TooLarge { what: &'static str, n: usize, max: usize },

    #[error("symmetric factorization failed for a matrix that must be positive definite")]
    Factorization,

    #[error("best-response iteration did not reach a fixed point within {rounds} rounds")]
    NonConvergence { rounds: usize },

    #[error("block structure: {0}")]
    Symmetry(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("value {value} lies outside the support [{lo}, {hi}]")]
    OutsideSupport { value: f64, lo: f64, hi: f64 },

    #[error("density vanishes at {value}; virtual value undefined")]
    ZeroDensity { value: f64 },

    #[error("scenario field `{path}`: {message}")]
    Scenario { path: String, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{0}")]
    Io(String),
}

impl Error {
    pub(crate) fn scenario(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Scenario { path: path.into(), message: message.into() }
    }
}
