use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dirac-requires-lattice-weight: a Dirac kernel has no pointwise value")]
    DiracRequiresLatticeWeight,
    #[error("singular-at-zero: kernel is singular at lag 0")]
    SingularAtZero,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("quadrature did not converge (achieved relative error {achieved:e})")]
    Quadrature { achieved: f64 },
    #[error("missing factorization: {0}")]
    MissingFactorization(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("lattice mismatch")]
    LatticeMismatch,
    #[error("memory budget exceeded: {needed} nodes requested, budget {budget}; use a coarser lattice")]
    MemoryBudget { needed: usize, budget: usize },
    #[error("covariance matrix is not positive semidefinite (eigenvalue {0:e})")]
    NotPositiveSemidefinite(f64),
    #[error("exponential overflow: max V encountered = {max_v}")]
    Overflow { max_v: f64 },
    #[error("coincident times in chaos kernel")]
    CoincidentTimes,
    #[error("all samples are zero")]
    AllZero,
    #[error("insufficient-precision: estimate {value} is within 3 SE ({se}) of zero")]
    InsufficientPrecision { value: f64, se: f64 },
    #[error("below-validity-threshold: {value} < {threshold}")]
    BelowValidityThreshold { value: f64, threshold: f64 },
    #[error("above-small-ball-threshold: r = {r} >= r* = {threshold}")]
    AboveSmallBallThreshold { r: f64, threshold: f64 },
    #[error("io: {0}")]
    Io(String),
    #[error("malformed field file: {0}")]
    Format(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
