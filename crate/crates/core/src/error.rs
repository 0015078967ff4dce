use thiserror::Error;

use crate::lattice::Site;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("time argument must be nonnegative, got {0}")]
    NegativeTime(f64),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("rate {lambda} outside (0, {lambda_max}]")]
    RateOutOfRange { lambda: f64, lambda_max: f64 },

    #[error("thinning applies to edge clocks only")]
    SiteKeyNotThinnable,

    #[error("site {0} lies outside the simulation window")]
    SiteOutsideWindow(Site),

    #[error("time {t} outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },

    #[error("record for site {0} did not regenerate")]
    NotRegenerated(Site),

    #[error("expected lambda' <= lambda, got lambda'={lambda_prime} > lambda={lambda}")]
    RateOrder { lambda: f64, lambda_prime: f64 },

    #[error("lattice with {0} sites exceeds the 12-site oracle limit")]
    OversizedLattice(usize),

    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),

    #[error("lattice cannot be embedded in a simulator window: {0}")]
    NonEmbeddable(String),

    #[error("direction sets differ")]
    DirectionMismatch,

    #[error("reference shape has {found} directions, at least {required} required")]
    ShapeTooCoarse { found: usize, required: usize },

    #[error("no accepted replicas out of {replicas}")]
    NoEstimate { replicas: usize },

    #[error("boundary reached after {retries} window enlargements")]
    BoundaryRetriesExhausted { retries: usize },

    #[error("operation not supported in dimension {0}")]
    UnsupportedDimension(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}
