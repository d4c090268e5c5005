use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value at node {0}")]
    NonFinite(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid source model: {0}")]
    InvalidModel(String),
    #[error("covariance undefined on the diagonal")]
    DiagonalSingularity,
    #[error("padding insufficient: {0}")]
    InsufficientPadding(String),
    #[error("solver did not contract at k = {k}: {reason}")]
    NotContracting { k: f64, reason: String },
    #[error("solver hit the iteration cap at k = {k} after {iterations} iterations (residual {residual:.3e})")]
    IterationCap { k: f64, iterations: usize, residual: f64 },
    #[error("invalid direction: {0}")]
    InvalidDirection(String),
    #[error("band not covered: {0}")]
    BandNotCovered(String),
    #[error("lag is not a multiple of the frequency step: {0}")]
    LagOffGrid(String),
    #[error("mean far-field table required for this estimator")]
    MissingMeanTable,
    #[error("insufficient direction coverage: {0}")]
    InsufficientCoverage(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("provenance mismatch: {0}")]
    ProvenanceMismatch(String),
    #[error("bad magic bytes in field file")]
    BadMagic,
    #[error("truncated field file: {0}")]
    Truncated(String),
    #[error("unknown dtype tag {0}")]
    UnknownDtype(u8),
    #[error("malformed metadata: {0}")]
    Metadata(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
