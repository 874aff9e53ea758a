use num_complex::Complex64;
use thiserror::Error;

/// Errors raised by the numerical modules.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid root-sector order {0}: must be >= 1")]
    InvalidOrder(i64),

    #[error("node budget of {max_nodes} exceeded: {required} nodes needed, achievable error {achievable_error:e}")]
    BudgetExceeded {
        max_nodes: usize,
        required: usize,
        achievable_error: f64,
    },

    #[error("contour hits the spectrum near lambda = {0}")]
    ContourHitsSpectrum(Complex64),

    #[error("spectrum intersects the sector at lambda = {0}")]
    SpectrumIntersectsSector(Complex64),

    #[error("function certificate incompatible with contour: {0}")]
    CertificateMismatch(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("point {0} lies in the interior of the sector")]
    OutsideDomain(Complex64),

    #[error("eigensolver failed: {0}")]
    EigenSolver(String),

    #[error("truncation depth R = {0} too deep: e^(2R) exceeds 1e12")]
    TruncationTooDeep(f64),

    #[error("scaling factor {0} is not a whole number of grid steps")]
    IncompatibleScaling(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("condition (E4) failed: {0}")]
    EllipticityFailed(String),

    #[error("time step too large: {0}")]
    StepTooLarge(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
