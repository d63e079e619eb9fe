use thiserror::Error;

/// Errors raised by the numerical routines in this crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not Hermitian (max |A - A^dagger| = {defect:e})")]
    NotHermitian { defect: f64 },

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("eigensolver did not converge within {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("Hilbert-space dimension {dim} exceeds the cap {cap}")]
    DimensionTooLarge { dim: usize, cap: usize },

    #[error("site {site} is out of range for a chain of {n} sites")]
    BadSite { site: usize, n: usize },

    #[error("eigenvalue groups are separated by {gap:e}, too close to tell apart")]
    GroupingAmbiguous { gap: f64 },

    #[error("temperature must be positive, got {0}")]
    NonpositiveTemperature(f64),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("outcome index ({group}, {degeneracy}) is out of range")]
    IndexOutOfRange { group: usize, degeneracy: usize },

    #[error("state is not diagonal in the required basis (off-diagonal weight {defect:e})")]
    BasisMismatch { defect: f64 },

    #[error("finite-difference step {0} outside (0, 0.1)")]
    StepOutOfRange(f64),

    #[error("operator is not a projector (max |P^2 - P| = {defect:e})")]
    NotProjector { defect: f64 },

    #[error("cannot restore Kraus completeness (smallest eigenvalue of sum M^dagger M = {min_eigenvalue:e})")]
    CompletenessUnreachable { min_eigenvalue: f64 },

    #[error("meter coupling combination alpha vanishes")]
    ZeroCoupling,

    #[error("meter is not calibrated: {0}")]
    UncalibratedMeter(String),

    #[error("trial count must be at least 1")]
    NoTrials,

    #[error("matrix is not unitary (max |U U^dagger - 1| = {defect:e})")]
    NotUnitary { defect: f64 },

    #[error("rotation angle {0} makes the interference solve singular")]
    SingularAngle(f64),

    #[error("state is diagonal in neither the W(t) nor the V eigenbasis")]
    UnsupportedState,

    #[error("invalid density operator: {0}")]
    InvalidState(String),
}

pub type Result<T> = std::result::Result<T, Error>;
