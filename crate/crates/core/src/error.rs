use thiserror::Error;

/// Errors raised by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("dense assembly refused: {dim} unknowns exceeds the cap of {cap}")]
    DenseCapExceeded { dim: usize, cap: usize },

    #[error("omega*dt = {0} outside the open interval (0, pi)")]
    OmegaDtOutOfRange(f64),

    #[error("system is definite (lambda_min(Re H) = {0} >= 0); use a direct elliptic solver")]
    DefiniteSystem(f64),

    #[error("timestep bound undefined: arcsin argument {0} outside [0, 1]")]
    ArcsinDomain(f64),

    #[error("eigenvalue estimate did not converge after {iterations} iterations (best estimate {estimate})")]
    NoConvergence { iterations: usize, estimate: f64 },

    #[error("stability conditions violated: {0}")]
    Unstable(String),

    #[error("scheme mismatch: {0}")]
    SchemeMismatch(String),

    #[error("invalid window: {0}")]
    InvalidWindow(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("coefficient table does not cover g = {g} (range [{lo}, {hi}])")]
    TableRange { g: f64, lo: f64, hi: f64 },

    #[error("invalid coefficient table: {0}")]
    InvalidTable(String),

    #[error("NaN encountered in GMRES at iteration {0}")]
    NanInIterate(usize),

    #[error("singular matrix in direct solve")]
    Singular,

    #[error("observer failed at step {step}: {message}")]
    Observer { step: usize, message: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
