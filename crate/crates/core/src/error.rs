use thiserror::Error;

pub type Result<T> = std::result::Result<T, DqmError>;

#[derive(Debug, Error)]
pub enum DqmError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("field shape does not match its grid: expected {expected} samples, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("operands live on different grids")]
    GridMismatch,

    #[error("non-finite sample at flat index {index}")]
    NonFinite { index: usize },

    #[error("wavefunction has zero norm")]
    ZeroNorm,

    #[error("negative density at flat index {index}")]
    NegativeDensity { index: usize },

    #[error("phase undefined: {fraction:.3} of the support is node-masked")]
    PhaseUndefined { fraction: f64 },

    #[error("node mask covers {fraction:.3} of the support (limit {limit})")]
    ExcessiveMask { fraction: f64, limit: f64 },

    #[error("numerical abort at step {step}: {reason}")]
    NumericalAbort { step: usize, reason: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("resolution violated: {0}")]
    Resolution(String),

    #[error("trajectory has {got} stamps, need at least {need}")]
    TooFewStamps { got: usize, need: usize },

    #[error("stamp {index} has no neighbour on both sides (trajectory has {len} stamps)")]
    BoundaryStamp { index: usize, len: usize },

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl DqmError {
    /// Short machine-readable tag used in error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            DqmError::InvalidGrid(_) => "invalid_grid",
            DqmError::ShapeMismatch { .. } => "shape_mismatch",
            DqmError::GridMismatch => "grid_mismatch",
            DqmError::NonFinite { .. } => "non_finite",
            DqmError::ZeroNorm => "zero_norm",
            DqmError::NegativeDensity { .. } => "negative_density",
            DqmError::PhaseUndefined { .. } => "phase_undefined",
            DqmError::ExcessiveMask { .. } => "excessive_mask",
            DqmError::NumericalAbort { .. } => "numerical_abort",
            DqmError::InvalidParameter(_) => "invalid_parameter",
            DqmError::Resolution(_) => "resolution",
            DqmError::TooFewStamps { .. } => "too_few_stamps",
            DqmError::BoundaryStamp { .. } => "boundary_stamp",
            DqmError::Format(_) => "format",
            DqmError::Io(_) => "io",
            DqmError::Json(_) => "json",
        }
    }
}
