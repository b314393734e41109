use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("layout error: {0}")]
    Layout(String),

    #[error("layout mismatch: expected {expected} parameters, got {actual}")]
    LayoutMismatch { expected: usize, actual: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid world configuration: {0}")]
    World(String),

    #[error("lattice error: {0}")]
    Lattice(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("curvature is not positive along the search direction (pᵀAp = {curvature:e}) at CG iteration {iteration}")]
    Indefinite { iteration: usize, curvature: f64 },

    #[error("empty batch")]
    EmptyBatch,

    #[error("operator dimension {dim} exceeds the materialization limit {limit}")]
    DimensionTooLarge { dim: usize, limit: usize },

    #[error("numerical abort at update {update}: {reason}")]
    NumericalAbort { update: usize, reason: String },

    #[error("all runs failed; first failure: {0}")]
    AllRunsFailed(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
