use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid knot vector: {0}")]
    InvalidKnots(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("quadrature error: {0}")]
    Quadrature(String),
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("matrix is not symmetric positive definite: pivot {pivot:e} at step {step}")]
    NotSpd { step: usize, pivot: f64 },
    #[error("solver residual {residual:e} exceeds tolerance")]
    Residual { residual: f64 },
    #[error("eigenvalue computation failed: {0}")]
    Eigen(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
