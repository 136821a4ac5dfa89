use thiserror::Error;

/// Errors raised by the inference routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("index {index} out of range for {len} observations")]
    Index { index: usize, len: usize },

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("negative Hessian is singular or indefinite (min eigenvalue {min_eigenvalue:.3e})")]
    SingularHessian { min_eigenvalue: f64 },

    #[error("singular matrix: {0}")]
    SingularMatrix(String),

    #[error("degenerate importance weights: effective sample size {ess:.1} below {threshold}")]
    DegenerateWeights { ess: f64, threshold: f64 },

    #[error("insufficient sample: {got} draws, need at least {need}")]
    InsufficientSample { got: usize, need: usize },

    #[error("no valid starting point: {0}")]
    NoStartingPoint(String),

    #[error("ill-posed loss: {0}")]
    IllPosedLoss(String),

    #[error("did not converge: {0}")]
    NonConvergence(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("quadrature failed: {0}")]
    Quadrature(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: u64,
        column: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
