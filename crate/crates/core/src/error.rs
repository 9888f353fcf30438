use thiserror::Error;

/// Errors produced across the simulation library.
#[derive(Debug, Error)]
pub enum TbmError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("index {index} out of range for {len} entries")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("singular matrix ({what}), condition number {cond:e}")]
    Singular { what: String, cond: f64 },

    #[error("overloaded configuration: T*N = {tn} <= T_i*(Ka-1) = {load}")]
    Overload { tn: f64, load: f64 },

    #[error("solver diverged: {0}")]
    Divergence(String),

    #[error("problem too large: {0}")]
    TooLarge(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TbmError>;
