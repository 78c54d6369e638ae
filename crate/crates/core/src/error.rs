use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// The state vanished, e.g. filters with no overlap with the joint spectrum.
    #[error("zero state: {0}")]
    ZeroState(String),

    #[error("decomposition failed: {0}")]
    DecompositionFailed(String),

    /// Propagation did not conserve the norm within the guard tolerance.
    #[error("accuracy guard tripped: norm drift {drift:.3e} with {n_steps} steps")]
    Accuracy { drift: f64, n_steps: usize },

    #[error("matrix is not unitary (defect {0:.3e})")]
    NonUnitary(f64),

    #[error("no dip detected: minimum {min:.4e} is not below 0.9 x baseline {baseline:.4e}")]
    NoDip { min: f64, baseline: f64 },

    #[error("fit failed: {0}")]
    FitFailed(String),
}

pub type Result<T> = std::result::Result<T, Error>;
