use thiserror::Error;

/// Errors produced by the fusion library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("transition variance is zero at t = {t}; the conditional score is undefined")]
    SingularTime { t: f64 },

    #[error("reverse trajectory {trajectory} diverged at step {step}")]
    Diverged { trajectory: usize, step: usize },

    #[error("grid misses {mass:.3e} of reference {reference}'s mass (limit 1e-4)")]
    InsufficientGrid { reference: usize, mass: f64 },

    #[error("target samples outside reference support at indices {indices:?}")]
    UnsupportedSamples { indices: Vec<usize> },

    #[error("model parameters contain non-finite values")]
    PoisonedModel,

    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged { epoch: usize, curve: Vec<f64> },

    #[error("non-finite gradient at Frank-Wolfe iteration {iteration}")]
    NonFiniteGradient { iteration: usize },

    #[error("unsupported schema version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimMismatch { expected, actual })
    }
}
