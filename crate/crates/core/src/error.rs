use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("split error: {0}")]
    Split(String),
    #[error("sampler error: {0}")]
    Sampler(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch} (ce={ce_loss}, cl={cl_loss})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        ce_loss: f64,
        cl_loss: f64,
    },
    #[error("fit error: {0}")]
    Fit(String),
    #[error("calibration error: {0}")]
    Calibration(String),
    #[error("tuning error: {0}")]
    Tuning(String),
    #[error("scenario assembly error: {0}")]
    Assembly(String),
    #[error("ensemble build error: {0}")]
    Ensemble(String),
    #[error("load error: {0}")]
    Load(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("schema version mismatch: file has version {found}, this build reads version {expected}")]
    Version { found: u32, expected: u32 },
    #[error("artifact compatibility error: {0}")]
    Compatibility(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
