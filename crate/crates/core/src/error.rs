use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("query ({x}, {y}) lies outside the {width}x{height} sample grid")]
    OutOfGrid {
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },
    #[error("malformed file {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("integration diverged at step {step} (t = {time} s)")]
    Diverged { step: usize, time: f64 },
    #[error("training diverged at epoch {epoch}, step {step}: {what}")]
    TrainingDiverged {
        epoch: usize,
        step: usize,
        what: String,
    },
    #[error(transparent)]
    Nn(#[from] erecon_nn::NnError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, CoreError>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CoreError {
    let path = path.into();
    move |source| CoreError::Io { path, source }
}
