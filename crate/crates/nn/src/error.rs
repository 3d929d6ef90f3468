use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("{layer}: shape mismatch, expected {expected}, found {found}")]
    ShapeMismatch {
        layer: String,
        expected: String,
        found: String,
    },
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite value produced in {stage} of {layer}")]
    NonFinite { layer: String, stage: &'static str },
    #[error("invalid layer spec: {0}")]
    InvalidSpec(String),
    #[error("tensor data length {len} does not match shape {shape:?}")]
    BadTensor { shape: Vec<usize>, len: usize },
    #[error("malformed weight file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;
