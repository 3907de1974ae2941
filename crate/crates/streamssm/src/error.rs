use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape mismatch in {context}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        context: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("delta must be strictly positive, found {value} at flat index {index}")]
    NonPositiveDelta { value: f64, index: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("mask ratio {ratio} leaves {side} set empty for {token_count} tokens")]
    DegenerateMask {
        ratio: f64,
        side: &'static str,
        token_count: usize,
    },
    #[error("bad file format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("training diverged at step {step} (loss non-finite)")]
    Diverged {
        step: usize,
        trajectory: Vec<crate::pretrain::TrainRecord>,
    },
}

pub type Result<T> = std::result::Result<T, ModelError>;

impl ModelError {
    pub fn shape(context: &str, expected: &[usize], got: &[usize]) -> Self {
        ModelError::ShapeMismatch {
            context: context.to_string(),
            expected: expected.to_vec(),
            got: got.to_vec(),
        }
    }
}
