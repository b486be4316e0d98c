use pia_core::{ModelError, TensorError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid attack config: {0}")]
    Config(String),
    #[error("activation has {got} rows of width {width}, expected width {expected}")]
    Activation { got: usize, width: usize, expected: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("optimization diverged at iteration {iteration} (loss trace has {} entries)", trace.len())]
    Diverged { iteration: usize, trace: Vec<f64> },
}
