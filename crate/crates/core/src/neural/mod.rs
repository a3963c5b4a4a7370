//! Small reverse-mode autodiff engine: a tape of matrix operations, a fused
//! LSTM layer, feedforward layers, Adam and gradient-norm clipping.

pub mod checkpoint;
pub mod fnn;
pub mod gradcheck;
pub mod lstm;
pub mod optim;
pub mod tape;
pub mod tensor;

use thiserror::Error;

pub use checkpoint::Checkpoint;
pub use fnn::{Activation, FnnLayer, FnnParams};
pub use lstm::{lstm_step, LstmCellParams};
pub use optim::{clip_grad_norm, Adam, AdamConfig};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

/// Version of the operation set, recorded in checkpoints.
pub const OPSET_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("backward needs a 1x1 loss, got {0:?}")]
    NonScalarLoss([usize; 2]),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
