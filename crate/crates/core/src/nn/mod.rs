//! Minimal differentiable substrate: tensors, layer kernels with
//! hand-written backward passes, an LSTM cell, Adam and the checkpoint
//! container.

pub mod adam;
pub mod checkpoint;
pub mod lstm;
pub mod ops;
pub mod special;
mod tensor;

use thiserror::Error;

pub use adam::{adam_step, Adam, AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, CheckpointError};
pub use lstm::{lstm_step, lstm_step_backward, LstmCell, LstmState, LstmStepCache, LstmWeights};
pub use ops::{
    conv1d, conv1d_backward, conv1d_out_len, conv1d_transpose, conv1d_transpose_backward,
    conv1d_transpose_out_len, dense, dense_backward, Activation, ConvGeometry, Dense,
};
pub use special::{sigmoid, softplus, softplus_inv, std_normal_cdf, std_normal_pdf};
pub use tensor::{axpy, dot, Parameter, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("{op}: shape mismatch, expected {expected}, got {got}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },
    #[error("{op}: non-finite value at flat index {index}")]
    NonFinite { op: &'static str, index: usize },
}

/// Glorot-uniform initialisation.
pub(crate) fn glorot(rng: &mut crate::rng::Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| (2.0 * rng.uniform() - 1.0) * limit).collect();
    Tensor::from_parts(shape.to_vec(), data)
}
