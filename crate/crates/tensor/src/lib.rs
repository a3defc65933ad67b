//! Dense `f64` tensors with tape-based reverse-mode differentiation.
//!
//! Every operation records a backward closure on the result when any input
//! requires a gradient; [`Tensor::backward`] walks the tape from a scalar loss.
//! The op set covers what the EEG graph model needs: 1-D convolution,
//! matmul, softmax, layer/batch norm, pooling, pointwise activations,
//! dropout, cross-entropy, plus an Adam optimizer and a finite-difference
//! gradient checker.

pub mod error;
pub mod gradcheck;
pub mod ops;
pub mod optim;
mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{check_gradients, primitive_suite, GradCheckReport, FD_STEP};
pub use ops::conv::{avg_pool1d, conv1d, conv1d_with, ConvAlgo};
pub use ops::elementwise::LOG_EPSILON;
pub use ops::norm::{batch_norm, cross_entropy, dropout, layer_norm, softmax, RunningStats};
pub use optim::{adam_step, Adam, AdamState};
pub use tensor::{is_grad_enabled, no_grad, Tensor};
