//! Tensor engine: convolution, pooling, activations and momentum SGD.

pub mod activation;
pub mod conv;
pub mod sgd;

pub use activation::{activate, activate_backward, mish, Activation};
pub use conv::{conv2d, conv2d_backward, maxpool2d, maxpool2d_backward, maxpool2d_with_indices};
pub use sgd::{sgd_step, Param, TrainConfig};
