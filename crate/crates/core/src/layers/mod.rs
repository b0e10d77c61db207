//! Forward and backward passes for every layer kind the network uses.

pub mod activation;
pub mod conv;
pub mod loss;
pub mod pool;
pub mod upsample;

pub use activation::{relu, relu_backward, sigmoid, sigmoid_backward};
pub use conv::{conv2d_backward, conv2d_forward, ConvGrads, ConvKernel, KERNEL_AREA, KERNEL_SIZE};
pub use loss::{bce_loss, bce_value, BCE_EPSILON};
pub use pool::{maxpool2, maxpool2_backward, Pooled};
pub use upsample::{upsample_nearest, upsample_nearest_backward};
