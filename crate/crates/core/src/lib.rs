//! Compression-aware keypoint segmentation.
//!
//! The crate covers the full life cycle of the FCN-Pose network: a small
//! dense tensor engine with forward and backward passes, the network
//! definition and its binary model format, a synthetic articulated-arm
//! dataset, training, L1 filter pruning, FP16 quantization, keypoint
//! extraction by expansion clustering, and PCK / latency evaluation.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); models are
//! trained and stored as `f32`, see the aliases below.

pub mod compress;
pub mod dataset;
pub mod error;
mod fpenv;
pub mod layers;
pub mod metrics;
pub mod network;
pub mod postprocess;
pub mod scalar;
pub mod tensor;
pub mod trainer;

pub use error::{Error, ParseError, Result};
pub use scalar::Scalar;
pub use tensor::{Shape, Tensor};

/// Single-precision tensor, the compute type of every model.
pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Model32 = network::Model<f32>;
pub type Model64 = network::Model<f64>;
pub type ConvKernel32 = layers::ConvKernel<f32>;
