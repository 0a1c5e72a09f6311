//! Testbed for task-dependent MRI restoration: unrolled reconstruction with
//! explicit data consistency, k-space center-crop super-resolution and
//! spatially heteroscedastic denoising, all driven by a minimal gated CNN
//! block or its large-small dynamic-convolution variant.
//!
//! Numeric code is generic over [`Scalar`] (`f32` for training, `f64` for
//! gradient checks); the aliases below name the two instantiations.

pub mod autodiff;
pub mod error;
pub mod io;
pub mod kernels;
pub mod metrics;
pub mod mri;
pub mod nn;
pub mod reference;
pub mod report;
pub mod scalar;
pub mod selftest;
pub mod sim;
pub mod tensor;
pub mod train;
pub mod unrolled;

pub use error::{Error, Result};
pub use scalar::{DType, Scalar};
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Graph32 = autodiff::Graph<f32>;
pub type Graph64 = autodiff::Graph<f64>;
