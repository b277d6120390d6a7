//! Cross-layer depthwise convolution networks: tensors, layers, model zoo,
//! cost analysis, training and CIFAR data handling. Everything runs in
//! `f64` on the CPU and is deterministic for a given seed.

pub mod analysis;
pub mod cldc;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{Model, ModelSpec};
pub use tensor::{Rng, Shape4, Tensor4};
