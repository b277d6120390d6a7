//! Standard layers with explicit forward and backward passes.

mod activation;
mod batchnorm;
mod conv;
pub(crate) mod gemm;
mod linear;
mod loss;
mod pool;

pub use activation::{relu, relu_backward};
pub use batchnorm::{BatchNorm, BnCache, Mode, BN_EPS, BN_MOMENTUM};
pub use conv::Conv2d;
pub use linear::Linear;
pub use loss::softmax_cross_entropy;
pub use pool::{global_avg_pool, global_avg_pool_backward, MaxPool, MaxPoolIndices};

use crate::error::Result;
use crate::tensor::{Rng, Tensor4};

/// How the optimizer treats a parameter tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    /// Batch-norm scale or shift.
    Norm,
}

/// A learnable tensor and its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Tensor4,
    pub grad: Tensor4,
    pub kind: ParamKind,
}

impl Param {
    pub fn new(value: Tensor4, kind: ParamKind) -> Self {
        let grad = Tensor4::zeros(value.shape()).expect("shape already validated");
        Self { value, grad, kind }
    }

    /// He-normal weights, std = sqrt(2 / fan_in).
    pub fn he_normal(
        shape: (usize, usize, usize, usize),
        fan_in: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let std = (2.0 / fan_in as f64).sqrt();
        Ok(Self::new(
            Tensor4::randn(shape, 0.0, std, rng)?,
            ParamKind::Weight,
        ))
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}
