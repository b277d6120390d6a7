use crate::error::{Error, Result};
use crate::nn::gemm::{gemm_nn, gemm_nt, gemm_tn};
use crate::nn::{Param, ParamKind};
use crate::tensor::{Rng, Tensor4};

/// Fully connected classifier layer. Weights are `(classes, features, 1, 1)`,
/// the bias `(1, classes, 1, 1)`; inputs are flattened per batch item.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    pub fn from_parts(weight: Tensor4, bias: Tensor4) -> Result<Self> {
        let ws = weight.shape();
        if ws.h != 1 || ws.w != 1 || bias.shape().dims() != [1, ws.n, 1, 1] {
            return Err(Error::InvalidArgument(format!(
                "linear weight {} and bias {} are inconsistent",
                ws,
                bias.shape()
            )));
        }
        Ok(Self {
            weight: Param::new(weight, ParamKind::Weight),
            bias: Param::new(bias, ParamKind::Bias),
        })
    }

    /// He-normal weights, zero bias.
    pub fn he(features: usize, classes: usize, rng: &mut Rng) -> Result<Self> {
        let w = Param::he_normal((classes, features, 1, 1), features, rng)?;
        Self::from_parts(w.value, Tensor4::zeros((1, classes, 1, 1))?)
    }

    pub fn features(&self) -> usize {
        self.weight.value.shape().c
    }

    pub fn classes(&self) -> usize {
        self.weight.value.shape().n
    }

    fn check(&self, x: &Tensor4) -> Result<()> {
        if x.shape().item() != self.features() {
            return Err(Error::InvalidArgument(format!(
                "linear expects {} features per item, got {}",
                self.features(),
                x.shape().item()
            )));
        }
        Ok(())
    }

    /// `(n, ·)` → `(n, classes, 1, 1)`: y = W x + b per item.
    pub fn forward(&self, x: &Tensor4) -> Result<Tensor4> {
        self.check(x)?;
        let n = x.shape().n;
        let (k, f) = (self.classes(), self.features());
        let mut y = Tensor4::zeros((n, k, 1, 1))?;
        for chunk in y.data_mut().chunks_mut(k) {
            chunk.copy_from_slice(self.bias.value.data());
        }
        // y[n×k] += x[n×f] · W[k×f]ᵀ
        gemm_nt(n, k, f, x.data(), self.weight.value.data(), y.data_mut());
        Ok(y)
    }

    pub fn backward(&mut self, x: &Tensor4, dy: &Tensor4) -> Result<Tensor4> {
        self.check(x)?;
        let n = x.shape().n;
        let (k, f) = (self.classes(), self.features());
        dy.expect_shape((n, k, 1, 1).into())?;
        // dW[k×f] += dyᵀ[k×n] · x[n×f]
        gemm_tn(k, f, n, dy.data(), x.data(), self.weight.grad.data_mut());
        for chunk in dy.data().chunks(k) {
            for (g, &d) in self.bias.grad.data_mut().iter_mut().zip(chunk) {
                *g += d;
            }
        }
        // dx[n×f] = dy[n×k] · W[k×f]
        let mut dx = Tensor4::zeros(x.shape())?;
        gemm_nn(n, f, k, dy.data(), self.weight.value.data(), dx.data_mut());
        Ok(dx)
    }
}
