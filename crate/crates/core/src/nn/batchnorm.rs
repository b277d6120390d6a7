use crate::error::{Error, Result};
use crate::nn::{Param, ParamKind};
use crate::tensor::{Shape4, Tensor4};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Batch statistics kept from a train-mode forward for the backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct BnCache {
    pub xhat: Tensor4,
    pub inv_std: Vec<f64>,
}

/// Per-channel batch normalization.
///
/// Train mode normalizes with the biased batch variance and folds the
/// unbiased variance into `running_var`; eval mode uses the running stats.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Tensor4,
    pub running_var: Tensor4,
    pub eps: f64,
    pub momentum: f64,
    cache: Option<BnCache>,
}

impl BatchNorm {
    /// gamma = 1, beta = 0, running stats (0, 1).
    pub fn new(channels: usize) -> Result<Self> {
        let shape = (1, channels, 1, 1);
        Ok(Self {
            gamma: Param::new(Tensor4::new(shape, 1.0)?, ParamKind::Norm),
            beta: Param::new(Tensor4::zeros(shape)?, ParamKind::Norm),
            running_mean: Tensor4::zeros(shape)?,
            running_var: Tensor4::new(shape, 1.0)?,
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
            cache: None,
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.shape().c
    }

    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    fn check_input(&self, s: Shape4) -> Result<()> {
        if s.c != self.channels() {
            return Err(Error::InvalidArgument(format!(
                "batch norm has {} channels, input has {}",
                self.channels(),
                s.c
            )));
        }
        Ok(())
    }

    pub fn forward(&mut self, x: &Tensor4, mode: Mode) -> Result<Tensor4> {
        match mode {
            Mode::Eval => self.forward_eval(x),
            Mode::Train => self.forward_train(x),
        }
    }

    pub fn forward_eval(&self, x: &Tensor4) -> Result<Tensor4> {
        let s = x.shape();
        self.check_input(s)?;
        let mut y = x.clone();
        let plane = s.plane();
        for c in 0..s.c {
            let scale = self.gamma.value.data()[c] / (self.running_var.data()[c] + self.eps).sqrt();
            let mean = self.running_mean.data()[c];
            let shift = self.beta.value.data()[c];
            for n in 0..s.n {
                let start = (n * s.c + c) * plane;
                for v in &mut y.data_mut()[start..start + plane] {
                    *v = (*v - mean) * scale + shift;
                }
            }
        }
        Ok(y)
    }

    fn forward_train(&mut self, x: &Tensor4) -> Result<Tensor4> {
        let s = x.shape();
        self.check_input(s)?;
        let count = s.n * s.plane();
        if count < 2 {
            return Err(Error::InvalidArgument(
                "train-mode batch norm needs at least two values per channel".into(),
            ));
        }
        let plane = s.plane();
        let mut xhat = Tensor4::zeros(s)?;
        let mut y = Tensor4::zeros(s)?;
        let mut inv_std = vec![0.0; s.c];
        for c in 0..s.c {
            let mut sum = 0.0;
            for n in 0..s.n {
                let start = (n * s.c + c) * plane;
                sum += x.data()[start..start + plane].iter().sum::<f64>();
            }
            let mean = sum / count as f64;
            let mut sq = 0.0;
            for n in 0..s.n {
                let start = (n * s.c + c) * plane;
                sq += x.data()[start..start + plane]
                    .iter()
                    .map(|v| (v - mean) * (v - mean))
                    .sum::<f64>();
            }
            let var = sq / count as f64;
            let istd = 1.0 / (var + self.eps).sqrt();
            inv_std[c] = istd;
            let (g, b) = (self.gamma.value.data()[c], self.beta.value.data()[c]);
            for n in 0..s.n {
                let start = (n * s.c + c) * plane;
                for i in start..start + plane {
                    let xh = (x.data()[i] - mean) * istd;
                    xhat.data_mut()[i] = xh;
                    y.data_mut()[i] = g * xh + b;
                }
            }
            let m = self.momentum;
            let unbiased = sq / (count - 1) as f64;
            let rm = &mut self.running_mean.data_mut()[c];
            *rm = (1.0 - m) * *rm + m * mean;
            let rv = &mut self.running_var.data_mut()[c];
            *rv = (1.0 - m) * *rv + m * unbiased;
        }
        self.cache = Some(BnCache { xhat, inv_std });
        Ok(y)
    }

    /// Consumes the train-mode cache; returns `dL/dx` and accumulates into
    /// the gamma/beta gradients.
    pub fn backward(&mut self, dy: &Tensor4) -> Result<Tensor4> {
        let cache = self.cache.take().ok_or(Error::MissingCache {
            op: "batchnorm_backward",
        })?;
        let s = cache.xhat.shape();
        dy.expect_shape(s)?;
        let plane = s.plane();
        let count = (s.n * plane) as f64;
        let mut dx = Tensor4::zeros(s)?;
        for c in 0..s.c {
            let mut sum_dy = 0.0;
            let mut sum_dy_xhat = 0.0;
            for n in 0..s.n {
                let start = (n * s.c + c) * plane;
                for i in start..start + plane {
                    sum_dy += dy.data()[i];
                    sum_dy_xhat += dy.data()[i] * cache.xhat.data()[i];
                }
            }
            self.gamma.grad.data_mut()[c] += sum_dy_xhat;
            self.beta.grad.data_mut()[c] += sum_dy;
            let k = self.gamma.value.data()[c] * cache.inv_std[c] / count;
            for n in 0..s.n {
                let start = (n * s.c + c) * plane;
                for i in start..start + plane {
                    dx.data_mut()[i] =
                        k * (count * dy.data()[i] - sum_dy - cache.xhat.data()[i] * sum_dy_xhat);
                }
            }
        }
        Ok(dx)
    }
}
