//! Cross-layer depthwise convolution.
//!
//! Given `S` source feature maps of identical shape `(n, M, h, w)`, the
//! output channel `c` is a learnable weighted sum of channel `c` of every
//! source plus a per-channel bias:
//!
//! ```text
//! out[n, c, y, x] = Σ_i weight[i, c] · source_i[n, c, y, x] + bias[c]
//! ```
//!
//! Weights are shared across spatial positions and never mix channels, so
//! the layer costs `S·M + M` parameters. Inside a block, source 0 is the
//! block input `h₀` and source `i` the output of composite layer `i`.
//! With all weights 1 and bias 0 the layer reduces to the plain residual
//! sum of its sources.
//!
//! A layer may be allocated with more weight rows than it has live
//! sources ([`Cldc::forward_live`]); the missing trailing sources are
//! treated as zero-filled maps, which contribute nothing to the output and
//! receive zero weight gradient.

use crate::error::{Error, Result};
use crate::nn::{Param, ParamKind};
use crate::tensor::{Shape4, Tensor4};

/// Parameters of one cross-layer depthwise convolution: weights
/// `(S, M, 1, 1)` and bias `(1, M, 1, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Cldc {
    pub weight: Param,
    pub bias: Param,
}

/// `S·M` weights plus one bias per channel.
pub fn cldc_param_count(sources: usize, channels: usize) -> usize {
    sources * channels + channels
}

impl Cldc {
    /// Weights 1, bias 0: the layer starts out as a residual sum.
    pub fn new(sources: usize, channels: usize) -> Result<Self> {
        if sources == 0 || channels == 0 {
            return Err(Error::InvalidArgument(
                "cross-layer convolution needs at least one source and one channel".into(),
            ));
        }
        Self::from_parts(
            Tensor4::new((sources, channels, 1, 1), 1.0)?,
            Tensor4::zeros((1, channels, 1, 1))?,
        )
    }

    pub fn from_parts(weight: Tensor4, bias: Tensor4) -> Result<Self> {
        let ws = weight.shape();
        if ws.h != 1 || ws.w != 1 || bias.shape() != Shape4::new(1, ws.c, 1, 1) {
            return Err(Error::InvalidArgument(format!(
                "cross-layer weight {} and bias {} are inconsistent",
                ws,
                bias.shape()
            )));
        }
        Ok(Self {
            weight: Param::new(weight, ParamKind::Weight),
            bias: Param::new(bias, ParamKind::Bias),
        })
    }

    /// Number of weight rows (source slots).
    pub fn sources(&self) -> usize {
        self.weight.value.shape().n
    }

    pub fn channels(&self) -> usize {
        self.weight.value.shape().c
    }

    pub fn param_count(&self) -> usize {
        cldc_param_count(self.sources(), self.channels())
    }

    /// Weight of source `i` for channel `c`.
    pub fn weight_at(&self, i: usize, c: usize) -> f64 {
        self.weight.value.data()[i * self.channels() + c]
    }

    /// Evaluates the layer on exactly one source per weight row.
    pub fn forward(&self, sources: &[&Tensor4]) -> Result<Tensor4> {
        if sources.len() != self.sources() {
            return Err(Error::InvalidArgument(format!(
                "cross-layer convolution has {} weight rows but got {} sources",
                self.sources(),
                sources.len()
            )));
        }
        self.forward_live(sources)
    }

    /// Evaluates the layer on the first `live.len()` source slots; the
    /// remaining slots are zero-filled.
    pub fn forward_live(&self, live: &[&Tensor4]) -> Result<Tensor4> {
        let shape = self.check_sources(live)?;
        let plane = shape.plane();
        let m = self.channels();
        let w = self.weight.value.data();
        let b = self.bias.value.data();
        let mut out = Tensor4::zeros(shape)?;
        for n in 0..shape.n {
            for c in 0..m {
                let start = (n * m + c) * plane;
                let dst = &mut out.data_mut()[start..start + plane];
                let w0 = w[c];
                for (d, &s) in dst.iter_mut().zip(&live[0].data()[start..start + plane]) {
                    *d = w0 * s;
                }
                for (i, src) in live.iter().enumerate().skip(1) {
                    let wi = w[i * m + c];
                    for (d, &s) in dst.iter_mut().zip(&src.data()[start..start + plane]) {
                        *d += wi * s;
                    }
                }
                let bc = b[c];
                dst.iter_mut().for_each(|d| *d += bc);
            }
        }
        Ok(out)
    }

    /// Gradients for every source; accumulates weight and bias gradients.
    pub fn backward(&mut self, sources: &[&Tensor4], dy: &Tensor4) -> Result<Vec<Tensor4>> {
        if sources.len() != self.sources() {
            return Err(Error::InvalidArgument(format!(
                "cross-layer convolution has {} weight rows but got {} sources",
                self.sources(),
                sources.len()
            )));
        }
        self.backward_live(sources, dy)
    }

    /// Backward of [`Self::forward_live`]. Returns one gradient per live
    /// source; rows of zero-filled slots get no weight gradient.
    pub fn backward_live(&mut self, live: &[&Tensor4], dy: &Tensor4) -> Result<Vec<Tensor4>> {
        let shape = self.check_sources(live)?;
        dy.expect_shape(shape)?;
        let plane = shape.plane();
        let m = self.channels();
        let mut grads = vec![Tensor4::zeros(shape)?; live.len()];
        for n in 0..shape.n {
            for c in 0..m {
                let start = (n * m + c) * plane;
                let g = &dy.data()[start..start + plane];
                self.bias.grad.data_mut()[c] += g.iter().sum::<f64>();
                for (i, src) in live.iter().enumerate() {
                    let wi = self.weight.value.data()[i * m + c];
                    let s = &src.data()[start..start + plane];
                    self.weight.grad.data_mut()[i * m + c] +=
                        g.iter().zip(s).map(|(a, b)| a * b).sum::<f64>();
                    for (d, &gv) in grads[i].data_mut()[start..start + plane].iter_mut().zip(g) {
                        *d = wi * gv;
                    }
                }
            }
        }
        Ok(grads)
    }

    fn check_sources(&self, live: &[&Tensor4]) -> Result<Shape4> {
        let first = live.first().ok_or_else(|| {
            Error::InvalidArgument("cross-layer convolution needs at least one source".into())
        })?;
        if live.len() > self.sources() {
            return Err(Error::InvalidArgument(format!(
                "{} sources exceed the {} weight rows",
                live.len(),
                self.sources()
            )));
        }
        let shape = first.shape();
        if shape.c != self.channels() {
            return Err(Error::InvalidArgument(format!(
                "cross-layer convolution has {} channels, source has {}",
                self.channels(),
                shape.c
            )));
        }
        for s in &live[1..] {
            s.expect_shape(shape)?;
        }
        Ok(shape)
    }
}

/// Plain elementwise sum of sources in ascending order: the fixed-weight
/// (residual) counterpart of [`Cldc`].
pub fn sum_sources(sources: &[&Tensor4]) -> Result<Tensor4> {
    let (first, rest) = sources
        .split_first()
        .ok_or_else(|| Error::InvalidArgument("cannot sum an empty source list".into()))?;
    let mut out = (*first).clone();
    for s in rest {
        out.add_assign(s)?;
    }
    Ok(out)
}
