use crate::error::{Error, Result};
use crate::nn::gemm::{gemm_nn, gemm_nt, gemm_tn};
use crate::nn::{Param, ParamKind};
use crate::tensor::{Rng, Shape4, Tensor4};

/// Bias-free 2-D cross-correlation with square kernels.
///
/// Weights are laid out `(c_out, c_in, k, k)`. Every convolution in these
/// networks feeds a batch norm (directly or through a cross-layer mix), so
/// there is no bias term.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub weight: Param,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    pub fn from_weights(weights: Tensor4, stride: usize, padding: usize) -> Result<Self> {
        let s = weights.shape();
        if s.h != s.w {
            return Err(Error::InvalidArgument(format!(
                "conv kernel must be square, got {}x{}",
                s.h, s.w
            )));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument(
                "conv stride must be positive".into(),
            ));
        }
        Ok(Self {
            weight: Param::new(weights, ParamKind::Weight),
            stride,
            padding,
        })
    }

    /// He-normal initialised convolution: std = sqrt(2 / (c_in·k·k)).
    pub fn he(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let w = Param::he_normal((c_out, c_in, kernel, kernel), c_in * kernel * kernel, rng)?;
        Self::from_weights(w.value, stride, padding)
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape().c
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape().n
    }

    pub fn kernel(&self) -> usize {
        self.weight.value.shape().h
    }

    pub fn output_shape(&self, input: Shape4) -> Result<Shape4> {
        if input.c != self.in_channels() {
            return Err(Error::InvalidArgument(format!(
                "conv expects {} input channels, got {}",
                self.in_channels(),
                input.c
            )));
        }
        let k = self.kernel();
        let out = |len: usize| -> Result<usize> {
            let padded = len + 2 * self.padding;
            if padded < k {
                return Err(Error::InvalidArgument(format!(
                    "conv output would be empty: input {len}, padding {}, kernel {k}",
                    self.padding
                )));
            }
            Ok((padded - k) / self.stride + 1)
        };
        Ok(Shape4::new(
            input.n,
            self.out_channels(),
            out(input.h)?,
            out(input.w)?,
        ))
    }

    fn is_pointwise(&self) -> bool {
        self.kernel() == 1 && self.stride == 1 && self.padding == 0
    }

    pub fn forward(&self, x: &Tensor4) -> Result<Tensor4> {
        let xs = x.shape();
        let ys = self.output_shape(xs)?;
        let mut y = Tensor4::zeros(ys)?;
        let rows = xs.c * self.kernel() * self.kernel();
        let cols = ys.plane();
        let mut col = vec![0.0; if self.is_pointwise() { 0 } else { rows * cols }];
        for n in 0..xs.n {
            let patches = if self.is_pointwise() {
                x.item(n)
            } else {
                self.im2col(x.item(n), xs, ys, &mut col);
                &col
            };
            gemm_nn(
                ys.c,
                cols,
                rows,
                self.weight.value.data(),
                patches,
                y.item_mut(n),
            );
        }
        Ok(y)
    }

    /// Returns `dL/dx` and accumulates `dL/dW` into `self.weight.grad`.
    pub fn backward(&mut self, x: &Tensor4, dy: &Tensor4) -> Result<Tensor4> {
        let xs = x.shape();
        let ys = self.output_shape(xs)?;
        dy.expect_shape(ys)?;
        let rows = xs.c * self.kernel() * self.kernel();
        let cols = ys.plane();
        let mut dx = Tensor4::zeros(xs)?;
        let pointwise = self.is_pointwise();
        let mut col = vec![0.0; if pointwise { 0 } else { rows * cols }];
        let mut dcol = vec![0.0; if pointwise { 0 } else { rows * cols }];
        for n in 0..xs.n {
            let dy_n = dy.item(n);
            if pointwise {
                gemm_nt(
                    ys.c,
                    rows,
                    cols,
                    dy_n,
                    x.item(n),
                    self.weight.grad.data_mut(),
                );
                gemm_tn(
                    rows,
                    cols,
                    ys.c,
                    self.weight.value.data(),
                    dy_n,
                    dx.item_mut(n),
                );
            } else {
                self.im2col(x.item(n), xs, ys, &mut col);
                gemm_nt(ys.c, rows, cols, dy_n, &col, self.weight.grad.data_mut());
                dcol.iter_mut().for_each(|v| *v = 0.0);
                gemm_tn(rows, cols, ys.c, self.weight.value.data(), dy_n, &mut dcol);
                self.col2im(&dcol, xs, ys, dx.item_mut(n));
            }
        }
        Ok(dx)
    }

    /// Unfolds one `(c, h, w)` image into a `(c·k·k) × (h_out·w_out)` patch matrix.
    fn im2col(&self, img: &[f64], xs: Shape4, ys: Shape4, col: &mut [f64]) {
        let k = self.kernel();
        let cols = ys.plane();
        let (pad, stride) = (self.padding as isize, self.stride as isize);
        for c in 0..xs.c {
            let plane = &img[c * xs.plane()..(c + 1) * xs.plane()];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let dst = &mut col[row * cols..(row + 1) * cols];
                    for oy in 0..ys.h {
                        let iy = oy as isize * stride + ky as isize - pad;
                        let out_row = &mut dst[oy * ys.w..(oy + 1) * ys.w];
                        if iy < 0 || iy >= xs.h as isize {
                            out_row.iter_mut().for_each(|v| *v = 0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * xs.w..(iy as usize + 1) * xs.w];
                        for (ox, v) in out_row.iter_mut().enumerate() {
                            let ix = ox as isize * stride + kx as isize - pad;
                            *v = if ix < 0 || ix >= xs.w as isize {
                                0.0
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Self::im2col`]: scatters patch gradients back onto the image.
    fn col2im(&self, col: &[f64], xs: Shape4, ys: Shape4, img: &mut [f64]) {
        let k = self.kernel();
        let cols = ys.plane();
        let (pad, stride) = (self.padding as isize, self.stride as isize);
        for c in 0..xs.c {
            let plane = &mut img[c * xs.plane()..(c + 1) * xs.plane()];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let src = &col[row * cols..(row + 1) * cols];
                    for oy in 0..ys.h {
                        let iy = oy as isize * stride + ky as isize - pad;
                        if iy < 0 || iy >= xs.h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * xs.w..(iy as usize + 1) * xs.w];
                        for ox in 0..ys.w {
                            let ix = ox as isize * stride + kx as isize - pad;
                            if ix >= 0 && ix < xs.w as isize {
                                dst[ix as usize] += src[oy * ys.w + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_difference, max_rel_error, weighted_sum};

    /// Direct six-loop cross-correlation.
    fn conv_oracle(x: &Tensor4, w: &Tensor4, stride: usize, pad: usize) -> Vec<f64> {
        let (xs, ws) = (x.shape(), w.shape());
        let ho = (xs.h + 2 * pad - ws.h) / stride + 1;
        let wo = (xs.w + 2 * pad - ws.w) / stride + 1;
        let mut out = vec![0.0; xs.n * ws.n * ho * wo];
        for n in 0..xs.n {
            for co in 0..ws.n {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = 0.0;
                        for ci in 0..xs.c {
                            for ky in 0..ws.h {
                                for kx in 0..ws.w {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy >= 0
                                        && ix >= 0
                                        && (iy as usize) < xs.h
                                        && (ix as usize) < xs.w
                                    {
                                        acc += w.at(co, ci, ky, kx)
                                            * x.at(n, ci, iy as usize, ix as usize);
                                    }
                                }
                            }
                        }
                        out[((n * ws.n + co) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn identity_pointwise_kernel_passes_input_through() {
        let mut rng = Rng::new(1);
        let x = Tensor4::randn((2, 3, 4, 4), 0.0, 1.0, &mut rng).unwrap();
        let mut w = Tensor4::zeros((3, 3, 1, 1)).unwrap();
        for c in 0..3 {
            w.set(c, c, 0, 0, 1.0);
        }
        let mut conv = Conv2d::from_weights(w, 1, 0).unwrap();
        assert_eq!(conv.forward(&x).unwrap(), x);
        let dy = Tensor4::randn(x.shape(), 0.0, 1.0, &mut rng).unwrap();
        assert_eq!(conv.backward(&x, &dy).unwrap(), dy);
    }

    #[test]
    fn zero_kernel_gives_zero_output() {
        let mut rng = Rng::new(2);
        let x = Tensor4::randn((1, 2, 5, 5), 0.0, 1.0, &mut rng).unwrap();
        let conv = Conv2d::from_weights(Tensor4::zeros((4, 2, 3, 3)).unwrap(), 1, 1).unwrap();
        assert!(conv.forward(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_direct_loop() {
        let mut rng = Rng::new(3);
        for &(stride, pad, k) in &[(1, 1, 3), (2, 1, 3), (1, 0, 1), (2, 0, 1), (2, 3, 7)] {
            let x = Tensor4::randn((1, 2, 9, 9), 0.0, 1.0, &mut rng).unwrap();
            let w = Tensor4::randn((3, 2, k, k), 0.0, 1.0, &mut rng).unwrap();
            let conv = Conv2d::from_weights(w.clone(), stride, pad).unwrap();
            let got = conv.forward(&x).unwrap();
            let want = conv_oracle(&x, &w, stride, pad);
            for (g, e) in got.data().iter().zip(&want) {
                assert!((g - e).abs() <= 1e-12 * e.abs().max(1.0));
            }
        }
        // the spec case: (1,2,4,4) input, (3,2,3,3) kernel, stride 1, pad 1
        let x = Tensor4::randn((1, 2, 4, 4), 0.0, 1.0, &mut rng).unwrap();
        let w = Tensor4::randn((3, 2, 3, 3), 0.0, 1.0, &mut rng).unwrap();
        let got = Conv2d::from_weights(w.clone(), 1, 1)
            .unwrap()
            .forward(&x)
            .unwrap();
        assert_eq!(got.shape(), Shape4::new(1, 3, 4, 4));
        for (g, e) in got.data().iter().zip(conv_oracle(&x, &w, 1, 1)) {
            assert!((g - e).abs() <= 1e-12 * e.abs().max(1.0));
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        let conv = Conv2d::from_weights(Tensor4::zeros((2, 3, 3, 3)).unwrap(), 1, 0).unwrap();
        assert!(conv
            .forward(&Tensor4::zeros((1, 2, 4, 4)).unwrap())
            .is_err());
        assert!(conv
            .forward(&Tensor4::zeros((1, 3, 2, 2)).unwrap())
            .is_err());
        let mut conv = conv;
        let x = Tensor4::zeros((1, 3, 4, 4)).unwrap();
        assert!(conv
            .backward(&x, &Tensor4::zeros((1, 2, 4, 4)).unwrap())
            .is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = Rng::new(4);
        let x = Tensor4::randn((2, 2, 5, 5), 0.0, 1.0, &mut rng).unwrap();
        let mut conv = Conv2d::he(2, 3, 3, 2, 1, &mut rng).unwrap();
        let dy = Tensor4::zeros(conv.output_shape(x.shape()).unwrap()).unwrap();
        let dx = conv.backward(&x, &dy).unwrap();
        assert!(dx.data().iter().all(|&v| v == 0.0));
        assert!(conv.weight.grad.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_matches_finite_differences() {
        for &(stride, pad, k) in &[(1, 1, 3), (2, 1, 3), (1, 0, 1), (2, 0, 1)] {
            let mut rng = Rng::new(10 + k as u64 + stride as u64);
            let x = Tensor4::randn((2, 2, 5, 5), 0.0, 1.0, &mut rng).unwrap();
            let conv = Conv2d::he(2, 3, k, stride, pad, &mut rng).unwrap();
            let r =
                Tensor4::randn(conv.output_shape(x.shape()).unwrap(), 0.0, 1.0, &mut rng).unwrap();

            let mut analytic = conv.clone();
            let dx = analytic.backward(&x, &r).unwrap();

            let num_dx = central_difference(
                &mut x.clone(),
                |t| t.data_mut(),
                |t| weighted_sum(&conv.forward(t).unwrap(), &r),
            );
            assert!(max_rel_error(dx.data(), &num_dx) < 1e-6);

            let num_dw = central_difference(
                &mut conv.clone(),
                |c| c.weight.value.data_mut(),
                |c| weighted_sum(&c.forward(&x).unwrap(), &r),
            );
            assert!(max_rel_error(analytic.weight.grad.data(), &num_dw) < 1e-6);
        }
    }

    mod props {
        use super::*;
        use crate::tensor::Rng;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]
            #[test]
            fn linear_in_input_and_weights(seed in any::<u64>(), a in -3.0f64..3.0) {
                let mut rng = Rng::new(seed);
                let x1 = Tensor4::randn((1, 2, 4, 4), 0.0, 1.0, &mut rng).unwrap();
                let x2 = Tensor4::randn((1, 2, 4, 4), 0.0, 1.0, &mut rng).unwrap();
                let w1 = Tensor4::randn((3, 2, 3, 3), 0.0, 1.0, &mut rng).unwrap();
                let w2 = Tensor4::randn((3, 2, 3, 3), 0.0, 1.0, &mut rng).unwrap();
                let c1 = Conv2d::from_weights(w1.clone(), 1, 1).unwrap();

                let lhs = c1.forward(&x1.scale(a).add(&x2).unwrap()).unwrap();
                let rhs = c1.forward(&x1).unwrap().scale(a).add(&c1.forward(&x2).unwrap()).unwrap();
                for (l, r) in lhs.data().iter().zip(rhs.data()) {
                    prop_assert!((l - r).abs() < 1e-10);
                }

                let cw = Conv2d::from_weights(w1.scale(a).add(&w2).unwrap(), 1, 1).unwrap();
                let c2 = Conv2d::from_weights(w2, 1, 1).unwrap();
                let lhs = cw.forward(&x1).unwrap();
                let rhs = c1.forward(&x1).unwrap().scale(a).add(&c2.forward(&x1).unwrap()).unwrap();
                for (l, r) in lhs.data().iter().zip(rhs.data()) {
                    prop_assert!((l - r).abs() < 1e-10);
                }
            }
        }
    }
}
