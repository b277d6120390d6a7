use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor4};

/// Max pooling over square windows. Padded positions never win.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaxPool {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

/// Flat input offset of the winning element for every output element.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaxPoolIndices {
    input_shape: Shape4,
    argmax: Vec<usize>,
}

impl MaxPool {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Result<Self> {
        if kernel == 0 || stride == 0 || padding >= kernel {
            return Err(Error::InvalidArgument(format!(
                "invalid max pool kernel {kernel}, stride {stride}, padding {padding}"
            )));
        }
        Ok(Self {
            kernel,
            stride,
            padding,
        })
    }

    pub fn output_shape(&self, s: Shape4) -> Result<Shape4> {
        let out = |len: usize| -> Result<usize> {
            let padded = len + 2 * self.padding;
            if padded < self.kernel {
                return Err(Error::InvalidArgument(format!(
                    "max pool window {} larger than padded input {padded}",
                    self.kernel
                )));
            }
            Ok((padded - self.kernel) / self.stride + 1)
        };
        Ok(Shape4::new(s.n, s.c, out(s.h)?, out(s.w)?))
    }

    /// Ties go to the first maximum in row-major window order.
    pub fn forward(&self, x: &Tensor4) -> Result<(Tensor4, MaxPoolIndices)> {
        let s = x.shape();
        let os = self.output_shape(s)?;
        let mut y = Tensor4::zeros(os)?;
        let mut argmax = vec![0usize; os.len()];
        let mut o = 0;
        for n in 0..s.n {
            for c in 0..s.c {
                for oy in 0..os.h {
                    for ox in 0..os.w {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_idx = usize::MAX;
                        for ky in 0..self.kernel {
                            let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                            if iy < 0 || iy >= s.h as isize {
                                continue;
                            }
                            for kx in 0..self.kernel {
                                let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                                if ix < 0 || ix >= s.w as isize {
                                    continue;
                                }
                                let idx = x.offset(n, c, iy as usize, ix as usize);
                                let v = x.data()[idx];
                                if best_idx == usize::MAX || v > best {
                                    best = v;
                                    best_idx = idx;
                                }
                            }
                        }
                        y.data_mut()[o] = best;
                        argmax[o] = best_idx;
                        o += 1;
                    }
                }
            }
        }
        Ok((
            y,
            MaxPoolIndices {
                input_shape: s,
                argmax,
            },
        ))
    }

    pub fn backward(&self, indices: &MaxPoolIndices, dy: &Tensor4) -> Result<Tensor4> {
        if dy.len() != indices.argmax.len() {
            return Err(Error::InvalidArgument(format!(
                "max pool backward: {} upstream values for {} outputs",
                dy.len(),
                indices.argmax.len()
            )));
        }
        let mut dx = Tensor4::zeros(indices.input_shape)?;
        for (&idx, &g) in indices.argmax.iter().zip(dy.data()) {
            dx.data_mut()[idx] += g;
        }
        Ok(dx)
    }
}

/// Per-channel spatial mean, output `(n, c, 1, 1)`.
pub fn global_avg_pool(x: &Tensor4) -> Tensor4 {
    let s = x.shape();
    let plane = s.plane();
    let data = x
        .data()
        .chunks(plane)
        .map(|p| p.iter().sum::<f64>() / plane as f64)
        .collect();
    Tensor4::from_vec((s.n, s.c, 1, 1), data).expect("shape derived from input")
}

pub fn global_avg_pool_backward(input: Shape4, dy: &Tensor4) -> Result<Tensor4> {
    dy.expect_shape(Shape4::new(input.n, input.c, 1, 1))?;
    let plane = input.plane();
    let mut dx = Tensor4::zeros(input)?;
    for (chunk, &g) in dx.data_mut().chunks_mut(plane).zip(dy.data()) {
        chunk.iter_mut().for_each(|v| *v = g / plane as f64);
    }
    Ok(dx)
}
