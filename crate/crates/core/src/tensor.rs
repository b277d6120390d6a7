//! Dense 4-D tensors in row-major `(n, c, h, w)` order and the seeded
//! generator every random draw in the crate goes through.

use std::fmt;

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Extent of a [`Tensor4`]: batch, channels, height, width.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape4 {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w }
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    /// Element count, or `None` when a dimension is zero or the product overflows.
    pub fn checked_len(&self) -> Option<usize> {
        if self.dims().contains(&0) {
            return None;
        }
        self.dims()
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
    }

    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements in one spatial plane.
    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Elements in one batch item.
    pub fn item(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn with_n(self, n: usize) -> Self {
        Self { n, ..self }
    }

    fn validate(self) -> Result<Self> {
        match self.checked_len() {
            // Leave headroom so byte sizes of the buffer also fit.
            Some(len) if len <= isize::MAX as usize / 8 => Ok(self),
            _ => Err(Error::InvalidShape(self.dims())),
        }
    }
}

impl From<(usize, usize, usize, usize)> for Shape4 {
    fn from((n, c, h, w): (usize, usize, usize, usize)) -> Self {
        Self { n, c, h, w }
    }
}

impl fmt::Display for Shape4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4 {
    shape: Shape4,
    data: Vec<f64>,
}

impl Tensor4 {
    /// Tensor of the given shape with every element set to `fill`.
    pub fn new(shape: impl Into<Shape4>, fill: f64) -> Result<Self> {
        let shape = shape.into().validate()?;
        Ok(Self {
            shape,
            data: vec![fill; shape.len()],
        })
    }

    pub fn zeros(shape: impl Into<Shape4>) -> Result<Self> {
        Self::new(shape, 0.0)
    }

    pub fn from_vec(shape: impl Into<Shape4>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into().validate()?;
        if data.len() != shape.len() {
            return Err(Error::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    /// I.i.d. normal draws. A zero `std` yields a constant tensor without
    /// consuming randomness.
    pub fn randn(shape: impl Into<Shape4>, mean: f64, std: f64, rng: &mut Rng) -> Result<Self> {
        if std < 0.0 || !std.is_finite() || !mean.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "randn needs finite mean and std >= 0, got mean {mean}, std {std}"
            )));
        }
        let mut t = Self::new(shape, mean)?;
        if std > 0.0 {
            for v in &mut t.data {
                *v = mean + std * rng.normal();
            }
        }
        Ok(t)
    }

    /// Uniform draws in `[lo, hi)`.
    pub fn rand_uniform(shape: impl Into<Shape4>, lo: f64, hi: f64, rng: &mut Rng) -> Result<Self> {
        if lo.is_nan() || hi.is_nan() || lo >= hi {
            return Err(Error::InvalidArgument(format!(
                "uniform range [{lo}, {hi}) is empty"
            )));
        }
        let mut t = Self::zeros(shape)?;
        for v in &mut t.data {
            *v = lo + (hi - lo) * rng.uniform();
        }
        Ok(t)
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// In-place access; used by the optimizer and by finite-difference probes.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape.c + c) * self.shape.h + y) * self.shape.w + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.offset(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: f64) {
        let i = self.offset(n, c, y, x);
        self.data[i] = v;
    }

    /// Contiguous `(c, h, w)` slice of batch item `n`.
    pub fn item(&self, n: usize) -> &[f64] {
        let len = self.shape.item();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [f64] {
        let len = self.shape.item();
        &mut self.data[n * len..(n + 1) * len]
    }

    /// Same elements under a new shape of equal size.
    pub fn reshape(self, shape: impl Into<Shape4>) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }

    pub fn add(&self, other: &Tensor4) -> Result<Tensor4> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor4) -> Result<Tensor4> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor4) -> Result<Tensor4> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Tensor4 {
        self.map(|v| v * s)
    }

    pub fn add_scalar(&self, s: f64) -> Tensor4 {
        self.map(|v| v + s)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor4 {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &Tensor4, f: impl Fn(f64, f64) -> f64) -> Result<Tensor4> {
        self.expect_shape(other.shape)?;
        Ok(Tensor4 {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// `self += other`, elementwise.
    pub fn add_assign(&mut self, other: &Tensor4) -> Result<()> {
        self.expect_shape(other.shape)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn expect_shape(&self, expected: Shape4) -> Result<()> {
        if self.shape != expected {
            return Err(Error::ShapeMismatch {
                expected,
                actual: self.shape,
            });
        }
        Ok(())
    }
}

/// Seeded generator: ChaCha8 (`rand_chacha`), whose output stream is
/// specified and identical across platforms. Normal draws use the
/// `rand_distr` ziggurat sampler on top of it.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream keyed by `(seed, stream)`; does not advance `self`.
    pub fn fork(&self, stream: u64) -> Rng {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(stream.wrapping_add(1));
        Rng {
            seed: self.seed,
            inner,
        }
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
