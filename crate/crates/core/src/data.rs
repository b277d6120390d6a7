//! CIFAR binary ingestion, augmentation, channel normalization and
//! synthetic class-blob datasets.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::{Rng, Shape4, Tensor4};

const SIDE: usize = 32;
const PIXELS: usize = 3 * SIDE * SIDE;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Cifar10,
    Cifar100,
}

impl Variant {
    pub fn classes(self) -> usize {
        match self {
            Variant::Cifar10 => 10,
            Variant::Cifar100 => 100,
        }
    }

    fn label_bytes(self) -> usize {
        match self {
            Variant::Cifar10 => 1,
            Variant::Cifar100 => 2,
        }
    }

    pub fn record_len(self) -> usize {
        self.label_bytes() + PIXELS
    }

    fn files(self, split: Split) -> Vec<&'static str> {
        match (self, split) {
            (Variant::Cifar10, Split::Train) => vec![
                "data_batch_1.bin",
                "data_batch_2.bin",
                "data_batch_3.bin",
                "data_batch_4.bin",
                "data_batch_5.bin",
            ],
            (Variant::Cifar10, Split::Test) => vec!["test_batch.bin"],
            (Variant::Cifar100, Split::Train) => vec!["train.bin"],
            (Variant::Cifar100, Split::Test) => vec!["test.bin"],
        }
    }

    fn archive_dir(self) -> &'static str {
        match self {
            Variant::Cifar10 => "cifar-10-batches-bin",
            Variant::Cifar100 => "cifar-100-binary",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Images `(n, 3, h, w)` with one label per image.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Tensor4,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(images: Tensor4, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if labels.len() != images.shape().n {
            return Err(Error::InvalidArgument(format!(
                "{} labels for {} images",
                labels.len(),
                images.shape().n
            )));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        Ok(Self {
            images,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Gathers the given items into a batch.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor4, Vec<usize>)> {
        let shape = self.images.shape();
        let item = shape.item();
        let mut data = Vec::with_capacity(indices.len() * item);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::InvalidArgument(format!(
                    "index {i} out of range for {} items",
                    self.len()
                )));
            }
            data.extend_from_slice(self.images.item(i));
            labels.push(self.labels[i]);
        }
        Ok((
            Tensor4::from_vec(shape.with_n(indices.len()), data)?,
            labels,
        ))
    }
}

/// Locates the split files either directly in `dir` or in the archive's
/// standard subdirectory.
fn resolve(dir: &Path, variant: Variant, split: Split) -> Result<Vec<PathBuf>> {
    let names = variant.files(split);
    for base in [dir.to_path_buf(), dir.join(variant.archive_dir())] {
        let paths: Vec<PathBuf> = names.iter().map(|n| base.join(n)).collect();
        if paths.iter().all(|p| p.is_file()) {
            return Ok(paths);
        }
    }
    let missing = names
        .iter()
        .map(|n| dir.join(n))
        .find(|p| !p.is_file())
        .unwrap_or_else(|| dir.join(names[0]));
    Err(Error::MissingFile(missing))
}

/// Parses one binary file; pixels are scaled to [0, 1].
pub fn parse_cifar(bytes: &[u8], variant: Variant, path: &Path) -> Result<Dataset> {
    let record = variant.record_len();
    if !bytes.len().is_multiple_of(record) {
        return Err(Error::RecordLength {
            path: path.to_path_buf(),
            size: bytes.len(),
            record,
        });
    }
    let n = bytes.len() / record;
    let mut data = Vec::with_capacity(n * PIXELS);
    let mut labels = Vec::with_capacity(n);
    for rec in bytes.chunks_exact(record) {
        // CIFAR-100 stores the coarse label first; only the fine one is kept
        let label = rec[variant.label_bytes() - 1] as usize;
        if label >= variant.classes() {
            return Err(Error::LabelOutOfRange {
                label,
                classes: variant.classes(),
            });
        }
        labels.push(label);
        data.extend(
            rec[variant.label_bytes()..]
                .iter()
                .map(|&b| b as f64 / 255.0),
        );
    }
    if n == 0 {
        return Err(Error::InvalidArgument(format!(
            "{} holds no records",
            path.display()
        )));
    }
    Dataset::new(
        Tensor4::from_vec((n, 3, SIDE, SIDE), data)?,
        labels,
        variant.classes(),
    )
}

pub fn load_cifar(dir: &Path, variant: Variant, split: Split) -> Result<Dataset> {
    let mut parts = Vec::new();
    for path in resolve(dir, variant, split)? {
        let bytes = std::fs::read(&path)?;
        parts.push(parse_cifar(&bytes, variant, &path)?);
    }
    concat(parts)
}

fn concat(parts: Vec<Dataset>) -> Result<Dataset> {
    let classes = parts[0].classes;
    let shape = parts[0].images.shape();
    let n: usize = parts.iter().map(Dataset::len).sum();
    let mut data = Vec::with_capacity(n * shape.item());
    let mut labels = Vec::with_capacity(n);
    for p in parts {
        labels.extend(p.labels);
        data.extend(p.images.into_vec());
    }
    Dataset::new(Tensor4::from_vec(shape.with_n(n), data)?, labels, classes)
}

/// Serializes 32×32 images in the binary layout. Pixels are rounded to
/// the nearest byte; the coarse CIFAR-100 label byte is written as 0.
pub fn encode_cifar(ds: &Dataset, variant: Variant) -> Result<Vec<u8>> {
    let shape = ds.images.shape();
    if (shape.c, shape.h, shape.w) != (3, SIDE, SIDE) {
        return Err(Error::ShapeMismatch {
            expected: Shape4::new(shape.n, 3, SIDE, SIDE),
            actual: shape,
        });
    }
    if let Some(&label) = ds.labels.iter().find(|&&l| l >= variant.classes()) {
        return Err(Error::LabelOutOfRange {
            label,
            classes: variant.classes(),
        });
    }
    let mut out = Vec::with_capacity(ds.len() * variant.record_len());
    for (i, &label) in ds.labels.iter().enumerate() {
        if variant == Variant::Cifar100 {
            out.push(0);
        }
        out.push(label as u8);
        out.extend(
            ds.images
                .item(i)
                .iter()
                .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
        );
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

/// Per-channel mean and population standard deviation.
pub fn compute_stats(ds: &Dataset) -> Result<ChannelStats> {
    let s = ds.images.shape();
    if s.c != 3 {
        return Err(Error::InvalidArgument(format!(
            "expected 3 channels, got {}",
            s.c
        )));
    }
    let mut stats = ChannelStats {
        mean: [0.0; 3],
        std: [0.0; 3],
    };
    let count = (s.n * s.plane()) as f64;
    for c in 0..3 {
        let plane = |n: usize| &ds.images.item(n)[c * s.plane()..(c + 1) * s.plane()];
        let mean = (0..s.n).map(|n| plane(n).iter().sum::<f64>()).sum::<f64>() / count;
        let var = (0..s.n)
            .map(|n| plane(n).iter().map(|v| (v - mean).powi(2)).sum::<f64>())
            .sum::<f64>()
            / count;
        if var <= 0.0 {
            return Err(Error::ZeroStd { channel: c });
        }
        stats.mean[c] = mean;
        stats.std[c] = var.sqrt();
    }
    Ok(stats)
}

pub fn normalize(ds: &Dataset, stats: &ChannelStats) -> Result<Dataset> {
    if let Some(c) = stats.std.iter().position(|&s| s <= 0.0) {
        return Err(Error::ZeroStd { channel: c });
    }
    Dataset::new(
        normalize_images(&ds.images, stats)?,
        ds.labels.clone(),
        ds.classes,
    )
}

/// Standardizes a 3-channel batch with the given statistics.
pub fn normalize_images(x: &Tensor4, stats: &ChannelStats) -> Result<Tensor4> {
    let s = x.shape();
    if s.c != 3 {
        return Err(Error::InvalidArgument(format!(
            "expected 3 channels, got {}",
            s.c
        )));
    }
    let mut out = x.clone();
    for n in 0..s.n {
        for (c, plane) in out.item_mut(n).chunks_exact_mut(s.plane()).enumerate() {
            for v in plane {
                *v = (*v - stats.mean[c]) / stats.std[c];
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    /// Zero padding on each side before cropping back to the input size.
    pub pad: usize,
    pub hflip_prob: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            pad: 4,
            hflip_prob: 0.5,
        }
    }
}

/// Zero-pads by `pad`, crops at `(dy, dx)` in padded coordinates back to
/// the original size, and optionally mirrors horizontally. Works on every
/// item of `x` with the same offsets.
pub fn augment_with(x: &Tensor4, pad: usize, dy: usize, dx: usize, flip: bool) -> Result<Tensor4> {
    if dy > 2 * pad || dx > 2 * pad {
        return Err(Error::InvalidArgument(format!(
            "crop offset ({dy}, {dx}) outside 0..={}",
            2 * pad
        )));
    }
    let s = x.shape();
    let mut out = Tensor4::zeros(s)?;
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..s.h {
                let Some(sy) = (y + dy).checked_sub(pad).filter(|&v| v < s.h) else {
                    continue;
                };
                for ox in 0..s.w {
                    let Some(sx) = (ox + dx).checked_sub(pad).filter(|&v| v < s.w) else {
                        continue;
                    };
                    let tx = if flip { s.w - 1 - ox } else { ox };
                    out.set(n, c, y, tx, x.at(n, c, sy, sx));
                }
            }
        }
    }
    Ok(out)
}

/// Random crop and flip of a single image `(1, c, size, size)`.
pub fn augment(
    image: &Tensor4,
    expected_size: usize,
    cfg: &AugmentConfig,
    rng: &mut Rng,
) -> Result<Tensor4> {
    let s = image.shape();
    if s.n != 1 || s.h != expected_size || s.w != expected_size {
        return Err(Error::ShapeMismatch {
            expected: Shape4::new(1, s.c, expected_size, expected_size),
            actual: s,
        });
    }
    let dy = rng.below(2 * cfg.pad + 1);
    let dx = rng.below(2 * cfg.pad + 1);
    let flip = rng.uniform() < cfg.hflip_prob;
    augment_with(image, cfg.pad, dy, dx, flip)
}

/// Augments every item of a batch independently.
pub fn augment_batch(x: &Tensor4, cfg: &AugmentConfig, rng: &mut Rng) -> Result<Tensor4> {
    let s = x.shape();
    let mut out = Vec::with_capacity(x.len());
    for n in 0..s.n {
        let item = Tensor4::from_vec(s.with_n(1), x.item(n).to_vec())?;
        out.extend(augment(&item, s.h, cfg, rng)?.into_vec());
    }
    Tensor4::from_vec(s, out)
}

/// Balanced class-conditional blobs: every class has a random mean pattern
/// in [0, 1]; items add `noise`·N(0, 1) and are clamped to [0, 1]. Item i
/// has label `i % classes`.
pub fn synthetic(
    n: usize,
    classes: usize,
    size: usize,
    noise: f64,
    rng: &mut Rng,
) -> Result<Dataset> {
    if classes == 0 || n < classes {
        return Err(Error::InvalidArgument(format!(
            "synthetic data needs n >= classes >= 1, got n={n} classes={classes}"
        )));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "noise must be >= 0, got {noise}"
        )));
    }
    let item = 3 * size * size;
    let means: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..item).map(|_| rng.uniform()).collect())
        .collect();
    let mut data = Vec::with_capacity(n * item);
    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    for &label in &labels {
        data.extend(
            means[label]
                .iter()
                .map(|m| (m + noise * rng.normal()).clamp(0.0, 1.0)),
        );
    }
    Dataset::new(
        Tensor4::from_vec((n, 3, size, size), data)?,
        labels,
        classes,
    )
}
