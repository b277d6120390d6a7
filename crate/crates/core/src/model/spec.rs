use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Shape4;

/// First layer(s) applied to the image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stem {
    /// 3×3 conv, stride 1, pad 1.
    Cifar,
    /// 7×7 conv, stride 2, pad 3, then 3×3/2/1 max pool.
    Imagenet,
}

/// How a layer combines the feature maps of its block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Connectivity {
    /// Learnable cross-layer depthwise convolution.
    Cldc,
    /// Unweighted sum (the residual baseline).
    Residual,
}

/// Block transition convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransitionKind {
    /// Cross-layer mix of the finished block, then a strided 3×3 conv.
    Cldc3x3,
    /// Summed block, then a strided 1×1 conv.
    Shortcut1x1,
    /// Summed block, then a strided 3×3 conv.
    Shortcut3x3,
}

impl TransitionKind {
    pub fn kernel(self) -> usize {
        match self {
            TransitionKind::Shortcut1x1 => 1,
            TransitionKind::Cldc3x3 | TransitionKind::Shortcut3x3 => 3,
        }
    }

    pub fn padding(self) -> usize {
        self.kernel() / 2
    }
}

/// Weight rows allocated for the cross-layer mix feeding composite layer ℓ
/// of a block with L layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CldcSpan {
    /// L + 1 rows for every layer; slots of layers not yet computed are
    /// zero-filled.
    Block,
    /// Exactly ℓ rows: `h₀` plus the ℓ − 1 preceding composite outputs.
    Causal,
}

/// Declarative architecture description.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub stem: Stem,
    /// Bottleneck width B per block; the block width is 2·B.
    pub base_widths: Vec<usize>,
    pub layer_counts: Vec<usize>,
    pub num_classes: usize,
    pub connectivity: Connectivity,
    pub transition: TransitionKind,
    #[serde(default = "default_span")]
    pub cldc_span: CldcSpan,
}

fn default_span() -> CldcSpan {
    CldcSpan::Block
}

pub const ZOO_NAMES: &[&str] = &[
    "delugenet-146",
    "delugenet-218",
    "wide-delugenet-146",
    "delugenet-92",
    "delugenet-104",
    "delugenet-122",
    "resnetbase-146-1x1",
    "resnetbase-146-3x3",
    "resnetbase-218-1x1",
    "resnetbase-218-3x3",
    "resnetbase-wide146-1x1",
    "resnetbase-wide146-3x3",
    "tiny",
];

const CIFAR_NARROW: [usize; 3] = [32, 64, 128];
const CIFAR_WIDE: [usize; 3] = [56, 112, 224];
const IMAGENET: [usize; 4] = [64, 128, 256, 512];

impl ModelSpec {
    /// A DelugeNet with a CIFAR stem and the given base widths and layer counts.
    pub fn custom(
        name: &str,
        base_widths: Vec<usize>,
        layer_counts: Vec<usize>,
        num_classes: usize,
    ) -> Self {
        Self {
            name: name.to_string(),
            stem: Stem::Cifar,
            base_widths,
            layer_counts,
            num_classes,
            connectivity: Connectivity::Cldc,
            transition: TransitionKind::Cldc3x3,
            cldc_span: CldcSpan::Block,
        }
    }

    pub fn zoo(name: &str, num_classes: usize) -> Result<Self> {
        let deluge = |widths: &[usize], counts: &[usize], stem| {
            let mut s = Self::custom(name, widths.to_vec(), counts.to_vec(), num_classes);
            s.stem = stem;
            s
        };
        let baseline = |widths: &[usize], counts: &[usize], transition| {
            let mut s = Self::custom(name, widths.to_vec(), counts.to_vec(), num_classes);
            s.connectivity = Connectivity::Residual;
            s.transition = transition;
            s
        };
        use TransitionKind::{Shortcut1x1 as S1, Shortcut3x3 as S3};
        let spec = match name {
            "delugenet-146" => deluge(&CIFAR_NARROW, &[8, 16, 24], Stem::Cifar),
            "delugenet-218" => deluge(&CIFAR_NARROW, &[12, 24, 36], Stem::Cifar),
            "wide-delugenet-146" => deluge(&CIFAR_WIDE, &[8, 16, 24], Stem::Cifar),
            "delugenet-92" => deluge(&IMAGENET, &[7, 7, 8, 8], Stem::Imagenet),
            "delugenet-104" => deluge(&IMAGENET, &[7, 8, 9, 10], Stem::Imagenet),
            "delugenet-122" => deluge(&IMAGENET, &[7, 9, 11, 13], Stem::Imagenet),
            "resnetbase-146-1x1" => baseline(&CIFAR_NARROW, &[8, 16, 24], S1),
            "resnetbase-146-3x3" => baseline(&CIFAR_NARROW, &[8, 16, 24], S3),
            "resnetbase-218-1x1" => baseline(&CIFAR_NARROW, &[12, 24, 36], S1),
            "resnetbase-218-3x3" => baseline(&CIFAR_NARROW, &[12, 24, 36], S3),
            "resnetbase-wide146-1x1" => baseline(&CIFAR_WIDE, &[8, 16, 24], S1),
            "resnetbase-wide146-3x3" => baseline(&CIFAR_WIDE, &[8, 16, 24], S3),
            "tiny" => deluge(&[8, 16, 32], &[2, 2, 2], Stem::Cifar),
            _ => {
                return Err(Error::UnknownModel {
                    name: name.to_string(),
                    valid: ZOO_NAMES.join(", "),
                })
            }
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Parses a TOML architecture description.
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model spec serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidSpec(msg));
        if self.base_widths.is_empty() {
            return fail("at least one block is required".into());
        }
        if self.base_widths.len() != self.layer_counts.len() {
            return fail(format!(
                "{} base widths but {} layer counts",
                self.base_widths.len(),
                self.layer_counts.len()
            ));
        }
        if self.base_widths.contains(&0) {
            return fail("base widths must be positive".into());
        }
        if self.layer_counts.contains(&0) {
            return fail("every block needs at least one composite layer".into());
        }
        if self.num_classes == 0 {
            return fail("num_classes must be positive".into());
        }
        if self.connectivity == Connectivity::Residual && self.transition == TransitionKind::Cldc3x3
        {
            return fail("a cldc3x3 transition needs cldc connectivity".into());
        }
        Ok(())
    }

    pub fn blocks(&self) -> usize {
        self.base_widths.len()
    }

    /// Block width W = 2·B of block `k`.
    pub fn width(&self, block: usize) -> usize {
        2 * self.base_widths[block]
    }

    pub fn stem_width(&self) -> usize {
        self.width(0)
    }

    /// Weight rows of the mix feeding layer `layer` (1-based) of `block`.
    pub fn cldc_rows(&self, block: usize, layer: usize) -> usize {
        match self.cldc_span {
            CldcSpan::Block => self.layer_counts[block] + 1,
            CldcSpan::Causal => layer,
        }
    }

    pub fn default_input(&self) -> Shape4 {
        match self.stem {
            Stem::Cifar => Shape4::new(1, 3, 32, 32),
            Stem::Imagenet => Shape4::new(1, 3, 224, 224),
        }
    }

    /// Spatial size entering each block for a given input size.
    pub fn block_input_sizes(&self, h: usize, w: usize) -> Result<Vec<(usize, usize)>> {
        let conv = |len: usize, k: usize, s: usize, p: usize| -> Option<usize> {
            (len + 2 * p).checked_sub(k).map(|v| v / s + 1)
        };
        let (mut h, mut w) = match self.stem {
            Stem::Cifar => (h, w),
            Stem::Imagenet => {
                let stem = |l| conv(l, 7, 2, 3).and_then(|l| conv(l, 3, 2, 1));
                match (stem(h), stem(w)) {
                    (Some(a), Some(b)) => (a, b),
                    _ => {
                        return Err(Error::InvalidArgument(format!(
                            "input {h}x{w} too small for the stem"
                        )))
                    }
                }
            }
        };
        let mut sizes = Vec::with_capacity(self.blocks());
        for k in 0..self.blocks() {
            if h == 0 || w == 0 {
                return Err(Error::InvalidArgument(format!(
                    "input too small: block {} would be empty",
                    k + 1
                )));
            }
            sizes.push((h, w));
            let (kk, p) = (self.transition.kernel(), self.transition.padding());
            h = conv(h, kk, 2, p).unwrap_or(0);
            w = conv(w, kk, 2, p).unwrap_or(0);
        }
        Ok(sizes)
    }
}
