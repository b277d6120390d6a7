use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::Shape4;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape {0:?}: every dimension must be at least 1 and the element count must fit in memory")]
    InvalidShape([usize; 4]),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: Shape4, actual: Shape4 },

    #[error("data length {len} does not match shape {shape}")]
    DataLength { shape: Shape4, len: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{op}: no cached forward state; run a train-mode forward first")]
    MissingCache { op: &'static str },

    #[error("unknown model `{name}`; valid models: {valid}")]
    UnknownModel { name: String, valid: String },

    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("missing data file {0}")]
    MissingFile(PathBuf),

    #[error("{path}: size {size} is not a multiple of the {record}-byte record length")]
    RecordLength {
        path: PathBuf,
        size: usize,
        record: usize,
    },

    #[error("channel {channel} has zero standard deviation")]
    ZeroStd { channel: usize },

    #[error("checkpoint: bad magic bytes")]
    BadMagic,

    #[error("checkpoint: unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("checkpoint: file is truncated")]
    Truncated,

    #[error("checkpoint: {0}")]
    SpecMismatch(String),

    #[error("checkpoint: corrupt file: {0}")]
    Corrupt(String),

    #[error("epoch {epoch} outside schedule of {total} epochs")]
    EpochOutOfRange { epoch: usize, total: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
