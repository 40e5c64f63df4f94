use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TensorError {
    #[error("data length {actual} does not match shape volume {expected}")]
    DataLength { expected: usize, actual: usize },
    #[error("expected rank {expected}, got rank {actual}")]
    Rank { expected: usize, actual: usize },
    #[error("{op}: {axis} mismatch (expected {expected}, got {actual})")]
    Axis {
        op: &'static str,
        axis: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("{0}: empty input")]
    Empty(&'static str),
    #[error("invalid layer spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid decoder config: {0}")]
    Config(String),
    #[error("input grid {actual:?} does not match model grid (d={dim}, k={downsample})")]
    Grid {
        dim: usize,
        downsample: usize,
        actual: Vec<usize>,
    },
}

/// Failures while parsing or validating a serialized bitstream.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("bad magic {found:?} (expected {expected:?})")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported version {found} (expected {expected})")]
    Version { expected: u16, found: u16 },
    #[error("truncated input while reading {field}")]
    Truncated { field: &'static str },
    #[error("field {field}: declared {declared}, actual {actual}")]
    Length {
        field: &'static str,
        declared: usize,
        actual: usize,
    },
    #[error("field {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("payload {field} overran its end while decoding")]
    Overrun { field: &'static str },
    #[error("model id {found:#010x} does not match loaded weights {expected:#010x}")]
    ModelId { expected: u32, found: u32 },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("non-finite value at index {index} of {what}")]
    NonFinite { what: &'static str, index: usize },
    #[error("latent grid {0:?} must be rank 3 with even spatial dims")]
    Grid(Vec<usize>),
    #[error("entropy model has {model} channels, latent has {latent}")]
    Channels { model: usize, latent: usize },
    #[error("invalid entropy model: {0}")]
    Model(String),
}

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("duplicate entry name {0:?}")]
    Duplicate(String),
    #[error("missing entry {0:?}")]
    Missing(String),
    #[error("unexpected entry {0:?}")]
    Unexpected(String),
    #[error("entry {name:?} has shape {actual:?}, expected {expected}")]
    Shape {
        name: String,
        expected: String,
        actual: Vec<usize>,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("maps differ in size: {pred:?} vs {gt:?}")]
    Size {
        pred: (usize, usize),
        gt: (usize, usize),
    },
    #[error("label {label} at pixel {index} outside 1..={classes}")]
    Label {
        label: u16,
        index: usize,
        classes: usize,
    },
    #[error("alpha must lie in the open interval (0, 1), got {0}")]
    Alpha(f64),
    #[error("no pixels left after masking")]
    NoPixels,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}
