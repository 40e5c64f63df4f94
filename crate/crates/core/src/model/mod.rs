//! Decoding heads, the feature encoder/decoder pair and the stub backbone.

mod config;
mod decoder;
mod features;
mod segmap;

pub use config::{DecoderConfig, Variant};
pub use decoder::{build_model, softmax_channels, Block, SegModel, HEAD_UPSAMPLE};
pub use features::{
    feature_decode, feature_encode, stub_encode, ConvBn, FeatureDecoderWeights,
    FeatureEncoderWeights, StubEncoderWeights,
};
pub use segmap::{SegMap, SEGMAP_MAGIC, SEGMAP_VERSION};
