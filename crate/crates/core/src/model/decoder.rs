use std::fmt;

use super::config::{DecoderConfig, Variant};
use super::features::ConvBn;
use super::segmap::SegMap;
use crate::error::ModelError;
use crate::init::ParamInit;
use crate::nn::{context_mining, ContextMiningWeights};
use crate::params::impl_params;
use crate::tensor::{conv2d, upsample_bilinear, ConvSpec, Tensor};

/// Final bilinear upsampling factor of both heads.
pub const HEAD_UPSAMPLE: usize = 4;
const UP_KERNEL: usize = 5;

/// Coarse layer census of a decoding head, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    ContextMining,
    DepthwiseUpConv { kernel: usize, stride: usize },
    BatchNormRelu,
    Classifier { classes: usize },
    Upsample { factor: usize },
    Softmax,
    Argmax,
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Block::ContextMining => write!(f, "ContextMining"),
            Block::DepthwiseUpConv { kernel, stride } => {
                write!(f, "DWUpConv({kernel}x{kernel}, stride {stride})")
            }
            Block::BatchNormRelu => write!(f, "BatchNorm+ReLU"),
            Block::Classifier { classes } => write!(f, "Conv(1x1, {classes})"),
            Block::Upsample { factor } => write!(f, "Upsample({factor}x{factor})"),
            Block::Softmax => write!(f, "Softmax"),
            Block::Argmax => write!(f, "Argmax"),
        }
    }
}

/// A complete decoding head: `D` (baseline) or `JD` (joint).
#[derive(Debug, Clone, PartialEq)]
pub struct SegModel {
    config: DecoderConfig,
    pub mining: ContextMiningWeights,
    /// Grouped transposed conv stage, present only in `JD`.
    pub up: Option<ConvBn>,
    pub classifier: ConvSpec,
}

impl_params!(SegModel {
    mining,
    up,
    classifier
});

/// Seeded construction; parameters live under the `decoder.` namespace.
pub fn build_model(config: DecoderConfig, seed: u64) -> Result<SegModel, ModelError> {
    SegModel::init(config, &ParamInit::new(seed).scope("decoder"))
}

impl SegModel {
    pub fn init(config: DecoderConfig, init: &ParamInit) -> Result<Self, ModelError> {
        config.validate()?;
        let d = config.dim;
        let up = match config.variant {
            Variant::Joint => Some(ConvBn::init(
                init,
                "up",
                UP_KERNEL,
                d,
                d,
                config.groups,
                config.stride,
                true,
            )?),
            Variant::Baseline => None,
        };
        Ok(Self {
            config,
            mining: ContextMiningWeights::init(&init.scope("mining"), d, config.classes)?,
            up,
            classifier: init.conv("classifier", 1, d, config.classes, 1, 1, false)?,
        })
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.config
    }

    pub fn blocks(&self) -> Vec<Block> {
        let mut blocks = vec![Block::ContextMining];
        if let Some(up) = &self.up {
            blocks.push(Block::DepthwiseUpConv {
                kernel: up.conv.kernel,
                stride: up.conv.stride,
            });
            blocks.push(Block::BatchNormRelu);
        }
        blocks.extend([
            Block::Classifier {
                classes: self.config.classes,
            },
            Block::Upsample {
                factor: HEAD_UPSAMPLE,
            },
            Block::Softmax,
            Block::Argmax,
        ]);
        blocks
    }

    pub fn transposed_conv_count(&self) -> usize {
        self.up.iter().filter(|u| u.conv.transposed).count()
    }

    /// Learnable parameters (batchnorm running statistics excluded).
    pub fn param_count(&self) -> usize {
        self.mining.param_count()
            + self.up.as_ref().map_or(0, ConvBn::param_count)
            + self.classifier.param_count()
    }

    fn check_input(&self, f: &Tensor) -> Result<(), ModelError> {
        match f.shape() {
            [c, h, w] if *c == self.config.dim && *h > 0 && *w > 0 => Ok(()),
            other => Err(ModelError::Grid {
                dim: self.config.dim,
                downsample: self.config.downsample,
                actual: other.to_vec(),
            }),
        }
    }

    /// Class logits before normalisation, `S x H x W`.
    pub fn logits(&self, f: &Tensor) -> Result<Tensor, ModelError> {
        self.check_input(f)?;
        let mut x = context_mining(f, &self.mining)?;
        if let Some(up) = &self.up {
            x = up.forward(&x)?;
        }
        let scores = conv2d(&x, &self.classifier)?;
        Ok(upsample_bilinear(&scores, (HEAD_UPSAMPLE, HEAD_UPSAMPLE))?)
    }

    /// Per-pixel class probabilities `y` and the argmax map.
    pub fn segment(&self, f: &Tensor) -> Result<(Tensor, SegMap), ModelError> {
        let y = softmax_channels(&self.logits(f)?)?;
        let map = SegMap::argmax(&y)?;
        Ok((y, map))
    }
}

/// Softmax across the channel axis of a `C x H x W` map.
pub fn softmax_channels(x: &Tensor) -> Result<Tensor, crate::error::TensorError> {
    let (c, h, w) = x.chw()?;
    let plane = h * w;
    let src = x.data();
    let mut out = vec![0f32; src.len()];
    let mut buf = vec![0f64; c];
    for i in 0..plane {
        let max = (0..c)
            .map(|s| src[s * plane + i])
            .fold(f32::NEG_INFINITY, f32::max) as f64;
        let mut sum = 0f64;
        for (s, b) in buf.iter_mut().enumerate() {
            *b = (src[s * plane + i] as f64 - max).exp();
            sum += *b;
        }
        for (s, b) in buf.iter().enumerate() {
            out[s * plane + i] = (b / sum) as f32;
        }
    }
    Tensor::new(vec![c, h, w], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Params;

    #[test]
    fn joint_census_matches_head_order() {
        let m = build_model(DecoderConfig::joint(48, 150), 1).unwrap();
        assert_eq!(
            m.blocks(),
            vec![
                Block::ContextMining,
                Block::DepthwiseUpConv {
                    kernel: 5,
                    stride: 2
                },
                Block::BatchNormRelu,
                Block::Classifier { classes: 150 },
                Block::Upsample { factor: 4 },
                Block::Softmax,
                Block::Argmax,
            ]
        );
        assert_eq!(m.transposed_conv_count(), 1);
        assert_eq!(m.up.as_ref().unwrap().conv.groups, 48);
    }

    #[test]
    fn baseline_has_no_transposed_conv() {
        let m = build_model(DecoderConfig::baseline(19), 1).unwrap();
        assert_eq!(m.transposed_conv_count(), 0);
        assert!(!m
            .blocks()
            .iter()
            .any(|b| matches!(b, Block::DepthwiseUpConv { .. })));
    }

    #[test]
    fn seeded_build_is_reproducible() {
        let a = build_model(DecoderConfig::joint(16, 5), 9).unwrap();
        let b = build_model(DecoderConfig::joint(16, 5), 9).unwrap();
        let c = build_model(DecoderConfig::joint(16, 5), 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.stored_len() > a.param_count());
    }

    #[test]
    fn joint_shape_law() {
        let m = build_model(DecoderConfig::joint(48, 150), 3).unwrap();
        let f = Tensor::from_fn(&[48, 8, 8], |i| ((i * 37) % 11) as f32 / 11.0 - 0.5);
        let (y, map) = m.segment(&f).unwrap();
        assert_eq!(y.shape(), &[150, 64, 64]);
        assert_eq!((map.height(), map.width()), (64, 64));
    }

    #[test]
    fn grid_mismatch_is_reported() {
        let m = build_model(DecoderConfig::joint(8, 3), 3).unwrap();
        assert!(matches!(
            m.segment(&Tensor::zeros(&[4, 2, 2])),
            Err(ModelError::Grid { .. })
        ));
    }
}
