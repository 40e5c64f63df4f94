//! Feature encoder `FE`, feature decoder `FD` and the stub image encoder that
//! stands in for a pretrained backbone.

use crate::error::TensorError;
use crate::init::ParamInit;
use crate::params::impl_params;
use crate::tensor::{batchnorm_relu, conv2d, conv_transpose2d, BatchNormSpec, ConvSpec, Tensor};

/// A convolution (plain or transposed) followed by fused BatchNorm + ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBn {
    pub conv: ConvSpec,
    pub bn: BatchNormSpec,
}

impl_params!(ConvBn { conv, bn });

impl ConvBn {
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        init: &ParamInit,
        name: &str,
        kernel: usize,
        in_channels: usize,
        out_channels: usize,
        groups: usize,
        stride: usize,
        transposed: bool,
    ) -> Result<Self, TensorError> {
        Ok(Self {
            conv: init.conv(
                &format!("{name}.conv"),
                kernel,
                in_channels,
                out_channels,
                groups,
                stride,
                transposed,
            )?,
            bn: init.batchnorm(out_channels),
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        let y = if self.conv.transposed {
            conv_transpose2d(x, &self.conv)?
        } else {
            conv2d(x, &self.conv)?
        };
        batchnorm_relu(&y, &self.bn)
    }

    pub fn param_count(&self) -> usize {
        self.conv.param_count() + self.bn.param_count()
    }

    /// Zeroes weights and biases, keeping the batchnorm statistics.
    pub fn zero_weights(&mut self) {
        self.conv.weight = Tensor::zeros(self.conv.weight.shape());
        if let Some(b) = &mut self.conv.bias {
            *b = Tensor::zeros(b.shape());
        }
    }
}

/// `DWConv(3x3, F, G, 2) -> BN+ReLU -> Conv(1x1, F) -> BN+ReLU`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureEncoderWeights {
    pub down: ConvBn,
    pub project: ConvBn,
}

impl_params!(FeatureEncoderWeights { down, project });

impl FeatureEncoderWeights {
    pub fn init(init: &ParamInit, features: usize, groups: usize) -> Result<Self, TensorError> {
        Ok(Self {
            down: ConvBn::init(init, "down", 3, features, features, groups, 2, false)?,
            project: ConvBn::init(init, "project", 1, features, features, 1, 1, false)?,
        })
    }

    pub fn param_count(&self) -> usize {
        self.down.param_count() + self.project.param_count()
    }
}

/// Bottleneck features `z` (`F x H/4 x W/4`) to latent `r` (`F x H/8 x W/8`).
pub fn feature_encode(z: &Tensor, w: &FeatureEncoderWeights) -> Result<Tensor, TensorError> {
    w.project.forward(&w.down.forward(z)?)
}

/// `UpConv(1x1, F) -> BN+ReLU -> DWUpConv(3x3, F, G, 2) -> BN+ReLU`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDecoderWeights {
    pub project: ConvBn,
    pub up: ConvBn,
}

impl_params!(FeatureDecoderWeights { project, up });

impl FeatureDecoderWeights {
    pub fn init(init: &ParamInit, features: usize, groups: usize) -> Result<Self, TensorError> {
        Ok(Self {
            project: ConvBn::init(init, "project", 1, features, features, 1, 1, true)?,
            up: ConvBn::init(init, "up", 3, features, features, groups, 2, true)?,
        })
    }

    pub fn param_count(&self) -> usize {
        self.project.param_count() + self.up.param_count()
    }
}

/// Latent `r_hat` (`F x H/8 x W/8`) back to `z_hat` (`F x H/4 x W/4`).
pub fn feature_decode(r_hat: &Tensor, w: &FeatureDecoderWeights) -> Result<Tensor, TensorError> {
    w.up.forward(&w.project.forward(r_hat)?)
}

/// Three-layer strided stack `3 -> 32 -> 64 -> F` reaching the `H/4` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct StubEncoderWeights {
    pub stem: ConvBn,
    pub down: ConvBn,
    pub project: ConvBn,
}

impl_params!(StubEncoderWeights {
    stem,
    down,
    project
});

impl StubEncoderWeights {
    pub const IMAGE_CHANNELS: usize = 3;
    const WIDTHS: [usize; 2] = [32, 64];

    pub fn init(init: &ParamInit, features: usize) -> Result<Self, TensorError> {
        let [a, b] = Self::WIDTHS;
        Ok(Self {
            stem: ConvBn::init(init, "stem", 3, Self::IMAGE_CHANNELS, a, 1, 2, false)?,
            down: ConvBn::init(init, "down", 3, a, b, 1, 2, false)?,
            project: ConvBn::init(init, "project", 1, b, features, 1, 1, false)?,
        })
    }

    pub fn param_count(&self) -> usize {
        self.stem.param_count() + self.down.param_count() + self.project.param_count()
    }
}

/// Image `3 x H x W` to bottleneck features `F x H/4 x W/4`.
pub fn stub_encode(x: &Tensor, w: &StubEncoderWeights) -> Result<Tensor, TensorError> {
    w.project.forward(&w.down.forward(&w.stem.forward(x)?)?)
}
