use super::quant::QuantTensor;
use crate::error::TensorError;
use crate::init::ParamInit;
use crate::model::ConvBn;
use crate::params::impl_params;
use crate::tensor::Tensor;

/// Hyperprior analysis stack `HE`: `Conv(3x3, F, 2) -> BN+ReLU -> Conv(1x1, F) -> BN+ReLU`.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperEncoderWeights {
    pub down: ConvBn,
    pub project: ConvBn,
}

/// Hyperprior synthesis stack `HD`: `UpConv(1x1, F) -> BN+ReLU -> UpConv(3x3, F, 2) -> BN+ReLU`.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperDecoderWeights {
    pub project: ConvBn,
    pub up: ConvBn,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperWeights {
    pub encoder: HyperEncoderWeights,
    pub decoder: HyperDecoderWeights,
}

impl_params!(HyperEncoderWeights { down, project });
impl_params!(HyperDecoderWeights { project, up });
impl_params!(HyperWeights { encoder, decoder });

impl HyperWeights {
    pub fn init(init: &ParamInit, features: usize) -> Result<Self, TensorError> {
        let (e, d) = (init.scope("encoder"), init.scope("decoder"));
        let f = features;
        Ok(Self {
            encoder: HyperEncoderWeights {
                down: ConvBn::init(&e, "down", 3, f, f, 1, 2, false)?,
                project: ConvBn::init(&e, "project", 1, f, f, 1, 1, false)?,
            },
            decoder: HyperDecoderWeights {
                project: ConvBn::init(&d, "project", 1, f, f, 1, 1, true)?,
                up: ConvBn::init(&d, "up", 3, f, f, 1, 2, true)?,
            },
        })
    }

    pub fn features(&self) -> usize {
        self.encoder.down.conv.in_channels
    }

    pub fn encoder_param_count(&self) -> usize {
        self.encoder.down.param_count() + self.encoder.project.param_count()
    }

    pub fn decoder_param_count(&self) -> usize {
        self.decoder.project.param_count() + self.decoder.up.param_count()
    }

    /// Hyper-latent `h = HE(r)` on the halved grid.
    pub fn analyse(&self, r: &Tensor) -> Result<Tensor, TensorError> {
        self.encoder.project.forward(&self.encoder.down.forward(r)?)
    }

    /// Raw `HD(h_hat)` before the scale floor.
    pub fn synthesise(&self, h_hat: &Tensor) -> Result<Tensor, TensorError> {
        self.decoder
            .up
            .forward(&self.decoder.project.forward(h_hat)?)
    }
}

/// `sigma = max(HD(h_hat), sigma_min)`, on the latent grid.
pub fn hyper_sigma(
    h_hat: &QuantTensor,
    w: &HyperWeights,
    sigma_min: f64,
) -> Result<Tensor, TensorError> {
    let floor = sigma_min as f32;
    Ok(w.synthesise(&h_hat.to_tensor())?.map(|s| s.max(floor)))
}
