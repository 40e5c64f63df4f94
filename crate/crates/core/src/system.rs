//! Every network of one deployment, plus the car- and cloud-side pipelines.

use std::path::Path;

use crate::codec::{Bitstream, Codec, FactorizedModel, GaussianConditional, HyperWeights, Latents};
use crate::error::{CodecError, ModelError, TensorError, WeightsError};
use crate::init::ParamInit;
use crate::model::{
    feature_decode, feature_encode, stub_encode, DecoderConfig, FeatureDecoderWeights,
    FeatureEncoderWeights, SegMap, SegModel, StubEncoderWeights, Variant,
};
use crate::params::{impl_params, Params};
use crate::tensor::Tensor;
use crate::weights::WeightContainer;

/// Learnable entropy-model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyParams {
    /// Per-channel Laplacian scale of the hyper-latent model.
    pub hyper_scales: Tensor,
}

impl_params!(EntropyParams { hyper_scales });

#[derive(Debug, Clone, PartialEq)]
pub struct SystemWeights {
    pub config: DecoderConfig,
    pub stub: StubEncoderWeights,
    pub fe: FeatureEncoderWeights,
    pub hyper: HyperWeights,
    pub entropy: EntropyParams,
    pub fd: FeatureDecoderWeights,
    pub decoder: SegModel,
}

impl_params!(SystemWeights {
    stub,
    fe,
    hyper,
    entropy,
    fd,
    decoder
});

const CONFIG_KEYS: [&str; 7] = [
    "config.variant",
    "config.dim",
    "config.downsample",
    "config.features",
    "config.groups",
    "config.classes",
    "config.stride",
];

fn config_values(c: &DecoderConfig) -> [usize; 7] {
    let variant = match c.variant {
        Variant::Baseline => 0,
        Variant::Joint => 1,
    };
    [
        variant,
        c.dim,
        c.downsample,
        c.features,
        c.groups,
        c.classes,
        c.stride,
    ]
}

impl SystemWeights {
    /// Default Laplacian scale of the hyper-latent model.
    pub const HYPER_SCALE: f32 = 1.0;

    pub fn init(config: DecoderConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let root = ParamInit::new(seed);
        let (f, g) = (config.features, config.groups);
        Ok(Self {
            config,
            stub: StubEncoderWeights::init(&root.scope("stub"), f)?,
            fe: FeatureEncoderWeights::init(&root.scope("fe"), f, g)?,
            hyper: HyperWeights::init(&root.scope("hyper"), f)?,
            entropy: EntropyParams {
                hyper_scales: Tensor::full(&[f], Self::HYPER_SCALE),
            },
            fd: FeatureDecoderWeights::init(&root.scope("fd"), f, g)?,
            decoder: SegModel::init(config, &root.scope("decoder"))?,
        })
    }

    pub fn to_container(&self) -> WeightContainer {
        let mut c = WeightContainer::new();
        for (k, v) in CONFIG_KEYS.iter().zip(config_values(&self.config)) {
            c.insert(*k, Tensor::scalar(v as f32))
                .expect("unique config keys");
        }
        for (name, t) in self.named_tensors("") {
            c.insert(name, t).expect("parameter names are unique");
        }
        c
    }

    pub fn from_container(c: &WeightContainer) -> Result<Self, WeightsError> {
        let mut v = [0usize; 7];
        for (slot, key) in v.iter_mut().zip(CONFIG_KEYS) {
            let x = c.scalar(key)?;
            if !(x >= 0.0 && x.fract() == 0.0 && x < 1e9) {
                return Err(ModelError::Config(format!("{key} = {x} is not a count")).into());
            }
            *slot = x as usize;
        }
        let variant = match v[0] {
            0 => Variant::Baseline,
            1 => Variant::Joint,
            other => return Err(ModelError::Config(format!("unknown variant code {other}")).into()),
        };
        let config = DecoderConfig {
            variant,
            dim: v[1],
            downsample: v[2],
            features: v[3],
            groups: v[4],
            classes: v[5],
            stride: v[6],
        };
        let mut w = Self::init(config, 0)?;
        let mut seen = 0usize;
        let mut err = None;
        w.visit_mut("", &mut |name, slot| {
            if err.is_some() {
                return;
            }
            match c.get(name) {
                None => err = Some(WeightsError::Missing(name.to_string())),
                Some(t) if t.shape() != slot.shape() => {
                    err = Some(WeightsError::Shape {
                        name: name.to_string(),
                        expected: format!("{:?}", slot.shape()),
                        actual: t.shape().to_vec(),
                    })
                }
                Some(t) => {
                    *slot = t.clone();
                    seen += 1;
                }
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        if seen + CONFIG_KEYS.len() != c.len() {
            let known: Vec<String> = w.named_tensors("").into_iter().map(|(n, _)| n).collect();
            let extra = c
                .iter()
                .map(|(n, _)| n)
                .find(|n| !n.starts_with("config.") && !known.iter().any(|k| k == n))
                .unwrap_or("?");
            return Err(WeightsError::Unexpected(extra.to_string()));
        }
        w.check_statistics()?;
        Ok(w)
    }

    fn check_statistics(&self) -> Result<(), WeightsError> {
        let mut bad = None;
        self.visit("", &mut |name, t| {
            if bad.is_none()
                && name.ends_with(".bn.var")
                && t.data().iter().any(|&v| v.is_nan() || v < 0.0)
            {
                bad = Some(name.to_string());
            }
        });
        match bad {
            Some(name) => {
                Err(TensorError::InvalidSpec(format!("{name}: negative variance")).into())
            }
            None => Ok(()),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), WeightsError> {
        self.to_container().write_file(path)
    }

    pub fn load(path: &Path) -> Result<Self, WeightsError> {
        Self::from_container(&WeightContainer::read_file(path)?)
    }
}

/// Ready-to-run deployment: weights plus the entropy models derived from them.
#[derive(Debug, Clone)]
pub struct System {
    pub weights: SystemWeights,
    pub codec: Codec,
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("image {height}x{width}: both sides must be positive multiples of 32")]
    ImageSize { height: usize, width: usize },
    #[error("image must have 3 channels, got shape {0:?}")]
    ImageChannels(Vec<usize>),
}

impl From<TensorError> for PipelineError {
    fn from(e: TensorError) -> Self {
        PipelineError::Model(e.into())
    }
}

impl System {
    pub fn new(weights: SystemWeights) -> Result<Self, WeightsError> {
        let model_id = weights.to_container().model_id();
        Self::with_model_id(weights, model_id)
    }

    fn with_model_id(weights: SystemWeights, model_id: u32) -> Result<Self, WeightsError> {
        let factorized = FactorizedModel::new(
            weights.entropy.hyper_scales.data().to_vec(),
            GaussianConditional::TAIL_MASS,
        )?;
        let codec = Codec {
            hyper: weights.hyper.clone(),
            factorized,
            gaussian: GaussianConditional::default(),
            model_id,
        };
        Ok(Self { weights, codec })
    }

    pub fn from_seed(config: DecoderConfig, seed: u64) -> Result<Self, WeightsError> {
        Self::new(SystemWeights::init(config, seed)?)
    }

    pub fn load(path: &Path) -> Result<Self, WeightsError> {
        let container = WeightContainer::read_file(path)?;
        let weights = SystemWeights::from_container(&container)?;
        Self::with_model_id(weights, container.model_id())
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.weights.config
    }

    pub fn model_id(&self) -> u32 {
        self.codec.model_id
    }

    pub fn check_image(x: &Tensor) -> Result<(usize, usize), PipelineError> {
        let (c, h, w) = x
            .chw()
            .map_err(|_| PipelineError::ImageChannels(x.shape().to_vec()))?;
        if c != StubEncoderWeights::IMAGE_CHANNELS {
            return Err(PipelineError::ImageChannels(x.shape().to_vec()));
        }
        if h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0 {
            return Err(PipelineError::ImageSize {
                height: h,
                width: w,
            });
        }
        Ok((h, w))
    }

    /// Bottleneck features `z` of an image.
    pub fn backbone(&self, x: &Tensor) -> Result<Tensor, PipelineError> {
        Self::check_image(x)?;
        Ok(stub_encode(x, &self.weights.stub)?)
    }

    /// Latent `r = FE(z)`.
    pub fn latent(&self, x: &Tensor) -> Result<Tensor, PipelineError> {
        Ok(feature_encode(&self.backbone(x)?, &self.weights.fe)?)
    }

    /// Car side of the distributed topologies: `x -> z -> r -> b`.
    pub fn car_encode(&self, x: &Tensor) -> Result<(Bitstream, Latents), PipelineError> {
        Ok(self.codec.encode_with_latents(&self.latent(x)?)?)
    }

    /// Decoder input built from a reconstructed latent: `r_hat` itself for
    /// the joint decoder, `FD(r_hat)` for the baseline.
    pub fn decoder_input(&self, r_hat: &Tensor) -> Result<Tensor, PipelineError> {
        Ok(match self.config().variant {
            Variant::Joint => r_hat.clone(),
            Variant::Baseline => feature_decode(r_hat, &self.weights.fd)?,
        })
    }

    /// Cloud side of the distributed topologies.
    pub fn cloud_decode(&self, b: &Bitstream) -> Result<(Tensor, SegMap), PipelineError> {
        let latents = self.codec.decode(b)?;
        self.segment_latent(&latents.r_hat.to_tensor())
    }

    pub fn segment_latent(&self, r_hat: &Tensor) -> Result<(Tensor, SegMap), PipelineError> {
        Ok(self.weights.decoder.segment(&self.decoder_input(r_hat)?)?)
    }

    /// In-car topologies: the baseline decodes `z` directly, the joint
    /// decoder decodes the unquantized latent `r`.
    pub fn in_car(&self, x: &Tensor) -> Result<(Tensor, SegMap), PipelineError> {
        let input = match self.config().variant {
            Variant::Baseline => self.backbone(x)?,
            Variant::Joint => self.latent(x)?,
        };
        Ok(self.weights.decoder.segment(&input)?)
    }

    /// Single-process reference for the distributed topologies.
    pub fn distributed_local(&self, x: &Tensor) -> Result<(Bitstream, SegMap), PipelineError> {
        let (b, _) = self.car_encode(x)?;
        let wire = Bitstream::from_bytes(&b.to_bytes()).map_err(CodecError::from)?;
        let (_, map) = self.cloud_decode(&wire)?;
        Ok((b, map))
    }
}
