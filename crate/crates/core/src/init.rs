//! Seeded weight initialisation.
//!
//! Every parameter tensor draws from its own ChaCha8 stream, selected by a
//! 64-bit FNV-1a hash of the parameter's dotted name. Adding or reordering
//! layers therefore never perturbs the values of unrelated layers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::TensorError;
use crate::tensor::{BatchNormSpec, ConvSpec, Tensor};

pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone)]
pub struct ParamInit {
    seed: u64,
    prefix: String,
}

impl ParamInit {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            prefix: String::new(),
        }
    }

    /// Child initialiser for a named sub-module.
    pub fn scope(&self, name: &str) -> Self {
        Self {
            seed: self.seed,
            prefix: self.path(name),
        }
    }

    fn path(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }

    fn stream(&self, name: &str) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(fnv1a64(self.path(name).as_bytes()));
        rng
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform(&self, name: &str, shape: &[usize], bound: f32) -> Tensor {
        let mut rng = self.stream(name);
        Tensor::from_fn(shape, |_| rng.gen_range(-bound..=bound))
    }

    #[allow(clippy::too_many_arguments)]
    pub fn conv(
        &self,
        name: &str,
        kernel: usize,
        in_channels: usize,
        out_channels: usize,
        groups: usize,
        stride: usize,
        transposed: bool,
    ) -> Result<ConvSpec, TensorError> {
        let mut spec = ConvSpec::zeros(
            kernel,
            in_channels,
            out_channels,
            groups,
            stride,
            transposed,
        )?;
        let bound = 1.0 / (spec.fan_in() as f32).sqrt();
        let scope = self.scope(name);
        spec.weight = scope.uniform("weight", &spec.weight_shape(), bound);
        spec.bias = Some(scope.uniform("bias", &[out_channels], bound));
        Ok(spec)
    }

    pub fn batchnorm(&self, channels: usize) -> BatchNormSpec {
        BatchNormSpec::identity(channels)
    }
}
