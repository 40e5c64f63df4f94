use std::fmt;
use std::str::FromStr;

use crate::error::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Task decoder `D` fed with reconstructed bottleneck features.
    Baseline,
    /// Joint feature and task decoder `JD` fed with the latent directly.
    Joint,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Joint => "joint",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "d" | "baseline" | "baseline-d" => Ok(Variant::Baseline),
            "jd" | "joint" | "joint-jd" => Ok(Variant::Joint),
            other => Err(ModelError::Config(format!("unknown variant {other:?}"))),
        }
    }
}

/// Architecture hyperparameters shared by the decoder, the feature
/// encoder/decoder and the hyperprior networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DecoderConfig {
    pub variant: Variant,
    /// Internal token dimension `d`.
    pub dim: usize,
    /// Spatial downsampling `k` of the decoder input relative to the image.
    pub downsample: usize,
    /// Codec channel count `F`.
    pub features: usize,
    /// Group count of the depthwise layers.
    pub groups: usize,
    pub classes: usize,
    pub stride: usize,
}

impl DecoderConfig {
    pub const BASELINE_DIM: usize = 256;
    pub const JOINT_DEFAULT_DIM: usize = 48;

    pub fn baseline(classes: usize) -> Self {
        let d = Self::BASELINE_DIM;
        Self {
            variant: Variant::Baseline,
            dim: d,
            downsample: 4,
            features: d,
            groups: d,
            classes,
            stride: 2,
        }
    }

    pub fn joint(dim: usize, classes: usize) -> Self {
        Self {
            variant: Variant::Joint,
            dim,
            downsample: 8,
            features: dim,
            groups: dim,
            classes,
            stride: 2,
        }
    }

    pub fn for_variant(variant: Variant, dim: usize, classes: usize) -> Self {
        match variant {
            Variant::Baseline => Self {
                dim,
                features: dim,
                groups: dim,
                ..Self::baseline(classes)
            },
            Variant::Joint => Self::joint(dim, classes),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::Config(msg));
        match self.variant {
            Variant::Baseline if (self.dim, self.downsample) != (Self::BASELINE_DIM, 4) => {
                return bad(format!(
                    "baseline decoder needs d=256, k=4 (got d={}, k={})",
                    self.dim, self.downsample
                ))
            }
            Variant::Joint if self.downsample != 8 => {
                return bad(format!(
                    "joint decoder needs k=8 (got k={})",
                    self.downsample
                ))
            }
            _ => {}
        }
        if self.dim == 0 {
            return bad("d must be positive".into());
        }
        if self.classes == 0 {
            return bad("at least one class is required".into());
        }
        if self.classes > u16::MAX as usize {
            return bad(format!("at most {} classes are supported", u16::MAX));
        }
        if self.features != self.dim {
            return bad(format!(
                "F={} must equal d={}: the decoder consumes codec features directly",
                self.features, self.dim
            ));
        }
        if self.groups == 0 || !self.features.is_multiple_of(self.groups) {
            return bad(format!("G={} must divide F={}", self.groups, self.features));
        }
        if self.stride != 2 {
            return bad(format!("only stride 2 is supported (got {})", self.stride));
        }
        Ok(())
    }

    /// Decoder input grid for an `h x w` image.
    pub fn grid(&self, h: usize, w: usize) -> (usize, usize) {
        (h / self.downsample, w / self.downsample)
    }

    /// Plain-text `key = value` form, one field per line.
    pub fn to_kv(&self) -> String {
        format!(
            "variant = {}\ndim = {}\ndownsample = {}\nfeatures = {}\ngroups = {}\nclasses = {}\nstride = {}\n",
            self.variant,
            self.dim,
            self.downsample,
            self.features,
            self.groups,
            self.classes,
            self.stride
        )
    }

    /// Parses [`to_kv`](Self::to_kv) output. Blank lines and `#` comments are
    /// skipped; missing fields take the variant's defaults.
    pub fn from_kv(text: &str) -> Result<Self, ModelError> {
        let mut pairs = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                ModelError::Config(format!("line {}: expected key = value", n + 1))
            })?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        let get = |key: &str| {
            pairs
                .iter()
                .rev()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
        };
        let variant: Variant = get("variant")
            .ok_or_else(|| ModelError::Config("missing key variant".into()))?
            .parse()?;
        let mut cfg = match variant {
            Variant::Baseline => Self::baseline(1),
            Variant::Joint => Self::joint(Self::JOINT_DEFAULT_DIM, 1),
        };
        for (key, value) in &pairs {
            if key == "variant" {
                continue;
            }
            let n: usize = value
                .parse()
                .map_err(|_| ModelError::Config(format!("{key}: not an integer: {value:?}")))?;
            match key.as_str() {
                "dim" => {
                    cfg.dim = n;
                    if get("features").is_none() {
                        cfg.features = n;
                    }
                    if get("groups").is_none() {
                        cfg.groups = n;
                    }
                }
                "downsample" | "k" => cfg.downsample = n,
                "features" => cfg.features = n,
                "groups" => cfg.groups = n,
                "classes" => cfg.classes = n,
                "stride" => cfg.stride = n,
                other => return Err(ModelError::Config(format!("unknown key {other:?}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        DecoderConfig::baseline(19).validate().unwrap();
        DecoderConfig::joint(48, 150).validate().unwrap();
    }

    #[test]
    fn rejects_wrong_geometry() {
        let mut c = DecoderConfig::baseline(19);
        c.dim = 48;
        assert!(c.validate().is_err());
        let mut j = DecoderConfig::joint(48, 150);
        j.downsample = 4;
        assert!(j.validate().is_err());
        assert!(DecoderConfig::joint(48, 0).validate().is_err());
    }

    #[test]
    fn kv_round_trip() {
        let mut c = DecoderConfig::joint(32, 19);
        c.groups = 8;
        assert_eq!(DecoderConfig::from_kv(&c.to_kv()).unwrap(), c);
        let parsed =
            DecoderConfig::from_kv("# comment\nvariant = jd\n\ndim = 64\nclasses=150\n").unwrap();
        assert_eq!(parsed, DecoderConfig::joint(64, 150));
        assert!(DecoderConfig::from_kv("variant = jd\ncolour = 3\n").is_err());
    }
}
