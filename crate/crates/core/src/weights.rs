//! `SSJD` weight container.
//!
//! Layout (little-endian): magic, version `u16`, entry count `u32`, then per
//! entry a `u16`-prefixed UTF-8 name, rank `u8`, `rank` dims as `u32` and the
//! `f32` payload. Scalars are rank-0 entries.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{DecodeError, WeightsError};
use crate::init::fnv1a64;
use crate::tensor::Tensor;
use crate::wire::{Reader, Writer};

pub const WEIGHTS_MAGIC: [u8; 4] = *b"SSJD";
pub const WEIGHTS_VERSION: u16 = 1;

/// Ordered, uniquely named tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightContainer {
    entries: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
}

impl WeightContainer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<(), WeightsError> {
        let name = name.into();
        if name.len() > u16::MAX as usize {
            return Err(WeightsError::Decode(DecodeError::Invalid {
                field: "name",
                reason: format!("name of {} bytes is too long", name.len()),
            }));
        }
        if self.index.contains_key(&name) {
            return Err(WeightsError::Duplicate(name));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push((name, tensor));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor, WeightsError> {
        self.get(name)
            .ok_or_else(|| WeightsError::Missing(name.to_string()))
    }

    /// Reads a rank-0 entry.
    pub fn scalar(&self, name: &str) -> Result<f32, WeightsError> {
        let t = self.require(name)?;
        if t.rank() != 0 {
            return Err(WeightsError::Shape {
                name: name.to_string(),
                expected: "[]".into(),
                actual: t.shape().to_vec(),
            });
        }
        Ok(t.data()[0])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(&WEIGHTS_MAGIC);
        w.u16(WEIGHTS_VERSION);
        w.u32(self.entries.len() as u32);
        for (name, t) in &self.entries {
            w.u16(name.len() as u16);
            w.bytes(name.as_bytes());
            w.u8(t.rank() as u8);
            for &d in t.shape() {
                w.u32(d as u32);
            }
            for &v in t.data() {
                w.f32(v);
            }
        }
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WeightsError> {
        let mut r = Reader::new(bytes);
        r.magic(WEIGHTS_MAGIC)?;
        r.version(WEIGHTS_VERSION)?;
        let count = r.u32("entry_count")?;
        let mut out = Self::new();
        for _ in 0..count {
            let len = r.u16("name_len")? as usize;
            let name = std::str::from_utf8(r.take(len, "name")?)
                .map_err(|e| DecodeError::Invalid {
                    field: "name",
                    reason: e.to_string(),
                })?
                .to_string();
            let rank = r.u8("rank")? as usize;
            let shape = (0..rank)
                .map(|_| r.u32("dims").map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or(DecodeError::Truncated { field: "payload" })?;
            if n.saturating_mul(4) > r.remaining() {
                return Err(DecodeError::Truncated { field: "payload" }.into());
            }
            let data = r.f32_vec(n, "payload")?;
            out.insert(name, Tensor::new(shape, data)?)?;
        }
        r.finish("entry_count")?;
        Ok(out)
    }

    pub fn write_file(&self, path: &Path) -> Result<(), WeightsError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<Self, WeightsError> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// 32-bit fingerprint of the serialized container.
    pub fn model_id(&self) -> u32 {
        model_id_of(&self.to_bytes())
    }
}

pub fn model_id_of(bytes: &[u8]) -> u32 {
    let h = fnv1a64(bytes);
    (h ^ (h >> 32)) as u32
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> WeightContainer {
        let mut c = WeightContainer::new();
        c.insert("config.dim", Tensor::scalar(48.0)).unwrap();
        c.insert("a.weight", Tensor::from_fn(&[2, 3], |i| i as f32))
            .unwrap();
        c.insert("empty", Tensor::zeros(&[0, 4])).unwrap();
        c
    }

    #[test]
    fn round_trip_preserves_order_and_values() {
        let c = sample();
        let bytes = c.to_bytes();
        assert_eq!(&bytes[..4], b"SSJD");
        let back = WeightContainer::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.scalar("config.dim").unwrap(), 48.0);
        assert_eq!(back.model_id(), c.model_id());
    }

    #[test]
    fn duplicates_and_corruption_rejected() {
        let mut c = sample();
        assert!(matches!(
            c.insert("a.weight", Tensor::zeros(&[1])),
            Err(WeightsError::Duplicate(_))
        ));
        let bytes = c.to_bytes();
        assert!(WeightContainer::from_bytes(&bytes[..bytes.len() - 2]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(WeightContainer::from_bytes(&extra).is_err());
        let mut huge = bytes;
        // dims of "a.weight" blown up: must fail without allocating
        let pos = 4 + 2 + 4 + 2 + 10 + 1 + 4 + 2 + 8 + 1;
        huge[pos..pos + 4].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(WeightContainer::from_bytes(&huge).is_err());
    }
}
