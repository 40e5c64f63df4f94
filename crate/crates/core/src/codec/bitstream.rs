//! Transmitted message: a fixed 52-byte little-endian header followed by the
//! hyper-latent payload and then the latent payload.

use crate::error::DecodeError;
use crate::wire::{Reader, Writer};

pub const BITSTREAM_MAGIC: [u8; 4] = *b"SSBS";
pub const BITSTREAM_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 52;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BitstreamHeader {
    pub model_id: u32,
    pub features: u16,
    /// Image height and width in pixels.
    pub image: [u32; 2],
    /// `F x h x w` of the latent `r_hat`.
    pub latent: [u32; 3],
    /// `F x h/2 x w/2` of the hyper-latent `h_hat`.
    pub hyper: [u32; 3],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bitstream {
    pub header: BitstreamHeader,
    /// Enhancement payload `b_h`.
    pub hyper_payload: Vec<u8>,
    /// Core payload `b_r`.
    pub latent_payload: Vec<u8>,
}

impl Bitstream {
    pub fn payload_len(&self) -> usize {
        self.hyper_payload.len() + self.latent_payload.len()
    }

    pub fn total_len(&self) -> usize {
        HEADER_LEN + self.payload_len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let h = &self.header;
        let mut w = Writer::with_capacity(self.total_len());
        w.bytes(&BITSTREAM_MAGIC);
        w.u16(BITSTREAM_VERSION);
        w.u32(h.model_id);
        w.u16(h.features);
        for v in h.image.iter().chain(&h.latent).chain(&h.hyper) {
            w.u32(*v);
        }
        w.u32(self.hyper_payload.len() as u32);
        w.u32(self.latent_payload.len() as u32);
        w.bytes(&self.hyper_payload);
        w.bytes(&self.latent_payload);
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        r.magic(BITSTREAM_MAGIC)?;
        r.version(BITSTREAM_VERSION)?;
        let model_id = r.u32("model_id")?;
        let features = r.u16("features")?;
        let image = [r.u32("image_height")?, r.u32("image_width")?];
        let latent = [
            r.u32("latent_channels")?,
            r.u32("latent_height")?,
            r.u32("latent_width")?,
        ];
        let hyper = [
            r.u32("hyper_channels")?,
            r.u32("hyper_height")?,
            r.u32("hyper_width")?,
        ];
        let hyper_len = r.u32("hyper_len")? as usize;
        let latent_len = r.u32("latent_len")? as usize;
        let declared = hyper_len as u64 + latent_len as u64;
        if declared != r.remaining() as u64 {
            let field = if (hyper_len as u64) > r.remaining() as u64 {
                "hyper_len"
            } else {
                "hyper_len + latent_len"
            };
            return Err(DecodeError::Length {
                field,
                declared: declared as usize,
                actual: r.remaining(),
            });
        }
        let hyper_payload = r.take(hyper_len, "hyper_payload")?.to_vec();
        let latent_payload = r.take(latent_len, "latent_payload")?.to_vec();
        let header = BitstreamHeader {
            model_id,
            features,
            image,
            latent,
            hyper,
        };
        header.validate()?;
        Ok(Self {
            header,
            hyper_payload,
            latent_payload,
        })
    }
}

impl BitstreamHeader {
    /// Upper bound on latent elements accepted from the wire.
    pub const MAX_ELEMENTS: u64 = 1 << 26;

    /// Geometry consistency: channels agree with `F`, the image is exactly
    /// eight times the latent grid, and the hyper grid is half of it.
    pub fn validate(&self) -> Result<(), DecodeError> {
        let invalid =
            |field: &'static str, reason: String| Err(DecodeError::Invalid { field, reason });
        let f = self.features as u32;
        if self.latent[0] != f {
            return invalid("latent_channels", format!("{} != F={f}", self.latent[0]));
        }
        if self.hyper[0] != f {
            return invalid("hyper_channels", format!("{} != F={f}", self.hyper[0]));
        }
        for (axis, field) in [(0, "image_height"), (1, "image_width")] {
            if self.image[axis] as u64 != 8 * self.latent[axis + 1] as u64 {
                return invalid(
                    field,
                    format!(
                        "{} is not 8 x latent {}",
                        self.image[axis],
                        self.latent[axis + 1]
                    ),
                );
            }
        }
        for (axis, field) in [(1, "hyper_height"), (2, "hyper_width")] {
            if !self.latent[axis].is_multiple_of(2)
                || self.hyper[axis] as u64 * 2 != self.latent[axis] as u64
            {
                return invalid(
                    field,
                    format!(
                        "{} is not half of latent {}",
                        self.hyper[axis], self.latent[axis]
                    ),
                );
            }
        }
        let n: u64 = self.latent.iter().map(|&v| v as u64).product();
        if n > Self::MAX_ELEMENTS {
            return invalid(
                "latent_height",
                format!("{n} latent elements exceed the limit"),
            );
        }
        Ok(())
    }

    pub fn latent_shape(&self) -> [usize; 3] {
        self.latent.map(|v| v as usize)
    }

    pub fn hyper_shape(&self) -> [usize; 3] {
        self.hyper.map(|v| v as usize)
    }
}
