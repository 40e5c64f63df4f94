//! Hyperprior feature codec.
//!
//! Encoding runs the hyper path first: `h = HE(r)`, `h_hat = Q(h)` coded with
//! the factorized model, `sigma = max(HD(h_hat), sigma_min)`, then
//! `r_hat = Q(r)` coded with the Gaussian conditional at those scales.
//! Decoding mirrors that order, so both sides see bit-identical `sigma`.

mod bitstream;
mod hyper;
mod quant;
mod range;
mod tables;

pub use bitstream::{Bitstream, BitstreamHeader, BITSTREAM_MAGIC, BITSTREAM_VERSION, HEADER_LEN};
pub use hyper::{hyper_sigma, HyperDecoderWeights, HyperEncoderWeights, HyperWeights};
pub use quant::{quantize, quantize_value, QuantTensor};
pub use range::{RangeDecoder, RangeEncoder, PROB_BITS, PROB_TOTAL};
pub use tables::{
    gaussian_pmf, laplace_pmf, phi, CodingTable, FactorizedModel, GaussianConditional,
    ESCAPE_RAW_BITS, MAX_SUPPORT,
};

use crate::error::{CodecError, DecodeError};
use crate::tensor::Tensor;

/// Quantized latents and the scales that condition the latent model.
#[derive(Debug, Clone, PartialEq)]
pub struct Latents {
    pub r_hat: QuantTensor,
    pub h_hat: QuantTensor,
    pub sigma: Tensor,
}

fn latent_grid(
    r: &Tensor,
    fm: &FactorizedModel,
    w: &HyperWeights,
) -> Result<(usize, usize, usize), CodecError> {
    let (f, h, wd) = match r.shape() {
        &[f, h, w] if h % 2 == 0 && w % 2 == 0 => (f, h, w),
        other => return Err(CodecError::Grid(other.to_vec())),
    };
    if f != fm.channels() || f != w.features() {
        return Err(CodecError::Channels {
            model: fm.channels(),
            latent: f,
        });
    }
    Ok((f, h, wd))
}

/// Runs the quantizers and the hyper path without entropy coding.
pub fn analyse(
    r: &Tensor,
    w: &HyperWeights,
    fm: &FactorizedModel,
    gc: &GaussianConditional,
) -> Result<Latents, CodecError> {
    let (f, h, wd) = latent_grid(r, fm, w)?;
    if let Some(index) = r.data().iter().position(|v| !v.is_finite()) {
        return Err(CodecError::NonFinite {
            what: "latent",
            index,
        });
    }
    let h_hat = if r.is_empty() {
        QuantTensor::zeros(&[f, h / 2, wd / 2])
    } else {
        quantize(&w.analyse(r)?)
    };
    let sigma = sigma_for(&h_hat, [f, h, wd], w, gc)?;
    Ok(Latents {
        r_hat: quantize(r),
        h_hat,
        sigma,
    })
}

fn sigma_for(
    h_hat: &QuantTensor,
    latent: [usize; 3],
    w: &HyperWeights,
    gc: &GaussianConditional,
) -> Result<Tensor, CodecError> {
    if latent.iter().product::<usize>() == 0 {
        return Ok(Tensor::full(&latent, gc.sigma_min() as f32));
    }
    Ok(hyper_sigma(h_hat, w, gc.sigma_min())?)
}

fn code_hyper(h_hat: &QuantTensor, fm: &FactorizedModel) -> Vec<u8> {
    if h_hat.is_empty() {
        return Vec::new();
    }
    let plane = h_hat.shape()[1] * h_hat.shape()[2];
    let mut enc = RangeEncoder::new();
    for (i, &s) in h_hat.data().iter().enumerate() {
        fm.table(i / plane).encode(&mut enc, s);
    }
    enc.finish()
}

fn code_latent(r_hat: &QuantTensor, sigma: &Tensor, gc: &GaussianConditional) -> Vec<u8> {
    if r_hat.is_empty() {
        return Vec::new();
    }
    let mut enc = RangeEncoder::new();
    for (&s, &sd) in r_hat.data().iter().zip(sigma.data()) {
        gc.table_for(sd).encode(&mut enc, s);
    }
    enc.finish()
}

/// Encodes a latent with model id 0; see [`Codec`] for tagged streams.
pub fn encode(
    r: &Tensor,
    w: &HyperWeights,
    fm: &FactorizedModel,
    gc: &GaussianConditional,
) -> Result<Bitstream, CodecError> {
    Ok(encode_latents(&analyse(r, w, fm, gc)?, fm, gc, 0))
}

fn encode_latents(
    l: &Latents,
    fm: &FactorizedModel,
    gc: &GaussianConditional,
    model_id: u32,
) -> Bitstream {
    let dims = |t: &QuantTensor| {
        [
            t.shape()[0] as u32,
            t.shape()[1] as u32,
            t.shape()[2] as u32,
        ]
    };
    let latent = dims(&l.r_hat);
    Bitstream {
        header: BitstreamHeader {
            model_id,
            features: latent[0] as u16,
            image: [latent[1] * 8, latent[2] * 8],
            latent,
            hyper: dims(&l.h_hat),
        },
        hyper_payload: code_hyper(&l.h_hat, fm),
        latent_payload: code_latent(&l.r_hat, &l.sigma, gc),
    }
}

/// Decodes `r_hat`.
pub fn decode(
    b: &Bitstream,
    w: &HyperWeights,
    fm: &FactorizedModel,
    gc: &GaussianConditional,
) -> Result<QuantTensor, CodecError> {
    Ok(decode_latents(b, w, fm, gc)?.r_hat)
}

/// Decodes both latents and recomputes `sigma` exactly as the encoder did.
pub fn decode_latents(
    b: &Bitstream,
    w: &HyperWeights,
    fm: &FactorizedModel,
    gc: &GaussianConditional,
) -> Result<Latents, CodecError> {
    let hd = &b.header;
    hd.validate()?;
    let f = hd.features as usize;
    if f != fm.channels() || f != w.features() {
        return Err(CodecError::Channels {
            model: fm.channels(),
            latent: f,
        });
    }
    let latent = hd.latent_shape();
    let hyper = hd.hyper_shape();

    let n_hyper: usize = hyper.iter().product();
    let mut h_data = Vec::with_capacity(n_hyper);
    if n_hyper > 0 {
        let plane = hyper[1] * hyper[2];
        let mut dec = RangeDecoder::new(&b.hyper_payload, "hyper_payload");
        for i in 0..n_hyper {
            h_data.push(fm.table(i / plane).decode(&mut dec));
        }
        dec.finish()?;
    } else if !b.hyper_payload.is_empty() {
        return Err(empty_mismatch("hyper_payload", b.hyper_payload.len()));
    }
    let h_hat = QuantTensor::new(hyper.to_vec(), h_data)?;
    let sigma = sigma_for(&h_hat, latent, w, gc)?;

    let n_latent: usize = latent.iter().product();
    let mut r_data = Vec::with_capacity(n_latent);
    if n_latent > 0 {
        let mut dec = RangeDecoder::new(&b.latent_payload, "latent_payload");
        for &sd in sigma.data() {
            r_data.push(gc.table_for(sd).decode(&mut dec));
        }
        dec.finish()?;
    } else if !b.latent_payload.is_empty() {
        return Err(empty_mismatch("latent_payload", b.latent_payload.len()));
    }
    Ok(Latents {
        r_hat: QuantTensor::new(latent.to_vec(), r_data)?,
        h_hat,
        sigma,
    })
}

fn empty_mismatch(field: &'static str, actual: usize) -> CodecError {
    DecodeError::Length {
        field,
        declared: 0,
        actual,
    }
    .into()
}

/// Information content of the quantized latents under the coder's tables.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RateEstimate {
    pub hyper_bits: f64,
    pub latent_bits: f64,
}

impl RateEstimate {
    pub fn total_bits(&self) -> f64 {
        self.hyper_bits + self.latent_bits
    }

    pub fn bpp(&self, height: usize, width: usize) -> f64 {
        self.total_bits() / (height * width) as f64
    }
}

pub fn estimate_bits(
    r_hat: &QuantTensor,
    h_hat: &QuantTensor,
    sigma: &Tensor,
    fm: &FactorizedModel,
    gc: &GaussianConditional,
) -> Result<RateEstimate, CodecError> {
    if r_hat.shape() != sigma.shape() {
        return Err(CodecError::Grid(sigma.shape().to_vec()));
    }
    let hyper_bits = match h_hat.shape() {
        &[c, h, w] if c == fm.channels() => {
            let plane = (h * w).max(1);
            h_hat
                .data()
                .iter()
                .enumerate()
                .map(|(i, &s)| fm.table(i / plane).cost_bits(s))
                .sum()
        }
        other => return Err(CodecError::Grid(other.to_vec())),
    };
    let latent_bits = r_hat
        .data()
        .iter()
        .zip(sigma.data())
        .map(|(&s, &sd)| gc.table_for(sd).cost_bits(s))
        .sum();
    Ok(RateEstimate {
        hyper_bits,
        latent_bits,
    })
}

/// Expected bits per pixel of an `height x width` image.
pub fn estimate_rate(
    r_hat: &QuantTensor,
    h_hat: &QuantTensor,
    sigma: &Tensor,
    fm: &FactorizedModel,
    gc: &GaussianConditional,
    height: usize,
    width: usize,
) -> Result<f64, CodecError> {
    Ok(estimate_bits(r_hat, h_hat, sigma, fm, gc)?.bpp(height, width))
}

/// Hyper networks plus entropy models, tagged with the id of the weight
/// file they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Codec {
    pub hyper: HyperWeights,
    pub factorized: FactorizedModel,
    pub gaussian: GaussianConditional,
    pub model_id: u32,
}

impl Codec {
    pub fn analyse(&self, r: &Tensor) -> Result<Latents, CodecError> {
        analyse(r, &self.hyper, &self.factorized, &self.gaussian)
    }

    pub fn encode(&self, r: &Tensor) -> Result<Bitstream, CodecError> {
        Ok(self.encode_with_latents(r)?.0)
    }

    pub fn encode_with_latents(&self, r: &Tensor) -> Result<(Bitstream, Latents), CodecError> {
        let l = self.analyse(r)?;
        let b = encode_latents(&l, &self.factorized, &self.gaussian, self.model_id);
        Ok((b, l))
    }

    /// Rejects streams produced under different weights.
    pub fn decode(&self, b: &Bitstream) -> Result<Latents, CodecError> {
        if b.header.model_id != self.model_id {
            return Err(DecodeError::ModelId {
                expected: self.model_id,
                found: b.header.model_id,
            }
            .into());
        }
        decode_latents(b, &self.hyper, &self.factorized, &self.gaussian)
    }

    pub fn estimate(&self, l: &Latents) -> Result<RateEstimate, CodecError> {
        estimate_bits(
            &l.r_hat,
            &l.h_hat,
            &l.sigma,
            &self.factorized,
            &self.gaussian,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::ParamInit;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(f: usize) -> (HyperWeights, FactorizedModel, GaussianConditional) {
        (
            HyperWeights::init(&ParamInit::new(5).scope("hyper"), f).unwrap(),
            FactorizedModel::uniform(f, 1.0).unwrap(),
            GaussianConditional::default(),
        )
    }

    #[test]
    fn round_trip_small() {
        let (w, fm, gc) = setup(4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = Tensor::from_fn(&[4, 6, 8], |_| rng.gen_range(-20.0..20.0));
        let b = encode(&r, &w, &fm, &gc).unwrap();
        let parsed = Bitstream::from_bytes(&b.to_bytes()).unwrap();
        assert_eq!(decode(&parsed, &w, &fm, &gc).unwrap(), quantize(&r));
    }

    #[test]
    fn zero_latent_with_zero_hyper_encoder() {
        let (mut w, fm, gc) = setup(4);
        w.encoder.down.zero_weights();
        w.encoder.project.zero_weights();
        w.decoder.project.zero_weights();
        w.decoder.up.zero_weights();
        let r = Tensor::zeros(&[4, 8, 8]);
        let l = analyse(&r, &w, &fm, &gc).unwrap();
        assert!(l.sigma.data().iter().all(|&s| s == gc.sigma_min() as f32));
        let b = encode(&r, &w, &fm, &gc).unwrap();
        assert!(
            b.latent_payload.len() <= 6,
            "{} bytes",
            b.latent_payload.len()
        );
        let est = estimate_bits(&l.r_hat, &l.h_hat, &l.sigma, &fm, &gc).unwrap();
        assert!(8.0 * b.payload_len() as f64 <= est.total_bits() + 80.0);
        assert_eq!(
            decode(&b, &w, &fm, &gc).unwrap(),
            QuantTensor::zeros(&[4, 8, 8])
        );
    }

    #[test]
    fn empty_latent_gives_empty_payloads() {
        let (w, fm, gc) = setup(3);
        let b = encode(&Tensor::zeros(&[3, 0, 0]), &w, &fm, &gc).unwrap();
        assert_eq!(b.payload_len(), 0);
        assert_eq!(b.to_bytes().len(), HEADER_LEN);
        let back = Bitstream::from_bytes(&b.to_bytes()).unwrap();
        assert_eq!(decode(&back, &w, &fm, &gc).unwrap().shape(), &[3, 0, 0]);
    }

    #[test]
    fn rejects_bad_input() {
        let (w, fm, gc) = setup(2);
        let mut r = Tensor::zeros(&[2, 4, 4]);
        r.data_mut()[5] = f32::NAN;
        assert!(matches!(
            encode(&r, &w, &fm, &gc),
            Err(CodecError::NonFinite { index: 5, .. })
        ));
        assert!(matches!(
            encode(&Tensor::zeros(&[2, 3, 4]), &w, &fm, &gc),
            Err(CodecError::Grid(_))
        ));
        assert!(matches!(
            encode(&Tensor::zeros(&[3, 4, 4]), &w, &fm, &gc),
            Err(CodecError::Channels { .. })
        ));
    }

    #[test]
    fn model_id_mismatch_rejected() {
        let (hyper, factorized, gaussian) = setup(2);
        let codec = Codec {
            hyper,
            factorized,
            gaussian,
            model_id: 7,
        };
        let mut b = codec.encode(&Tensor::full(&[2, 4, 4], 3.0)).unwrap();
        assert!(codec.decode(&b).is_ok());
        b.header.model_id = 8;
        assert!(matches!(
            codec.decode(&b),
            Err(CodecError::Decode(DecodeError::ModelId {
                expected: 7,
                found: 8
            }))
        ));
    }
}
