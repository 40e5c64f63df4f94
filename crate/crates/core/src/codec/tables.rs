//! Discretised probability tables shared by the range coder and the rate
//! estimator.

use std::f64::consts::SQRT_2;

use super::range::{RangeDecoder, RangeEncoder, PROB_TOTAL};
use crate::error::CodecError;

/// Largest magnitude coded directly; anything beyond goes through the escape.
pub const MAX_SUPPORT: u32 = 255;
/// Cost of the raw payload following an escape symbol.
pub const ESCAPE_RAW_BITS: f64 = 32.0;

/// Frequencies for symbols `-m..=m` followed by one escape entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodingTable {
    support: u32,
    cdf: Vec<u32>,
}

impl CodingTable {
    /// Quantises `pmf(s)` for `s` in `-m..=m` to 16-bit frequencies. The
    /// escape receives the leftover mass; every entry gets at least one unit
    /// and rounding slack is settled on the most probable entry.
    pub fn from_pmf(support: u32, pmf: impl Fn(i32) -> f64) -> Result<Self, CodecError> {
        let m = support.min(MAX_SUPPORT) as i32;
        let mut probs: Vec<f64> = (-m..=m).map(&pmf).collect();
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(CodecError::Model(
                "pmf produced an invalid probability".into(),
            ));
        }
        let covered: f64 = probs.iter().sum();
        probs.push((1.0 - covered).max(0.0));
        let total = PROB_TOTAL as i64;
        let mut freqs: Vec<i64> = probs
            .iter()
            .map(|p| ((p * total as f64).round() as i64).max(1))
            .collect();
        let mut slack = total - freqs.iter().sum::<i64>();
        while slack != 0 {
            let (i, &f) = freqs
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
                .expect("non-empty");
            let delta = if slack > 0 { slack } else { slack.max(1 - f) };
            freqs[i] += delta;
            slack -= delta;
        }
        let mut cdf = Vec::with_capacity(freqs.len() + 1);
        let mut acc = 0u32;
        cdf.push(0);
        for f in freqs {
            acc += f as u32;
            cdf.push(acc);
        }
        debug_assert_eq!(acc, PROB_TOTAL);
        Ok(Self {
            support: m as u32,
            cdf,
        })
    }

    pub fn support(&self) -> u32 {
        self.support
    }

    /// All frequencies, escape last.
    pub fn frequencies(&self) -> impl Iterator<Item = u32> + '_ {
        self.cdf.windows(2).map(|w| w[1] - w[0])
    }

    pub fn cdf(&self) -> &[u32] {
        &self.cdf
    }

    fn escape_index(&self) -> usize {
        self.cdf.len() - 2
    }

    fn index_of(&self, s: i32) -> Option<usize> {
        let m = self.support as i64;
        let s = s as i64;
        (-m..=m).contains(&s).then(|| (s + m) as usize)
    }

    fn interval(&self, i: usize) -> (u32, u32) {
        (self.cdf[i], self.cdf[i + 1] - self.cdf[i])
    }

    /// Bits this table charges for `s`, escape payload included.
    pub fn cost_bits(&self, s: i32) -> f64 {
        let (i, extra) = match self.index_of(s) {
            Some(i) => (i, 0.0),
            None => (self.escape_index(), ESCAPE_RAW_BITS),
        };
        let (_, f) = self.interval(i);
        -(f as f64 / PROB_TOTAL as f64).log2() + extra
    }

    pub fn encode(&self, enc: &mut RangeEncoder, s: i32) {
        match self.index_of(s) {
            Some(i) => {
                let (start, f) = self.interval(i);
                enc.encode(start, f);
            }
            None => {
                let (start, f) = self.interval(self.escape_index());
                enc.encode(start, f);
                let raw = s as u32;
                enc.encode_raw16((raw >> 16) as u16);
                enc.encode_raw16(raw as u16);
            }
        }
    }

    pub fn decode(&self, dec: &mut RangeDecoder<'_>) -> i32 {
        let target = dec.target();
        let i = self.cdf.partition_point(|&c| c <= target) - 1;
        let (start, f) = self.interval(i);
        dec.consume(start, f);
        if i == self.escape_index() {
            let hi = dec.decode_raw16() as u32;
            let lo = dec.decode_raw16() as u32;
            ((hi << 16) | lo) as i32
        } else {
            i as i32 - self.support as i32
        }
    }
}

/// Standard normal CDF.
pub fn phi(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// `P(s) = Phi((s + 1/2) / sigma) - Phi((s - 1/2) / sigma)` for a zero-mean
/// Gaussian, evaluated on `|s|` through upper tails to avoid cancellation.
pub fn gaussian_pmf(symbol: i32, sigma: f64) -> f64 {
    let a = (symbol as f64).abs();
    if a == 0.0 {
        return libm::erf(0.5 / (sigma * SQRT_2));
    }
    let upper = |x: f64| 0.5 * libm::erfc(x / (sigma * SQRT_2));
    (upper(a - 0.5) - upper(a + 0.5)).max(0.0)
}

/// Discretised zero-mean Laplacian with scale `b`.
pub fn laplace_pmf(symbol: i32, b: f64) -> f64 {
    let a = (symbol as f64).abs();
    if a == 0.0 {
        return -libm::expm1(-0.5 / b);
    }
    0.5 * (libm::exp(-(a - 0.5) / b) - libm::exp(-(a + 0.5) / b))
}

/// Quantile `z` with `2 * (1 - Phi(z)) = tail`, by bisection.
fn two_sided_quantile(tail: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 40.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if libm::erfc(mid / SQRT_2) > tail {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

fn check_tail(tail_mass: f64) -> Result<(), CodecError> {
    if !(tail_mass > 0.0 && tail_mass < 1.0) {
        return Err(CodecError::Model(format!(
            "tail mass {tail_mass} outside (0, 1)"
        )));
    }
    Ok(())
}

/// Zero-mean Gaussian conditional model for the latent, with `sigma`
/// snapped up to a fixed log-spaced grid of scale levels.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianConditional {
    sigma_min: f64,
    tail_mass: f64,
    levels: Vec<f64>,
    tables: Vec<CodingTable>,
}

impl Default for GaussianConditional {
    fn default() -> Self {
        Self::new(
            Self::SIGMA_MIN,
            Self::SIGMA_MAX,
            Self::LEVELS,
            Self::TAIL_MASS,
        )
        .expect("default parameters are valid")
    }
}

impl GaussianConditional {
    pub const SIGMA_MIN: f64 = 0.11;
    pub const SIGMA_MAX: f64 = 256.0;
    pub const LEVELS: usize = 64;
    pub const TAIL_MASS: f64 = 1e-9;

    pub fn new(
        sigma_min: f64,
        sigma_max: f64,
        levels: usize,
        tail_mass: f64,
    ) -> Result<Self, CodecError> {
        check_tail(tail_mass)?;
        if !(sigma_min > 0.0 && sigma_max >= sigma_min && sigma_max.is_finite()) || levels < 2 {
            return Err(CodecError::Model(format!(
                "bad scale grid: {levels} levels over [{sigma_min}, {sigma_max}]"
            )));
        }
        let (l0, l1) = (libm::log(sigma_min), libm::log(sigma_max));
        let levels: Vec<f64> = (0..levels)
            .map(|i| libm::exp(l0 + (l1 - l0) * i as f64 / (levels - 1) as f64))
            .collect();
        let z = two_sided_quantile(tail_mass);
        let tables = levels
            .iter()
            .map(|&s| {
                let m = (z * s).ceil().min(MAX_SUPPORT as f64) as u32;
                CodingTable::from_pmf(m, |k| gaussian_pmf(k, s))
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            sigma_min,
            tail_mass,
            levels,
            tables,
        })
    }

    pub fn sigma_min(&self) -> f64 {
        self.sigma_min
    }

    pub fn tail_mass(&self) -> f64 {
        self.tail_mass
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    /// Index of the smallest scale level `>= max(sigma, sigma_min)`; the top
    /// level absorbs anything larger.
    pub fn level_for(&self, sigma: f32) -> usize {
        let s = (sigma as f64).max(self.sigma_min);
        self.levels
            .partition_point(|&l| l < s)
            .min(self.levels.len() - 1)
    }

    pub fn table_for(&self, sigma: f32) -> &CodingTable {
        &self.tables[self.level_for(sigma)]
    }

    pub fn tables(&self) -> &[CodingTable] {
        &self.tables
    }

    /// Continuous-model probability with `sigma` floored at `sigma_min`.
    pub fn pmf(&self, symbol: i32, sigma: f64) -> f64 {
        gaussian_pmf(symbol, sigma.max(self.sigma_min))
    }
}

/// Per-channel factorized model for the hyper-latent: a discretised
/// Laplacian with one scale per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorizedModel {
    scales: Vec<f32>,
    tail_mass: f64,
    tables: Vec<CodingTable>,
}

impl FactorizedModel {
    pub const DEFAULT_SCALE: f32 = 1.0;

    pub fn new(scales: Vec<f32>, tail_mass: f64) -> Result<Self, CodecError> {
        check_tail(tail_mass)?;
        let tables = scales
            .iter()
            .enumerate()
            .map(|(c, &b)| {
                if !(b.is_finite() && b > 0.0) {
                    return Err(CodecError::Model(format!(
                        "channel {c}: scale {b} must be positive"
                    )));
                }
                let b = b as f64;
                let m = (b * (1.0 / tail_mass).ln()).ceil().min(MAX_SUPPORT as f64) as u32;
                CodingTable::from_pmf(m, |k| laplace_pmf(k, b))
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            scales,
            tail_mass,
            tables,
        })
    }

    pub fn uniform(channels: usize, scale: f32) -> Result<Self, CodecError> {
        Self::new(vec![scale; channels], GaussianConditional::TAIL_MASS)
    }

    pub fn channels(&self) -> usize {
        self.scales.len()
    }

    pub fn scales(&self) -> &[f32] {
        &self.scales
    }

    pub fn table(&self, channel: usize) -> &CodingTable {
        &self.tables[channel]
    }

    pub fn tables(&self) -> &[CodingTable] {
        &self.tables
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tables_sum_to_full_precision() {
        let gc = GaussianConditional::default();
        for t in gc.tables() {
            assert_eq!(
                t.frequencies().map(|f| f as u64).sum::<u64>(),
                PROB_TOTAL as u64
            );
            assert!(t.frequencies().all(|f| f >= 1));
        }
        let fm = FactorizedModel::new(vec![0.05, 1.0, 30.0, 400.0], 1e-9).unwrap();
        for t in fm.tables() {
            assert_eq!(t.cdf().last(), Some(&PROB_TOTAL));
        }
    }

    #[test]
    fn levels_snap_upwards() {
        let gc = GaussianConditional::default();
        assert_eq!(gc.level_for(0.0), 0);
        assert_eq!(gc.level_for(0.11), 0);
        assert_eq!(gc.level_for(1e9), GaussianConditional::LEVELS - 1);
        let i = gc.level_for(1.0);
        assert!(gc.levels()[i] >= 1.0 && gc.levels()[i - 1] < 1.0);
        assert!((gc.levels()[63] - 256.0).abs() < 1e-9);
    }

    #[test]
    fn escape_round_trip_and_cost() {
        let t = CodingTable::from_pmf(2, |s| gaussian_pmf(s, 0.5)).unwrap();
        let values = [0, 1, -2, 3, -1000, i32::MAX, i32::MIN, 2];
        let mut enc = RangeEncoder::new();
        for &v in &values {
            t.encode(&mut enc, v);
        }
        let bytes = enc.finish();
        let mut dec = RangeDecoder::new(&bytes, "t");
        for &v in &values {
            assert_eq!(t.decode(&mut dec), v);
        }
        dec.finish().unwrap();
        assert!(t.cost_bits(1000) > 32.0);
    }

    #[test]
    fn sixteenth_probability_costs_four_bits() {
        let t = CodingTable::from_pmf(1, |s| if s == 0 { 1.0 / 16.0 } else { 0.5 - 1.0 / 32.0 })
            .unwrap();
        assert_eq!(t.cost_bits(0), 4.0);
    }

    #[test]
    fn invalid_models_rejected() {
        assert!(FactorizedModel::new(vec![0.0], 1e-9).is_err());
        assert!(FactorizedModel::new(vec![f32::NAN], 1e-9).is_err());
        assert!(GaussianConditional::new(0.0, 1.0, 4, 1e-9).is_err());
        assert!(GaussianConditional::new(0.1, 1.0, 4, 0.0).is_err());
    }
}
