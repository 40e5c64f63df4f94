//! Integer range coder over 16-bit cumulative frequencies.
//!
//! 64-bit `low` with a pending-byte cache for carry propagation, 32-bit
//! `range`, renormalised a byte at a time whenever `range < 2^24`.

use crate::error::DecodeError;

pub const PROB_BITS: u32 = 16;
pub const PROB_TOTAL: u32 = 1 << PROB_BITS;
const TOP: u32 = 1 << 24;

pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self {
            low: 0,
            range: u32::MAX,
            cache: 0,
            cache_size: 1,
            out: Vec::new(),
        }
    }

    /// Codes the interval `[start, start + freq)` out of [`PROB_TOTAL`].
    pub fn encode(&mut self, start: u32, freq: u32) {
        debug_assert!(freq > 0 && start + freq <= PROB_TOTAL);
        let r = self.range >> PROB_BITS;
        self.low += r as u64 * start as u64;
        self.range = r * freq;
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    /// Sixteen equiprobable bits.
    pub fn encode_raw16(&mut self, v: u16) {
        self.encode(v as u32, 1);
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xFF00_0000 || (self.low >> 32) != 0 {
            let carry = (self.low >> 32) as u8;
            let mut byte = self.cache;
            loop {
                self.out.push(byte.wrapping_add(carry));
                byte = 0xFF;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = (self.low >> 24) as u8;
        }
        self.cache_size += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

pub struct RangeDecoder<'a> {
    input: &'a [u8],
    pos: usize,
    code: u32,
    range: u32,
    step: u32,
    overrun: bool,
    field: &'static str,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(input: &'a [u8], field: &'static str) -> Self {
        let mut d = Self {
            input,
            pos: 0,
            code: 0,
            range: u32::MAX,
            step: 0,
            overrun: false,
            field,
        };
        for _ in 0..5 {
            d.code = (d.code << 8) | d.next_byte() as u32;
        }
        d
    }

    fn next_byte(&mut self) -> u8 {
        match self.input.get(self.pos) {
            Some(&b) => {
                self.pos += 1;
                b
            }
            None => {
                self.overrun = true;
                0
            }
        }
    }

    /// Cumulative-frequency target in `0..PROB_TOTAL`; must be followed by
    /// [`consume`](Self::consume) with the interval containing it.
    pub fn target(&mut self) -> u32 {
        self.step = self.range >> PROB_BITS;
        (self.code / self.step.max(1)).min(PROB_TOTAL - 1)
    }

    pub fn consume(&mut self, start: u32, freq: u32) {
        self.code = self.code.wrapping_sub(self.step.wrapping_mul(start));
        self.range = self.step.wrapping_mul(freq);
        while self.range < TOP {
            self.range <<= 8;
            self.code = (self.code << 8) | self.next_byte() as u32;
            if self.range == 0 {
                self.overrun = true;
                break;
            }
        }
    }

    pub fn decode_raw16(&mut self) -> u16 {
        let v = self.target();
        self.consume(v, 1);
        v as u16
    }

    /// Succeeds only if the payload was consumed exactly.
    pub fn finish(self) -> Result<(), DecodeError> {
        if self.overrun {
            return Err(DecodeError::Overrun { field: self.field });
        }
        if self.pos != self.input.len() {
            return Err(DecodeError::Length {
                field: self.field,
                declared: self.input.len(),
                actual: self.pos,
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_values_round_trip() {
        let values: Vec<u16> = (0..1000u32).map(|i| (i * 7919 % 65536) as u16).collect();
        let mut enc = RangeEncoder::new();
        for &v in &values {
            enc.encode_raw16(v);
        }
        let bytes = enc.finish();
        assert!(bytes.len() >= 2000);
        let mut dec = RangeDecoder::new(&bytes, "raw");
        for &v in &values {
            assert_eq!(dec.decode_raw16(), v);
        }
        dec.finish().unwrap();
    }

    #[test]
    fn skewed_binary_alphabet() {
        // P(a) = 65535/65536 so a long run of `a` costs almost nothing
        let symbols: Vec<bool> = (0..5000).map(|i| i % 997 == 0).collect();
        let mut enc = RangeEncoder::new();
        for &s in &symbols {
            if s {
                enc.encode(65535, 1);
            } else {
                enc.encode(0, 65535);
            }
        }
        let bytes = enc.finish();
        assert!(bytes.len() < 30, "{} bytes", bytes.len());
        let mut dec = RangeDecoder::new(&bytes, "skewed");
        for &s in &symbols {
            let t = dec.target();
            let got = t >= 65535;
            assert_eq!(got, s);
            if got {
                dec.consume(65535, 1);
            } else {
                dec.consume(0, 65535);
            }
        }
        dec.finish().unwrap();
    }

    #[test]
    fn truncated_payload_is_detected() {
        let mut enc = RangeEncoder::new();
        for v in 0..64u16 {
            enc.encode_raw16(v.wrapping_mul(1021));
        }
        let bytes = enc.finish();
        let mut dec = RangeDecoder::new(&bytes[..bytes.len() - 3], "p");
        for _ in 0..64 {
            dec.decode_raw16();
        }
        assert!(matches!(dec.finish(), Err(DecodeError::Overrun { .. })));
    }
}
