use rug::ops::RemRounding;
use rug::Integer;

use crate::error::{Error, Result};

pub const DEFAULT_SCALE_BITS: u32 = 40;

/// Signed fixed-point reals in `ℤ_N`: `x ↦ round(x·2^s)`, negatives by
/// complement (`N − round(|x|·2^s)`), decoded with a midpoint split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FixedPointCodec {
    scale_bits: u32,
    modulus: Integer,
    half: Integer,
}

impl FixedPointCodec {
    /// Checks that a length-`dim` dot product of unit-range encodings,
    /// bounded by `dim · 2^{2s}`, stays below `N/2`.
    pub fn new(scale_bits: u32, modulus: &Integer, dim: usize) -> Result<Self> {
        if scale_bits == 0 || scale_bits > 60 {
            return Err(Error::Config(format!("scale_bits {scale_bits} outside 1..=60")));
        }
        let half = Integer::from(modulus >> 1);
        let bound = Integer::from(dim) << (2 * scale_bits);
        if bound >= half {
            return Err(Error::Config(format!(
                "dimension {dim} at scale 2^{scale_bits} overflows a {}-bit modulus",
                modulus.significant_bits()
            )));
        }
        Ok(Self { scale_bits, modulus: modulus.clone(), half })
    }

    pub fn scale_bits(&self) -> u32 {
        self.scale_bits
    }

    pub fn modulus(&self) -> &Integer {
        &self.modulus
    }

    /// Signed integer `round(x·2^s)` before reduction into `ℤ_N`.
    pub fn quantize(&self, x: f64) -> Result<Integer> {
        if !x.is_finite() {
            return Err(Error::domain(format!("cannot encode {x}")));
        }
        let scaled = (x * (self.scale_bits as f64).exp2()).round();
        let v = Integer::from_f64(scaled).ok_or_else(|| Error::domain("encoding overflow"))?;
        if Integer::from(v.abs_ref()) >= self.half {
            return Err(Error::domain(format!("{x} overflows the plaintext space")));
        }
        Ok(v)
    }

    /// `round(x·2^s)` as an `i64`; for unit-range inputs this never fails at
    /// `s ≤ 60`.
    pub fn quantize_i64(&self, x: f64) -> Result<i64> {
        let scaled = (x * (self.scale_bits as f64).exp2()).round();
        if !scaled.is_finite() || scaled.abs() >= 2f64.powi(62) {
            return Err(Error::domain(format!("{x} does not fit a 62-bit fixed-point value")));
        }
        Ok(scaled as i64)
    }

    pub fn encode(&self, x: f64) -> Result<Integer> {
        let v = self.quantize(x)?;
        Ok(self.reduce(v))
    }

    pub fn reduce(&self, v: Integer) -> Integer {
        v.rem_euc(&self.modulus)
    }

    pub fn decode(&self, m: &Integer) -> f64 {
        self.decode_at(m, self.scale_bits)
    }

    /// Decodes a product of two encodings, which carries scale `2^{2s}`.
    pub fn decode_product(&self, m: &Integer) -> f64 {
        self.decode_at(m, 2 * self.scale_bits)
    }

    /// Exact signed integer represented by `m`: values above `N/2` are negative.
    pub fn to_signed(&self, m: &Integer) -> Integer {
        if *m > self.half {
            Integer::from(m - &self.modulus)
        } else {
            m.clone()
        }
    }

    fn decode_at(&self, m: &Integer, scale_bits: u32) -> f64 {
        let signed = self.to_signed(m);
        signed.to_f64() / (scale_bits as f64).exp2()
    }
}
