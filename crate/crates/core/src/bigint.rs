//! Big-integer helpers shared by the Paillier and OT layers.

use rand::RngCore;
use rug::integer::Order;
use rug::Integer;

/// Uniform integer in `[0, bound)` by rejection sampling on whole bytes.
pub fn random_below<R: RngCore + ?Sized>(rng: &mut R, bound: &Integer) -> Integer {
    assert!(*bound > 0, "empty range");
    let bits = bound.significant_bits();
    let bytes = bits.div_ceil(8) as usize;
    let excess = (bytes as u32 * 8) - bits;
    let mut buf = vec![0u8; bytes];
    loop {
        rng.fill_bytes(&mut buf);
        buf[0] &= 0xFF >> excess;
        let candidate = Integer::from_digits(&buf, Order::Msf);
        if candidate < *bound {
            return candidate;
        }
    }
}

/// Uniform integer in `[low, high)`.
pub fn random_range<R: RngCore + ?Sized>(rng: &mut R, low: &Integer, high: &Integer) -> Integer {
    let span = Integer::from(high - low);
    random_below(rng, &span) + low
}

/// Random integer with exactly `bits` significant bits.
pub fn random_bits<R: RngCore + ?Sized>(rng: &mut R, bits: u32) -> Integer {
    let bytes = bits.div_ceil(8) as usize;
    let mut buf = vec![0u8; bytes];
    rng.fill_bytes(&mut buf);
    let mut n = Integer::from_digits(&buf, Order::Msf);
    n.keep_bits_mut(bits);
    n.set_bit(bits - 1, true);
    n
}

/// Minimal big-endian magnitude; zero encodes as the empty string.
pub fn to_be_bytes(n: &Integer) -> Vec<u8> {
    debug_assert!(*n >= 0);
    n.to_digits::<u8>(Order::Msf)
}

pub fn from_be_bytes(bytes: &[u8]) -> Integer {
    Integer::from_digits(bytes, Order::Msf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomSource;

    #[test]
    fn random_below_stays_in_range() {
        let mut rng = RandomSource::from_seed(1);
        let bound = Integer::from(1000);
        let mut seen_high = false;
        for _ in 0..2000 {
            let v = random_below(&mut rng, &bound);
            assert!(v >= 0 && v < bound);
            seen_high |= v > 900;
        }
        assert!(seen_high);
    }

    #[test]
    fn random_bits_has_exact_length() {
        let mut rng = RandomSource::from_seed(2);
        for bits in [1, 7, 8, 9, 255, 512] {
            assert_eq!(random_bits(&mut rng, bits).significant_bits(), bits);
        }
    }

    #[test]
    fn byte_encoding_is_minimal() {
        assert!(to_be_bytes(&Integer::ZERO).is_empty());
        assert_eq!(to_be_bytes(&Integer::from(0x0102)), vec![1, 2]);
        assert_eq!(from_be_bytes(&[1, 2]), 0x0102);
    }
}
