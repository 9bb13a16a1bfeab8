//! Encrypted inner product `⟦Σ q_i d_i⟧` of an encrypted query with a
//! plaintext document.
//!
//! Document coordinates are signed. Rather than exponentiating by the
//! complement `N − |s|` (a full-width exponent), positive and negative terms
//! are accumulated separately with short exponents and combined with a
//! single inversion; the plaintext is the same element of `ℤ_N`.

use rug::{Assign, Integer};

use super::{FixedPointCodec, HECiphertext, PublicKey};
use crate::error::{Error, Result};

const WINDOW_BITS: u32 = 4;
const TABLE_LEN: usize = (1 << WINDOW_BITS) - 1;

/// Single-document encrypted dot product.
pub fn enc_dot(
    pk: &PublicKey,
    codec: &FixedPointCodec,
    enc_query: &[HECiphertext],
    doc: &[f64],
) -> Result<HECiphertext> {
    check_lengths(enc_query.len(), doc.len())?;
    let n_sq = pk.modulus_sq();
    let mut pos = Integer::from(1);
    let mut neg = Integer::from(1);
    for (c, &d) in enc_query.iter().zip(doc) {
        let s = codec.quantize_i64(d)?;
        if s == 0 {
            continue;
        }
        let e = Integer::from(s.unsigned_abs());
        let term = Integer::from(c.value().pow_mod_ref(&e, n_sq).expect("positive modulus"));
        let acc = if s > 0 { &mut pos } else { &mut neg };
        *acc *= term;
        *acc %= n_sq;
    }
    finish(pk, pos, neg)
}

/// An encrypted query with per-coordinate power tables, amortized over many
/// documents. Each document then costs about `n · ⌈bits/4⌉` modular
/// multiplications plus a few dozen shared squarings.
#[derive(Clone, Debug)]
pub struct PreparedQuery {
    pk: PublicKey,
    /// `tables[i][j] = c_i^{j+1} mod N²`.
    tables: Vec<Vec<Integer>>,
}

impl PreparedQuery {
    pub fn new(pk: &PublicKey, enc_query: &[HECiphertext]) -> Self {
        let n_sq = pk.modulus_sq();
        let tables = enc_query
            .iter()
            .map(|c| {
                let mut row = Vec::with_capacity(TABLE_LEN);
                row.push(c.value().clone());
                for j in 1..TABLE_LEN {
                    let next = Integer::from(&row[j - 1] * c.value()) % n_sq;
                    row.push(next);
                }
                row
            })
            .collect();
        Self { pk: pk.clone(), tables }
    }

    pub fn dim(&self) -> usize {
        self.tables.len()
    }

    pub fn dot(&self, codec: &FixedPointCodec, doc: &[f64]) -> Result<HECiphertext> {
        check_lengths(self.tables.len(), doc.len())?;
        let scalars = doc.iter().map(|&d| codec.quantize_i64(d)).collect::<Result<Vec<_>>>()?;
        let max_bits = scalars.iter().map(|s| 64 - s.unsigned_abs().leading_zeros()).max().unwrap_or(0);
        let windows = max_bits.div_ceil(WINDOW_BITS);
        let n_sq = self.pk.modulus_sq();

        let mut pos = Integer::from(1);
        let mut neg = Integer::from(1);
        let mut scratch = Integer::new();
        for w in (0..windows).rev() {
            for acc in [&mut pos, &mut neg] {
                if *acc != 1 {
                    for _ in 0..WINDOW_BITS {
                        scratch.assign(acc.square_ref());
                        acc.assign(&scratch % n_sq);
                    }
                }
            }
            let shift = w * WINDOW_BITS;
            for (row, &s) in self.tables.iter().zip(&scalars) {
                let digit = ((s.unsigned_abs() >> shift) & TABLE_LEN as u64) as usize;
                if digit == 0 {
                    continue;
                }
                let acc = if s > 0 { &mut pos } else { &mut neg };
                scratch.assign(&*acc * &row[digit - 1]);
                acc.assign(&scratch % n_sq);
            }
        }
        finish(&self.pk, pos, neg)
    }
}

fn check_lengths(query: usize, doc: usize) -> Result<()> {
    if query != doc {
        return Err(Error::domain(format!("query has {query} coordinates, document {doc}")));
    }
    Ok(())
}

fn finish(pk: &PublicKey, pos: Integer, neg: Integer) -> Result<HECiphertext> {
    let n_sq = pk.modulus_sq();
    let inv = neg.invert(n_sq).map_err(|_| Error::protocol("ciphertext not invertible mod N²"))?;
    Ok(HECiphertext(pos * inv % n_sq))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp::sample_direction;
    use crate::embedding::dot;
    use crate::he::tests::test_keys;
    use crate::he::DEFAULT_SCALE_BITS;
    use crate::rng::RandomSource;

    /// The literal definition: fold of `scalar_mul(c_i, encode(d_i))` under `add`.
    fn reference_dot(pk: &PublicKey, codec: &FixedPointCodec, enc: &[HECiphertext], doc: &[f64]) -> HECiphertext {
        enc.iter().zip(doc).fold(pk.zero(), |acc, (c, &d)| {
            let s = codec.encode(d).unwrap();
            pk.add(&acc, &pk.scalar_mul(c, &s).unwrap())
        })
    }

    /// Plaintext integer oracle `Σ encode(q_i)·encode(d_i) mod N`.
    fn integer_dot(codec: &FixedPointCodec, q: &[f64], d: &[f64]) -> Integer {
        let sum = q.iter().zip(d).fold(Integer::ZERO, |acc, (&a, &b)| {
            acc + codec.quantize(a).unwrap() * codec.quantize(b).unwrap()
        });
        codec.reduce(sum)
    }

    fn encrypt_all(q: &[f64], codec: &FixedPointCodec, rng: &mut RandomSource) -> Vec<HECiphertext> {
        let keys = test_keys();
        q.iter().map(|&x| keys.encrypt(&codec.encode(x).unwrap(), rng).unwrap()).collect()
    }

    #[test]
    fn all_paths_agree_exactly() {
        let keys = test_keys();
        let pk = &keys.public;
        let mut rng = RandomSource::from_seed(21);
        let n = 24;
        let codec = FixedPointCodec::new(DEFAULT_SCALE_BITS, pk.modulus(), n).unwrap();
        let q = sample_direction(n, &mut rng).unwrap();
        let enc = encrypt_all(&q, &codec, &mut rng);
        let prepared = PreparedQuery::new(pk, &enc);
        for _ in 0..10 {
            let d = sample_direction(n, &mut rng).unwrap();
            let want = integer_dot(&codec, &q, &d);
            assert_eq!(keys.decrypt(&enc_dot(pk, &codec, &enc, &d).unwrap()), want);
            assert_eq!(keys.decrypt(&prepared.dot(&codec, &d).unwrap()), want);
            assert_eq!(keys.decrypt(&reference_dot(pk, &codec, &enc, &d)), want);
        }
    }

    #[test]
    fn self_and_orthogonal_dots() {
        let keys = test_keys();
        let pk = &keys.public;
        let mut rng = RandomSource::from_seed(22);
        let codec = FixedPointCodec::new(DEFAULT_SCALE_BITS, pk.modulus(), 3).unwrap();
        let q = [0.6, 0.0, -0.8];
        let enc = encrypt_all(&q, &codec, &mut rng);
        let prepared = PreparedQuery::new(pk, &enc);
        let same = codec.decode_product(&keys.decrypt(&prepared.dot(&codec, &q).unwrap()));
        assert!((same - 1.0).abs() < 2f64.powi(-30));
        let ortho = [0.8, 0.0, 0.6];
        let zero = codec.decode_product(&keys.decrypt(&prepared.dot(&codec, &ortho).unwrap()));
        assert!(zero.abs() < 2f64.powi(-30));
    }

    #[test]
    fn decoded_dot_is_close_to_float_dot() {
        let keys = test_keys();
        let pk = &keys.public;
        let mut rng = RandomSource::from_seed(23);
        let n = 64;
        let codec = FixedPointCodec::new(DEFAULT_SCALE_BITS, pk.modulus(), n).unwrap();
        let q = sample_direction(n, &mut rng).unwrap();
        let enc = encrypt_all(&q, &codec, &mut rng);
        let prepared = PreparedQuery::new(pk, &enc);
        for _ in 0..20 {
            let d = sample_direction(n, &mut rng).unwrap();
            let got = codec.decode_product(&keys.decrypt(&prepared.dot(&codec, &d).unwrap()));
            assert!((got - dot(&q, &d)).abs() <= n as f64 * 2f64.powi(-40));
        }
    }

    #[test]
    fn length_mismatch() {
        let keys = test_keys();
        let pk = &keys.public;
        let mut rng = RandomSource::from_seed(24);
        let codec = FixedPointCodec::new(DEFAULT_SCALE_BITS, pk.modulus(), 3).unwrap();
        let enc = encrypt_all(&[1.0, 0.0, 0.0], &codec, &mut rng);
        assert!(enc_dot(pk, &codec, &enc, &[1.0, 0.0]).is_err());
        assert!(PreparedQuery::new(pk, &enc).dot(&codec, &[1.0]).is_err());
    }

    #[test]
    fn zero_document_gives_zero() {
        let keys = test_keys();
        let pk = &keys.public;
        let mut rng = RandomSource::from_seed(25);
        let codec = FixedPointCodec::new(DEFAULT_SCALE_BITS, pk.modulus(), 2).unwrap();
        let enc = encrypt_all(&[0.6, 0.8], &codec, &mut rng);
        let c = PreparedQuery::new(pk, &enc).dot(&codec, &[0.0, 0.0]).unwrap();
        assert_eq!(keys.decrypt(&c), 0);
    }
}
