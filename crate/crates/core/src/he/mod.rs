//! Paillier additively homomorphic encryption.
//!
//! Plaintexts live in `ℤ_N`, ciphertexts in `ℤ*_{N²}`, and the generator is
//! fixed at `N + 1`. Ciphertext multiplication adds plaintexts; raising a
//! ciphertext to a plaintext scalar multiplies. That is all an encrypted dot
//! product against a plaintext vector needs.

mod codec;
mod dot;

pub use codec::{FixedPointCodec, DEFAULT_SCALE_BITS};
pub use dot::{enc_dot, PreparedQuery};

use rug::ops::RemRounding;
use rug::{Complete, Integer};

use crate::bigint::{self, random_below, random_bits};
use crate::error::{Error, Result};
use crate::rng::RandomSource;

const PRIME_RETRIES: usize = 64;
const PRIMALITY_REPS: u32 = 40;

/// Whether sub-production key sizes are acceptable.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KeyPolicy {
    /// 2048 or 3072-bit moduli only.
    Production,
    /// Additionally allows 1024-bit moduli for fast tests.
    Test,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PublicKey {
    modulus: Integer,
    generator: Integer,
    modulus_sq: Integer,
}

#[derive(Clone, Debug)]
pub struct SecretKey {
    lambda: Integer,
    mu: Integer,
    p: Integer,
    q: Integer,
    crt: Crt,
}

/// Precomputed values for CRT encryption and decryption.
#[derive(Clone, Debug)]
struct Crt {
    p_sq: Integer,
    q_sq: Integer,
    /// `N mod p(p−1)` and `N mod q(q−1)`: exponents for `r^N` in each half.
    exp_p: Integer,
    exp_q: Integer,
    /// `(q²)⁻¹ mod p²`.
    q_sq_inv: Integer,
    /// `L_p(g^{p−1} mod p²)⁻¹ mod p` and the q analogue.
    h_p: Integer,
    h_q: Integer,
    /// `q⁻¹ mod p`.
    q_inv: Integer,
}

#[derive(Clone, Debug)]
pub struct HEKeyPair {
    pub public: PublicKey,
    pub secret: SecretKey,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HECiphertext(Integer);

impl HECiphertext {
    pub fn value(&self) -> &Integer {
        &self.0
    }

    /// Wraps a received value after checking it is a unit mod `N²`.
    pub fn from_wire(pk: &PublicKey, value: Integer) -> Result<Self> {
        if value <= 0 || value >= pk.modulus_sq {
            return Err(Error::protocol("ciphertext outside (0, N²)"));
        }
        if Integer::from(value.gcd_ref(&pk.modulus)) != 1 {
            return Err(Error::protocol("ciphertext not coprime with N"));
        }
        Ok(Self(value))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        bigint::to_be_bytes(&self.0)
    }
}

impl PublicKey {
    /// Rebuilds a public key from its modulus; the generator is always `N + 1`.
    pub fn from_modulus(modulus: Integer) -> Result<Self> {
        if modulus < 15 || modulus.is_even() {
            return Err(Error::malformed("Paillier modulus must be odd and composite"));
        }
        let generator = Integer::from(&modulus + 1);
        let modulus_sq = Integer::from(modulus.square_ref());
        Ok(Self { modulus, generator, modulus_sq })
    }

    pub fn modulus(&self) -> &Integer {
        &self.modulus
    }

    pub fn generator(&self) -> &Integer {
        &self.generator
    }

    pub fn modulus_sq(&self) -> &Integer {
        &self.modulus_sq
    }

    pub fn bits(&self) -> u32 {
        self.modulus.significant_bits()
    }

    fn check_plaintext(&self, m: &Integer) -> Result<()> {
        if *m < 0 || *m >= self.modulus {
            return Err(Error::domain("plaintext outside [0, N)"));
        }
        Ok(())
    }

    fn random_unit(&self, rng: &mut RandomSource) -> Integer {
        loop {
            let r = random_below(rng, &self.modulus);
            if r > 0 && Integer::from(r.gcd_ref(&self.modulus)) == 1 {
                return r;
            }
        }
    }

    /// `(1 + m·N) · r^N mod N²`.
    pub fn encrypt(&self, m: &Integer, rng: &mut RandomSource) -> Result<HECiphertext> {
        self.check_plaintext(m)?;
        let r = self.random_unit(rng);
        let blind = r.pow_mod(&self.modulus, &self.modulus_sq).expect("positive modulus");
        Ok(HECiphertext(self.combine(m, blind)))
    }

    fn combine(&self, m: &Integer, blind: Integer) -> Integer {
        let mut c = Integer::from(m * &self.modulus);
        c += 1;
        c *= blind;
        c %= &self.modulus_sq;
        c
    }

    pub fn add(&self, a: &HECiphertext, b: &HECiphertext) -> HECiphertext {
        HECiphertext(Integer::from(&a.0 * &b.0) % &self.modulus_sq)
    }

    pub fn scalar_mul(&self, c: &HECiphertext, s: &Integer) -> Result<HECiphertext> {
        self.check_plaintext(s)?;
        let v = Integer::from(c.0.pow_mod_ref(s, &self.modulus_sq).expect("positive modulus"));
        Ok(HECiphertext(v))
    }

    /// Ciphertext of zero with no randomness; the identity for [`PublicKey::add`].
    pub fn zero(&self) -> HECiphertext {
        HECiphertext(Integer::from(1))
    }
}

impl SecretKey {
    pub fn lambda(&self) -> &Integer {
        &self.lambda
    }

    pub fn mu(&self) -> &Integer {
        &self.mu
    }

    pub fn primes(&self) -> (&Integer, &Integer) {
        (&self.p, &self.q)
    }

    /// Rebuilds the secret key from its prime factors.
    pub fn from_primes(p: Integer, q: Integer) -> Result<(PublicKey, SecretKey)> {
        if p == q || p < 3 || q < 3 {
            return Err(Error::KeyGeneration("primes must be distinct and odd".into()));
        }
        let modulus = Integer::from(&p * &q);
        let pk = PublicKey::from_modulus(modulus)?;
        let p1 = Integer::from(&p - 1);
        let q1 = Integer::from(&q - 1);
        let lambda = Integer::from(p1.lcm_ref(&q1));
        // With g = N + 1, L(g^λ mod N²) = λ mod N.
        let mu = Integer::from(&lambda % &pk.modulus)
            .invert(&pk.modulus)
            .map_err(|_| Error::KeyGeneration("λ not invertible mod N".into()))?;

        let p_sq = Integer::from(p.square_ref());
        let q_sq = Integer::from(q.square_ref());
        let exp_p = Integer::from(&pk.modulus % Integer::from(&p * &p1));
        let exp_q = Integer::from(&pk.modulus % Integer::from(&q * &q1));
        let q_sq_inv = Integer::from(q_sq.invert_ref(&p_sq).ok_or_else(not_coprime)?);
        let h = |prime: &Integer, prime_sq: &Integer, prime1: &Integer| -> Result<Integer> {
            let x = Integer::from(pk.generator.pow_mod_ref(prime1, prime_sq).ok_or_else(not_coprime)?);
            let l = (x - 1u32) / prime;
            l.invert(prime).map_err(|_| not_coprime())
        };
        let h_p = h(&p, &p_sq, &p1)?;
        let h_q = h(&q, &q_sq, &q1)?;
        let q_inv = Integer::from(q.invert_ref(&p).ok_or_else(not_coprime)?);
        let crt = Crt { p_sq, q_sq, exp_p, exp_q, q_sq_inv, h_p, h_q, q_inv };
        Ok((pk, SecretKey { lambda, mu, p, q, crt }))
    }

    /// `L(c^λ mod N²) · μ mod N`, the textbook decryption.
    pub fn decrypt_textbook(&self, pk: &PublicKey, c: &HECiphertext) -> Integer {
        let x = Integer::from(c.0.pow_mod_ref(&self.lambda, &pk.modulus_sq).expect("unit"));
        let l = (x - 1u32) / &pk.modulus;
        (l * &self.mu) % &pk.modulus
    }

    /// CRT decryption over `p²` and `q²`; same result as the textbook form.
    pub fn decrypt(&self, c: &HECiphertext) -> Integer {
        let crt = &self.crt;
        let half = |prime: &Integer, prime_sq: &Integer, h: &Integer| {
            let e = Integer::from(prime - 1);
            let x = Integer::from((&c.0 % prime_sq).complete().pow_mod_ref(&e, prime_sq).expect("unit"));
            let l = (x - 1u32) / prime;
            (l * h) % prime
        };
        let m_p = half(&self.p, &crt.p_sq, &crt.h_p);
        let m_q = half(&self.q, &crt.q_sq, &crt.h_q);
        let mut t = (m_p - &m_q) * &crt.q_inv;
        t = t.rem_euc(&self.p);
        m_q + t * &self.q
    }

    /// Encryption for the key owner: `r^N mod N²` is assembled from its
    /// residues mod `p²` and `q²`.
    pub fn encrypt(&self, pk: &PublicKey, m: &Integer, rng: &mut RandomSource) -> Result<HECiphertext> {
        pk.check_plaintext(m)?;
        let crt = &self.crt;
        let r = pk.random_unit(rng);
        let x_p = Integer::from((&r % &crt.p_sq).complete().pow_mod_ref(&crt.exp_p, &crt.p_sq).expect("unit"));
        let x_q = Integer::from((&r % &crt.q_sq).complete().pow_mod_ref(&crt.exp_q, &crt.q_sq).expect("unit"));
        let mut t = (x_p - &x_q) * &crt.q_sq_inv;
        t = t.rem_euc(&crt.p_sq);
        let blind = x_q + t * &crt.q_sq;
        Ok(HECiphertext(pk.combine(m, blind)))
    }
}

fn not_coprime() -> Error {
    Error::KeyGeneration("key components not coprime".into())
}

impl HEKeyPair {
    pub fn decrypt(&self, c: &HECiphertext) -> Integer {
        self.secret.decrypt(c)
    }

    pub fn encrypt(&self, m: &Integer, rng: &mut RandomSource) -> Result<HECiphertext> {
        self.secret.encrypt(&self.public, m, rng)
    }
}

/// Generates a Paillier key pair with a `bits`-bit modulus.
pub fn keygen(bits: u32, policy: KeyPolicy, rng: &mut RandomSource) -> Result<HEKeyPair> {
    match (bits, policy) {
        (2048 | 3072, _) | (1024, KeyPolicy::Test) => {}
        (1024, KeyPolicy::Production) => {
            return Err(Error::Config("1024-bit keys are allowed in test mode only".into()))
        }
        _ => return Err(Error::Config(format!("unsupported key size {bits}"))),
    }
    let half = bits / 2;
    for _ in 0..PRIME_RETRIES {
        let p = random_prime(half, rng)?;
        let q = random_prime(half, rng)?;
        if p == q {
            continue;
        }
        let n = Integer::from(&p * &q);
        if n.significant_bits() != bits {
            continue;
        }
        let (public, secret) = SecretKey::from_primes(p, q)?;
        return Ok(HEKeyPair { public, secret });
    }
    Err(Error::KeyGeneration(format!("no valid {bits}-bit modulus after {PRIME_RETRIES} attempts")))
}

/// Prime with exactly `bits` bits and the top two bits set, so a product of
/// two has exactly `2·bits` bits.
fn random_prime(bits: u32, rng: &mut RandomSource) -> Result<Integer> {
    for _ in 0..PRIME_RETRIES {
        let mut candidate = random_bits(rng, bits);
        candidate.set_bit(bits - 2, true);
        candidate.set_bit(0, true);
        let prime = candidate.next_prime();
        if prime.significant_bits() == bits
            && prime.is_probably_prime(PRIMALITY_REPS) != rug::integer::IsPrime::No
        {
            return Ok(prime);
        }
    }
    Err(Error::KeyGeneration(format!("no {bits}-bit prime after {PRIME_RETRIES} attempts")))
}

const KEY_FILE_MAGIC: &[u8; 4] = b"PRKK";
const KEY_FILE_VERSION: u32 = 1;

impl HEKeyPair {
    /// Key file: magic `PRKK`, `u32` version, then the modulus and both
    /// primes, each as `u32` length ∥ big-endian magnitude.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = KEY_FILE_MAGIC.to_vec();
        out.extend_from_slice(&KEY_FILE_VERSION.to_be_bytes());
        for v in [self.public.modulus(), &self.secret.p, &self.secret.q] {
            let bytes = bigint::to_be_bytes(v);
            out.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
            out.extend_from_slice(&bytes);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let rest = bytes
            .strip_prefix(KEY_FILE_MAGIC)
            .ok_or_else(|| Error::malformed("not a key file"))?;
        let (version, mut rest) = rest
            .split_first_chunk::<4>()
            .ok_or_else(|| Error::malformed("truncated key file"))?;
        if u32::from_be_bytes(*version) != KEY_FILE_VERSION {
            return Err(Error::malformed("unsupported key file version"));
        }
        let mut values = Vec::with_capacity(3);
        for _ in 0..3 {
            let (len, tail) = rest
                .split_first_chunk::<4>()
                .ok_or_else(|| Error::malformed("truncated key file"))?;
            let len = u32::from_be_bytes(*len) as usize;
            if tail.len() < len {
                return Err(Error::malformed("truncated key file"));
            }
            values.push(bigint::from_be_bytes(&tail[..len]));
            rest = &tail[len..];
        }
        if !rest.is_empty() {
            return Err(Error::malformed("trailing bytes in key file"));
        }
        let q = values.pop().expect("three values");
        let p = values.pop().expect("three values");
        let (public, secret) = SecretKey::from_primes(p, q)?;
        if *public.modulus() != values[0] {
            return Err(Error::malformed("key file modulus does not match its primes"));
        }
        Ok(Self { public, secret })
    }
}
