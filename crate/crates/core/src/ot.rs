//! `k`-out-of-`k′` oblivious transfer in a prime-order subgroup of `ℤ*_p`.
//!
//! 1. The sender draws `a` and publishes `A = g^a`.
//! 2. The receiver sends `B_i = A^{c_i}·g^{b_i}` for every position, with
//!    `c_i = 0` on its `k` chosen positions and `1` elsewhere.
//! 3. The sender wraps message `i` under `Hash(B_i^a)`.
//! 4. The receiver can rebuild `Hash(A^{b_i}) = Hash(g^{a·b_i})` only where
//!    `c_i = 0`; elsewhere the sender used `g^{a(a+b_i)}`.
//!
//! Sender privacy holds against a semi-honest receiver only: a receiver that
//! sets `c_i = 0` everywhere opens every message.
//!
//! Messages are wrapped with a SHA-256 counter keystream and a 16-byte tag
//! `SHA-256(key ∥ 0xFF ∥ ciphertext)[..16]`, which also tells the receiver
//! which positions it cannot open.

use std::collections::BTreeSet;

use rug::Integer;
use sha2::{Digest, Sha256};

use crate::bigint::{self, random_range};
use crate::error::{Error, Result};
use crate::rng::RandomSource;

pub const TAG_LEN: usize = 16;
const KEY_LEN: usize = 32;
const PRIMALITY_REPS: u32 = 30;

/// RFC 3526 group 14: 2048-bit safe prime; `g = 2` generates the subgroup of
/// order `(p − 1)/2`.
const MODP_2048_HEX: &str = concat!(
    "FFFFFFFFFFFFFFFFC90FDAA22168C234C4C6628B80DC1CD1",
    "29024E088A67CC74020BBEA63B139B22514A08798E3404DD",
    "EF9519B3CD3A431B302B0A6DF25F14374FE1356D6D51C245",
    "E485B576625E7EC6F44C42E9A637ED6B0BFF5CB6F406B7ED",
    "EE386BFB5A899FA5AE9F24117C4B1FE649286651ECE45B3D",
    "C2007CB8A163BF0598DA48361C55D39A69163FA8FD24CF5F",
    "83655D23DCA3AD961C62F356208552BB9ED529077096966D",
    "670C354E4ABC9804F1746C08CA18217C32905E462E36CE3B",
    "E39E772C180E86039B2783A2EC07A28FB5C55DF06F4C52C9",
    "DE2BCBF6955817183995497CEA956AE515D2261898FA0510",
    "15728E5A8AACAA68FFFFFFFFFFFFFFFF",
);

/// 256-bit safe prime for tests. `p ≡ 3 (mod 8)`, so 2 is a non-residue and
/// the subgroup generator is 4.
const TEST_256_HEX: &str = "B0A844E44B0F7CD6B9379E6B0E77C0F1E76F4A1BE6E794A66911F0EC0BD3362B";

/// Shared public parameters `(p, g)`; the hash is fixed to SHA-256.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OtGroup {
    prime: Integer,
    generator: Integer,
    /// Exponents are drawn from `[1, exponent_bound)`.
    exponent_bound: Integer,
}

impl OtGroup {
    pub fn modp_2048() -> Self {
        let prime = Integer::from_str_radix(MODP_2048_HEX, 16).expect("constant");
        Self::from_safe_prime(prime, Integer::from(2))
    }

    pub fn test_256() -> Self {
        let prime = Integer::from_str_radix(TEST_256_HEX, 16).expect("constant");
        Self::from_safe_prime(prime, Integer::from(4))
    }

    fn from_safe_prime(prime: Integer, generator: Integer) -> Self {
        let exponent_bound = Integer::from(&prime - 1) >> 1;
        Self { prime, generator, exponent_bound }
    }

    /// Custom parameters. `p` must be prime and `1 < g < p`; exponents are
    /// drawn below `(p − 1)/2`.
    pub fn new(prime: Integer, generator: Integer) -> Result<Self> {
        if prime < 5 || prime.is_probably_prime(PRIMALITY_REPS) == rug::integer::IsPrime::No {
            return Err(Error::domain("OT modulus must be prime"));
        }
        if generator <= 1 || generator >= prime {
            return Err(Error::domain("OT generator must satisfy 1 < g < p"));
        }
        Ok(Self::from_safe_prime(prime, generator))
    }

    pub fn prime(&self) -> &Integer {
        &self.prime
    }

    pub fn generator(&self) -> &Integer {
        &self.generator
    }

    fn pow(&self, base: &Integer, exp: &Integer) -> Integer {
        Integer::from(base.pow_mod_ref(exp, &self.prime).expect("prime modulus"))
    }

    fn random_exponent(&self, rng: &mut RandomSource) -> Integer {
        random_range(rng, &Integer::from(1), &self.exponent_bound)
    }

    fn check_element(&self, x: &Integer, what: &str) -> Result<()> {
        if *x <= 1 || *x >= self.prime {
            return Err(Error::protocol(format!("{what} outside (1, p)")));
        }
        Ok(())
    }
}

/// Sender secret `a` and public value `A = g^a mod p`.
#[derive(Clone, Debug)]
pub struct OtSenderState {
    secret: Integer,
    public: Integer,
}

impl OtSenderState {
    pub fn from_secret(group: &OtGroup, secret: Integer) -> Self {
        let public = group.pow(&group.generator, &secret);
        Self { secret, public }
    }

    /// `A`, sent to the receiver.
    pub fn public(&self) -> &Integer {
        &self.public
    }
}

pub fn ot_sender_init(group: &OtGroup, rng: &mut RandomSource) -> OtSenderState {
    loop {
        let state = OtSenderState::from_secret(group, group.random_exponent(rng));
        if state.public > 1 {
            return state;
        }
    }
}

/// Receiver choices (1-based positions) and blinding exponents `b_i`.
#[derive(Clone, Debug)]
pub struct OtReceiverState {
    chosen: BTreeSet<usize>,
    blinding: Vec<Integer>,
    sender_public: Integer,
}

impl OtReceiverState {
    /// Receiver with caller-supplied blinding exponents, one per position.
    pub fn with_blinding(
        group: &OtGroup,
        sender_public: &Integer,
        chosen: &[usize],
        blinding: Vec<Integer>,
    ) -> Result<(Self, Vec<Integer>)> {
        group.check_element(sender_public, "sender value A")?;
        let k_prime = blinding.len();
        let mut set = BTreeSet::new();
        for &pos in chosen {
            if pos == 0 || pos > k_prime {
                return Err(Error::domain(format!("position {pos} outside [1, {k_prime}]")));
            }
            if !set.insert(pos) {
                return Err(Error::domain(format!("position {pos} chosen twice")));
            }
        }
        let blinded = blinding
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let g_b = group.pow(&group.generator, b);
                if set.contains(&(i + 1)) {
                    g_b
                } else {
                    (g_b * sender_public) % &group.prime
                }
            })
            .collect();
        let state = Self { chosen: set, blinding, sender_public: sender_public.clone() };
        Ok((state, blinded))
    }

    pub fn chosen(&self) -> impl Iterator<Item = usize> + '_ {
        self.chosen.iter().copied()
    }

    pub fn k_prime(&self) -> usize {
        self.blinding.len()
    }

    /// `Hash(A^{b_i})` for a position, whether or not it was chosen.
    pub fn candidate_key(&self, group: &OtGroup, position: usize) -> [u8; KEY_LEN] {
        derive_key(&group.pow(&self.sender_public, &self.blinding[position - 1]))
    }
}

/// Builds the receiver's `B` list for `chosen` among `k_prime` positions.
pub fn ot_receiver_choose(
    group: &OtGroup,
    sender_public: &Integer,
    chosen: &[usize],
    k_prime: usize,
    rng: &mut RandomSource,
) -> Result<(OtReceiverState, Vec<Integer>)> {
    if chosen.len() > k_prime {
        return Err(Error::domain(format!("{} choices exceed k′ = {k_prime}", chosen.len())));
    }
    let blinding = (0..k_prime).map(|_| group.random_exponent(rng)).collect();
    OtReceiverState::with_blinding(group, sender_public, chosen, blinding)
}

/// Wraps message `i` under `Hash(B_i^a mod p)`; output order follows input.
pub fn ot_sender_encrypt(
    group: &OtGroup,
    sender: &OtSenderState,
    blinded: &[Integer],
    messages: &[Vec<u8>],
) -> Result<Vec<WrappedMessage>> {
    if blinded.len() != messages.len() {
        return Err(Error::domain(format!(
            "{} blinded values for {} messages",
            blinded.len(),
            messages.len()
        )));
    }
    blinded
        .iter()
        .zip(messages)
        .map(|(b, m)| {
            if *b <= 0 || *b >= group.prime {
                return Err(Error::protocol("blinded value outside (0, p)"));
            }
            let key = derive_key(&group.pow(b, &sender.secret));
            Ok(wrap(&key, m))
        })
        .collect()
}

/// Opens every chosen position, in ascending position order.
pub fn ot_receiver_decrypt(
    group: &OtGroup,
    receiver: &OtReceiverState,
    wrapped: &[WrappedMessage],
) -> Result<Vec<(usize, Vec<u8>)>> {
    if wrapped.len() != receiver.k_prime() {
        return Err(Error::protocol(format!(
            "expected {} wrapped messages, got {}",
            receiver.k_prime(),
            wrapped.len()
        )));
    }
    receiver
        .chosen()
        .map(|pos| {
            let key = receiver.candidate_key(group, pos);
            unwrap(&key, &wrapped[pos - 1]).map(|m| (pos, m)).ok_or(Error::Corruption(pos))
        })
        .collect()
}

/// `SHA-256` of the minimal big-endian encoding of a group element.
pub fn derive_key(element: &Integer) -> [u8; KEY_LEN] {
    Sha256::digest(bigint::to_be_bytes(element)).into()
}

/// Ciphertext plus verification tag; on the wire `u32 len ∥ ciphertext ∥ tag`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WrappedMessage {
    pub ciphertext: Vec<u8>,
    pub tag: [u8; TAG_LEN],
}

impl WrappedMessage {
    pub fn encoded_len(&self) -> usize {
        4 + self.ciphertext.len() + TAG_LEN
    }

    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.ciphertext.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.ciphertext);
        out.extend_from_slice(&self.tag);
    }

    /// Parses one message from the front of `bytes`, returning the rest.
    pub fn read_from(bytes: &[u8]) -> Result<(Self, &[u8])> {
        let (len, rest) = bytes
            .split_first_chunk::<4>()
            .ok_or_else(|| Error::malformed("truncated wrapped-message length"))?;
        let len = u32::from_be_bytes(*len) as usize;
        if rest.len() < len + TAG_LEN {
            return Err(Error::malformed("truncated wrapped message"));
        }
        let (ciphertext, rest) = rest.split_at(len);
        let (tag, rest) = rest.split_at(TAG_LEN);
        let tag = tag.try_into().expect("split at TAG_LEN");
        Ok((Self { ciphertext: ciphertext.to_vec(), tag }, rest))
    }
}

fn keystream_xor(key: &[u8; KEY_LEN], data: &[u8]) -> Vec<u8> {
    data.chunks(KEY_LEN)
        .enumerate()
        .flat_map(|(counter, chunk)| {
            let block = Sha256::new()
                .chain_update(key)
                .chain_update((counter as u32).to_be_bytes())
                .finalize();
            chunk.iter().zip(block).map(|(d, k)| d ^ k).collect::<Vec<_>>()
        })
        .collect()
}

fn tag_for(key: &[u8; KEY_LEN], ciphertext: &[u8]) -> [u8; TAG_LEN] {
    let digest = Sha256::new().chain_update(key).chain_update([0xFF]).chain_update(ciphertext).finalize();
    digest[..TAG_LEN].try_into().expect("digest longer than tag")
}

pub fn wrap(key: &[u8; KEY_LEN], message: &[u8]) -> WrappedMessage {
    let ciphertext = keystream_xor(key, message);
    let tag = tag_for(key, &ciphertext);
    WrappedMessage { ciphertext, tag }
}

/// `None` when the tag does not verify under `key`.
pub fn unwrap(key: &[u8; KEY_LEN], wrapped: &WrappedMessage) -> Option<Vec<u8>> {
    let expected = tag_for(key, &wrapped.ciphertext);
    // Constant-time compare.
    let diff = expected.iter().zip(&wrapped.tag).fold(0u8, |acc, (a, b)| acc | (a ^ b));
    (diff == 0).then(|| keystream_xor(key, &wrapped.ciphertext))
}
