//! Seedable randomness.
//!
//! Every randomized operation takes a [`RandomSource`]. Protocol use draws
//! the seed from the OS; tests and golden transcripts pin it, either directly
//! or through the `PRK_TEST_SEED` environment variable.

use rand::{CryptoRng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub const SEED_ENV_VAR: &str = "PRK_TEST_SEED";

#[derive(Clone, Debug)]
pub struct RandomSource(ChaCha20Rng);

impl RandomSource {
    pub fn from_seed(seed: u64) -> Self {
        Self(ChaCha20Rng::seed_from_u64(seed))
    }

    pub fn from_entropy() -> Self {
        Self(ChaCha20Rng::from_os_rng())
    }

    /// Seeded from `PRK_TEST_SEED` when set and parseable, OS entropy otherwise.
    pub fn from_env_or_entropy() -> Self {
        match env_seed() {
            Some(seed) => Self::from_seed(seed),
            None => Self::from_entropy(),
        }
    }

    /// An independent stream derived from this one, e.g. one per trial.
    pub fn fork(&mut self) -> Self {
        Self(ChaCha20Rng::seed_from_u64(self.0.next_u64()))
    }
}

pub fn env_seed() -> Option<u64> {
    std::env::var(SEED_ENV_VAR).ok()?.trim().parse().ok()
}

impl RngCore for RandomSource {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}

impl CryptoRng for RandomSource {}
