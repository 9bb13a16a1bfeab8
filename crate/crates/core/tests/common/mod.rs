#![allow(dead_code)]

use std::collections::HashMap;
use std::sync::{Arc, OnceLock};

use prk_core::bench::gen_uniform_corpus;
use prk_core::he::{keygen, HEKeyPair, KeyPolicy};
use prk_core::ot::OtGroup;
use prk_core::protocol::wire::{Message, Phase1};
use prk_core::protocol::{ClientConfig, CloudConfig, CloudSession, Loopback, Privacy, Transcript};
use prk_core::store::Store;
use prk_core::RandomSource;

pub fn test_keys() -> &'static HEKeyPair {
    static KEYS: OnceLock<HEKeyPair> = OnceLock::new();
    KEYS.get_or_init(|| keygen(1024, KeyPolicy::Test, &mut RandomSource::from_seed(101)).unwrap())
}

pub fn loopback(store: &Arc<Store>, seed: u64) -> Loopback {
    Loopback::new(CloudSession::new(Arc::clone(store), CloudConfig::for_tests(), RandomSource::from_seed(seed)))
}

pub fn corpus(n_docs: usize, dim: usize, seed: u64) -> Arc<Store> {
    Arc::new(gen_uniform_corpus(n_docs, dim, seed).unwrap())
}

pub fn client(k: usize, privacy: Privacy, store: &Store) -> ClientConfig {
    ClientConfig::new(k, privacy, store.len()).with_ot_group(OtGroup::test_256())
}

pub fn text_ids(store: &Store) -> HashMap<Vec<u8>, u64> {
    (0..store.len()).map(|row| (store.text(row).to_vec(), store.ids()[row])).collect()
}

pub fn phase1_of(transcript: &Transcript) -> Phase1 {
    let frame = transcript.to_cloud().next().expect("a PHASE1 frame");
    match Message::decode(frame).unwrap() {
        Message::Phase1(p) => p,
        other => panic!("first message is {other:?}"),
    }
}

/// Whether the top-`k′` of the perturbed embedding contains the true top-`k`.
pub fn inclusion_holds(store: &Store, query: &[f64], perturbed: &[f64], k: usize, k_prime: usize) -> bool {
    let candidates = store.top_k(perturbed, k_prime).unwrap().ids();
    store.top_k(query, k).unwrap().ids().iter().all(|id| candidates.contains(id))
}

/// Two-sample Kolmogorov–Smirnov statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let ne = (n * m / (n + m)).sqrt();
    let lambda = (ne + 0.12 + 0.11 / ne) * d;
    let p = (1..=100)
        .map(|k| {
            let k = k as f64;
            let sign = if k as u64 % 2 == 1 { 2.0 } else { -2.0 };
            sign * (-2.0 * k * k * lambda * lambda).exp()
        })
        .sum::<f64>()
        .clamp(0.0, 1.0);
    (d, p)
}

/// Random orthogonal matrix as a product of Householder reflections.
pub struct Rotation(Vec<Vec<f64>>);

impl Rotation {
    pub fn random(dim: usize, rng: &mut RandomSource) -> Self {
        let reflections = (0..dim)
            .map(|_| prk_core::dp::sample_direction(dim, rng).unwrap().into_inner())
            .collect();
        Self(reflections)
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        for u in &self.0 {
            let proj: f64 = u.iter().zip(&y).map(|(a, b)| a * b).sum();
            for (yi, ui) in y.iter_mut().zip(u) {
                *yi -= 2.0 * proj * ui;
            }
        }
        y
    }
}
