use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;
use std::time::{Duration, Instant};

use super::wire::{EncryptedQuery, Frame, Info, Message, Phase1, Phase1Reply};
use super::SCALE_BITS;
use crate::error::{Error, Result};
use crate::he::{FixedPointCodec, HECiphertext, PreparedQuery, PublicKey};
use crate::ot::{ot_sender_encrypt, ot_sender_init, OtGroup, OtSenderState};
use crate::rng::RandomSource;
use crate::store::Store;

#[derive(Clone, Debug)]
pub struct CloudConfig {
    pub ot_group: OtGroup,
    /// Smallest Paillier modulus the cloud will compute under.
    pub min_key_bits: u32,
}

impl Default for CloudConfig {
    fn default() -> Self {
        Self { ot_group: OtGroup::modp_2048(), min_key_bits: 2048 }
    }
}

impl CloudConfig {
    /// Test group and 1024-bit keys.
    pub fn for_tests() -> Self {
        Self { ot_group: OtGroup::test_256(), min_key_bits: 1024 }
    }
}

#[derive(Debug)]
enum State {
    Idle,
    AwaitEncQuery { candidates: Vec<usize>, k: usize, request_ot: bool },
    AwaitFetch { candidates: Vec<usize>, k: usize, sender: Option<OtSenderState> },
}

/// Cloud side of one connection. Sessions run one after another; a session
/// that fails answers with ERROR and resets to idle.
#[derive(Debug)]
pub struct CloudSession {
    store: Arc<Store>,
    config: CloudConfig,
    rng: RandomSource,
    state: State,
    timings: BTreeMap<&'static str, Duration>,
}

impl CloudSession {
    pub fn new(store: Arc<Store>, config: CloudConfig, rng: RandomSource) -> Self {
        Self { store, config, rng, state: State::Idle, timings: BTreeMap::new() }
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    /// Accumulated compute time per phase.
    pub fn timings(&self) -> &BTreeMap<&'static str, Duration> {
        &self.timings
    }

    pub fn reset_timings(&mut self) {
        self.timings.clear();
    }

    /// Replies to one frame. Errors are reported to the peer, not returned.
    pub fn handle(&mut self, frame: &Frame) -> Vec<Frame> {
        match self.try_handle(frame) {
            Ok(messages) => messages.iter().map(Message::encode).collect(),
            Err(err) => {
                self.state = State::Idle;
                vec![Message::error(&err).encode()]
            }
        }
    }

    fn time(&mut self, phase: &'static str, started: Instant) {
        *self.timings.entry(phase).or_default() += started.elapsed();
    }

    fn try_handle(&mut self, frame: &Frame) -> Result<Vec<Message>> {
        let msg = Message::decode(frame)?;
        let state = std::mem::replace(&mut self.state, State::Idle);
        match (state, msg) {
            (state, Message::Hello) => {
                self.state = state;
                Ok(vec![Message::Info(Info {
                    corpus_size: self.store.len() as u64,
                    dim: self.store.dim() as u32,
                    ot_prime: self.config.ot_group.prime().clone(),
                    ot_generator: self.config.ot_group.generator().clone(),
                })])
            }
            (State::Idle, Message::Phase1(p)) => self.phase1(p),
            (State::AwaitEncQuery { candidates, k, request_ot }, Message::EncQuery(q)) => {
                let mut out = vec![Message::Phase1Reply(Phase1Reply {
                    scores: self.score(&candidates, &q)?,
                    ot_public: None,
                })];
                let sender = request_ot.then(|| ot_sender_init(&self.config.ot_group, &mut self.rng));
                if let Some(s) = &sender {
                    out.push(Message::OtInit(s.public().clone()));
                }
                self.state = State::AwaitFetch { candidates, k, sender };
                Ok(out)
            }
            (State::AwaitFetch { candidates, k, .. }, Message::FetchDirect(positions)) => {
                let started = Instant::now();
                if positions.len() != k {
                    return Err(Error::protocol(format!("expected {k} positions, got {}", positions.len())));
                }
                let mut seen = HashSet::new();
                let mut texts = Vec::with_capacity(k);
                for &p in &positions {
                    let p = p as usize;
                    if p == 0 || p > candidates.len() {
                        return Err(Error::protocol(format!("position {p} outside [1, {}]", candidates.len())));
                    }
                    if !seen.insert(p) {
                        return Err(Error::protocol(format!("position {p} requested twice")));
                    }
                    texts.push(self.store.text(candidates[p - 1]).to_vec());
                }
                self.time("fetch", started);
                Ok(vec![Message::Documents(texts)])
            }
            (State::AwaitFetch { candidates, sender: Some(sender), .. }, Message::OtBlinded(blinded)) => {
                let started = Instant::now();
                if blinded.len() != candidates.len() {
                    return Err(Error::protocol(format!(
                        "expected {} blinded values, got {}",
                        candidates.len(),
                        blinded.len()
                    )));
                }
                let texts: Vec<Vec<u8>> = candidates.iter().map(|&row| self.store.text(row).to_vec()).collect();
                let wrapped = ot_sender_encrypt(&self.config.ot_group, &sender, &blinded, &texts)?;
                self.time("ot_sender", started);
                Ok(vec![Message::OtWrapped(wrapped)])
            }
            (state, msg) => Err(Error::State(format!(
                "unexpected message {:#04x} in state {}",
                msg.tag(),
                match state {
                    State::Idle => "idle",
                    State::AwaitEncQuery { .. } => "awaiting encrypted query",
                    State::AwaitFetch { .. } => "awaiting fetch",
                }
            ))),
        }
    }

    fn phase1(&mut self, p: Phase1) -> Result<Vec<Message>> {
        let total = self.store.len();
        let dim = self.store.dim();
        if p.dim as usize != dim {
            return Err(Error::protocol(format!("query dimension {} != store dimension {dim}", p.dim)));
        }
        let k = p.k as usize;
        if k == 0 || k > total {
            return Err(Error::protocol(format!("k = {k} outside [1, {total}]")));
        }
        if !p.private {
            let embedding = p.embedding.ok_or_else(|| Error::protocol("non-private query without embedding"))?;
            if p.encrypted.is_some() || p.request_ot {
                return Err(Error::protocol("non-private query with encryption or OT"));
            }
            let started = Instant::now();
            let top = self.store.top_k(&embedding, k)?;
            let texts = top.iter().map(|c| self.store.text(self.store.row_of(c.id).expect("ranked id")).to_vec());
            let texts = texts.collect();
            self.time("candidate_search", started);
            return Ok(vec![Message::Documents(texts)]);
        }

        let k_prime = (p.k_prime as usize).min(total);
        if k_prime < k {
            return Err(Error::protocol(format!("k′ = {k_prime} below k = {k}")));
        }
        let started = Instant::now();
        let candidates: Vec<usize> = match &p.embedding {
            Some(e) => self.store.top_k(e, k_prime)?.iter().map(|c| self.store.row_of(c.id).expect("ranked id")).collect(),
            None if k_prime == total => (0..total).collect(),
            None => return Err(Error::protocol("a query without embedding must cover the whole corpus")),
        };
        self.time("candidate_search", started);

        match p.encrypted {
            Some(q) => {
                let scores = self.score(&candidates, &q)?;
                let sender = p.request_ot.then(|| ot_sender_init(&self.config.ot_group, &mut self.rng));
                let ot_public = sender.as_ref().map(|s| s.public().clone());
                self.state = State::AwaitFetch { candidates, k, sender };
                Ok(vec![Message::Phase1Reply(Phase1Reply { scores, ot_public })])
            }
            None => {
                self.state = State::AwaitEncQuery { candidates, k, request_ot: p.request_ot };
                Ok(Vec::new())
            }
        }
    }

    /// Encrypted inner products with each candidate, in candidate order.
    fn score(&mut self, candidates: &[usize], q: &EncryptedQuery) -> Result<Vec<rug::Integer>> {
        let started = Instant::now();
        let pk = PublicKey::from_modulus(q.modulus.clone())?;
        if pk.bits() < self.config.min_key_bits {
            return Err(Error::protocol(format!(
                "{}-bit key below the {}-bit minimum",
                pk.bits(),
                self.config.min_key_bits
            )));
        }
        if q.ciphertexts.len() != self.store.dim() {
            return Err(Error::protocol(format!(
                "{} ciphertexts for dimension {}",
                q.ciphertexts.len(),
                self.store.dim()
            )));
        }
        let cts = q
            .ciphertexts
            .iter()
            .map(|c| HECiphertext::from_wire(&pk, c.clone()))
            .collect::<Result<Vec<_>>>()?;
        let codec = FixedPointCodec::new(SCALE_BITS, pk.modulus(), self.store.dim())?;
        let prepared = PreparedQuery::new(&pk, &cts);
        let scores = candidates
            .iter()
            .map(|&row| prepared.dot(&codec, self.store.embedding(row)).map(|c| c.value().clone()))
            .collect::<Result<Vec<_>>>()?;
        self.time("encrypted_dot", started);
        Ok(scores)
    }
}
