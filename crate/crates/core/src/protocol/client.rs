use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rug::Integer;

use super::wire::{EncryptedQuery, Frame, Message, Phase1, Phase1Reply};
use super::{ClientConfig, CostReport, Direction, Mode, Privacy, RetrievalPlan, Transcript, Transport, SCALE_BITS};
use crate::dp::{self, calibrate_epsilon};
use crate::embedding::NormalizedEmbedding;
use crate::error::{Error, Result};
use crate::geometry::{alpha_from_k, expanded_k_prime, leakage_route, mean_angle, PolarAngle, Route, SphereParams};
use crate::he::{FixedPointCodec, HECiphertext, HEKeyPair};
use crate::ot::{ot_receiver_choose, ot_receiver_decrypt, OtReceiverState};
use crate::rng::RandomSource;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum State {
    AwaitScores,
    AwaitOtInit,
    AwaitDocuments,
    AwaitWrapped,
    Done,
}

/// Client side of one retrieval.
#[derive(Debug)]
pub struct ClientSession {
    config: ClientConfig,
    plan: RetrievalPlan,
    keys: Option<HEKeyPair>,
    codec: Option<FixedPointCodec>,
    state: State,
    ranked: Vec<usize>,
    dots: Vec<f64>,
    ot_public: Option<Integer>,
    receiver: Option<OtReceiverState>,
    documents: Vec<Vec<u8>>,
    transcript: Transcript,
    timings: BTreeMap<&'static str, Duration>,
}

/// Outcome of a completed session.
#[derive(Clone, Debug)]
pub struct Retrieval {
    /// Documents in rank order.
    pub documents: Vec<Vec<u8>>,
    /// 1-based candidate positions in rank order.
    pub positions: Vec<usize>,
    pub plan: RetrievalPlan,
    pub report: CostReport,
    pub transcript: Transcript,
}

impl ClientSession {
    /// Plans the query and builds the first message(s): one PHASE1 when
    /// rounds are merged, PHASE1 then ENC_QUERY otherwise.
    pub fn open(
        query: &NormalizedEmbedding,
        config: ClientConfig,
        keys: Option<&HEKeyPair>,
        rng: &mut RandomSource,
    ) -> Result<(Self, Vec<Frame>)> {
        let n = query.dim();
        let total = config.corpus_size;
        if config.k == 0 || config.k > total {
            return Err(Error::Config(format!("k = {} outside [1, N = {total}]", config.k)));
        }
        if !(config.safety_factor.is_finite() && config.safety_factor > 0.0) {
            return Err(Error::Config(format!("safety factor {} must be positive", config.safety_factor)));
        }
        let params = SphereParams::new(n, total).map_err(|e| Error::Config(e.to_string()))?;
        let k = config.k;
        let alpha_k = alpha_from_k(params, k as f64)?;
        let omega = if alpha_k.radians() < std::f64::consts::FRAC_PI_2 {
            mean_angle(k, alpha_k)?
        } else {
            PolarAngle::ZERO
        };
        let mut timings = BTreeMap::new();

        let (plan, embedding) = match config.mode {
            Mode::PrivacyIgnorant => {
                let plan = RetrievalPlan {
                    k,
                    k_prime: k,
                    realized_delta_alpha: PolarAngle::ZERO,
                    alpha_k,
                    omega,
                    route: Route::Direct,
                    mode: config.mode,
                };
                (plan, Some(query.to_vec()))
            }
            Mode::PrivacyConscious => {
                if config.force_route == Some(Route::Direct) {
                    return Err(Error::Config("the privacy-conscious mode always uses OT".into()));
                }
                let plan = RetrievalPlan {
                    k,
                    k_prime: total,
                    realized_delta_alpha: PolarAngle::PI,
                    alpha_k,
                    omega,
                    route: Route::ObliviousTransfer,
                    mode: config.mode,
                };
                (plan, None)
            }
            Mode::Standard => {
                let started = Instant::now();
                let budget = match config.privacy {
                    Privacy::Epsilon(b) => b,
                    Privacy::TargetKPrime(t) | Privacy::ExactKPrime(t) => {
                        calibrate_epsilon(params, k, t).map_err(|e| Error::Config(e.to_string()))?
                    }
                };
                let (perturbed, sample) = dp::perturb(query, budget, rng)?;
                let delta = sample.realized_delta_alpha;
                let k_prime = match config.privacy {
                    Privacy::ExactKPrime(t) => t.clamp(k, total),
                    _ => expanded_k_prime(params, k, delta, config.safety_factor)?,
                };
                timings.insert("perturb", started.elapsed());
                let route = config.force_route.unwrap_or_else(|| leakage_route(omega, delta));
                let plan = RetrievalPlan {
                    k,
                    k_prime,
                    realized_delta_alpha: delta,
                    alpha_k,
                    omega,
                    route,
                    mode: config.mode,
                };
                (plan, Some(perturbed.into_inner()))
            }
        };

        let private = config.mode != Mode::PrivacyIgnorant;
        let (codec, encrypted) = if private {
            let keys = keys.ok_or_else(|| Error::Config("private modes need an HE key pair".into()))?;
            let started = Instant::now();
            let codec = FixedPointCodec::new(SCALE_BITS, keys.public.modulus(), n)?;
            let ciphertexts = query
                .iter()
                .map(|&x| Ok(keys.encrypt(&codec.encode(x)?, rng)?.value().clone()))
                .collect::<Result<Vec<_>>>()?;
            timings.insert("encrypt", started.elapsed());
            (Some(codec), Some(EncryptedQuery { modulus: keys.public.modulus().clone(), ciphertexts }))
        } else {
            (None, None)
        };

        let request_ot = plan.route == Route::ObliviousTransfer;
        let merged = config.merge_rounds;
        let (phase1_ct, separate_ct) = if merged { (encrypted, None) } else { (None, encrypted) };
        let mut messages = vec![Message::Phase1(Phase1 {
            dim: n as u32,
            embedding,
            k_prime: plan.k_prime as u32,
            k: k as u32,
            encrypted: phase1_ct,
            request_ot,
            private,
        })];
        if let Some(q) = separate_ct {
            messages.push(Message::EncQuery(q));
        }

        let mut session = Self {
            state: if private { State::AwaitScores } else { State::AwaitDocuments },
            config,
            plan,
            keys: if private { keys.cloned() } else { None },
            codec,
            ranked: Vec::new(),
            dots: Vec::new(),
            ot_public: None,
            receiver: None,
            documents: Vec::new(),
            transcript: Transcript::default(),
            timings,
        };
        let frames = messages.iter().map(|m| session.emit(m)).collect();
        if !private {
            session.ranked = (1..=k).collect();
        }
        Ok((session, frames))
    }

    fn emit(&mut self, msg: &Message) -> Frame {
        let frame = msg.encode();
        self.transcript.push(Direction::ToCloud, frame.clone());
        frame
    }

    fn time(&mut self, phase: &'static str, started: Instant) {
        *self.timings.entry(phase).or_default() += started.elapsed();
    }

    pub fn plan(&self) -> &RetrievalPlan {
        &self.plan
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn is_done(&self) -> bool {
        self.state == State::Done
    }

    /// Decrypted inner products, in candidate order.
    pub fn decrypted_dots(&self) -> &[f64] {
        &self.dots
    }

    /// Chosen positions in rank order; empty until ranked.
    pub fn ranked_positions(&self) -> &[usize] {
        &self.ranked
    }

    pub fn documents(&self) -> &[Vec<u8>] {
        &self.documents
    }

    /// Processes one frame from the cloud and returns what to send next.
    pub fn receive(&mut self, frame: Frame, rng: &mut RandomSource) -> Result<Vec<Frame>> {
        self.transcript.push(Direction::ToClient, frame.clone());
        let msg = Message::decode(&frame)?;
        match (self.state, msg) {
            (_, Message::Error { code, message }) => Err(Error::Remote { code, message }),
            (State::AwaitScores, Message::Phase1Reply(reply)) => {
                self.client_rank(&reply)?;
                match self.plan.route {
                    Route::Direct => {
                        let positions = self.ranked.clone();
                        Ok(vec![self.client_fetch_direct(&positions)?])
                    }
                    Route::ObliviousTransfer => match reply.ot_public {
                        Some(a) => Ok(vec![self.ot_blind(a, rng)?]),
                        None => {
                            self.state = State::AwaitOtInit;
                            Ok(Vec::new())
                        }
                    },
                }
            }
            (State::AwaitOtInit, Message::OtInit(a)) => Ok(vec![self.ot_blind(a, rng)?]),
            (State::AwaitDocuments, Message::Documents(texts)) => {
                if texts.len() != self.plan.k {
                    return Err(Error::protocol(format!("expected {} documents, got {}", self.plan.k, texts.len())));
                }
                self.documents = texts;
                self.state = State::Done;
                Ok(Vec::new())
            }
            (State::AwaitWrapped, Message::OtWrapped(wrapped)) => {
                let started = Instant::now();
                let receiver = self.receiver.as_ref().ok_or_else(|| Error::State("no OT receiver".into()))?;
                let opened: BTreeMap<usize, Vec<u8>> =
                    ot_receiver_decrypt(&self.config.ot_group, receiver, &wrapped)?.into_iter().collect();
                self.documents = self.ranked.iter().map(|p| opened[p].clone()).collect();
                self.time("ot_receiver", started);
                self.state = State::Done;
                Ok(Vec::new())
            }
            (state, msg) => Err(Error::protocol(format!(
                "unexpected message {:#04x} while in state {state:?}",
                msg.tag()
            ))),
        }
    }

    /// Decrypts the scores and keeps the `k` best positions, ties broken by
    /// ascending position.
    pub fn client_rank(&mut self, reply: &Phase1Reply) -> Result<Vec<usize>> {
        if self.state != State::AwaitScores {
            return Err(Error::State(format!("cannot rank in state {:?}", self.state)));
        }
        if reply.scores.len() != self.plan.k_prime.min(self.config.corpus_size) {
            return Err(Error::protocol(format!(
                "expected {} scores, got {}",
                self.plan.k_prime,
                reply.scores.len()
            )));
        }
        let wants_a = self.plan.route == Route::ObliviousTransfer && self.config.merge_rounds;
        if reply.ot_public.is_some() != wants_a {
            return Err(Error::protocol("OT value presence does not match the request"));
        }
        let started = Instant::now();
        let keys = self.keys.as_ref().expect("private session has keys");
        let codec = self.codec.as_ref().expect("private session has a codec");
        let mut scored = Vec::with_capacity(reply.scores.len());
        self.dots.clear();
        for (i, value) in reply.scores.iter().enumerate() {
            let ct = HECiphertext::from_wire(&keys.public, value.clone())?;
            let plain = keys.decrypt(&ct);
            self.dots.push(codec.decode_product(&plain));
            scored.push((codec.to_signed(&plain), i + 1));
        }
        // Smallest cosine distance is largest dot.
        scored.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        self.ranked = scored.into_iter().take(self.plan.k).map(|(_, p)| p).collect();
        self.time("decrypt_rank", started);
        Ok(self.ranked.clone())
    }

    /// FETCH_DIRECT for the given positions.
    pub fn client_fetch_direct(&mut self, positions: &[usize]) -> Result<Frame> {
        if self.plan.route != Route::Direct {
            return Err(Error::State("direct fetch on the OT route".into()));
        }
        if let Some(&p) = positions.iter().find(|&&p| p == 0 || p > self.plan.k_prime) {
            return Err(Error::protocol(format!("position {p} outside [1, {}]", self.plan.k_prime)));
        }
        self.state = State::AwaitDocuments;
        let msg = Message::FetchDirect(positions.iter().map(|&p| p as u32).collect());
        Ok(self.emit(&msg))
    }

    /// OT_B for the ranked positions against the cloud's value `A`.
    pub fn ot_blind(&mut self, sender_public: Integer, rng: &mut RandomSource) -> Result<Frame> {
        if self.plan.route != Route::ObliviousTransfer || self.ranked.is_empty() {
            return Err(Error::State("OT requested before ranking on the OT route".into()));
        }
        let started = Instant::now();
        let k_prime = self.plan.k_prime.min(self.config.corpus_size);
        let (receiver, blinded) =
            ot_receiver_choose(&self.config.ot_group, &sender_public, &self.ranked, k_prime, rng)?;
        self.time("ot_receiver", started);
        self.ot_public = Some(sender_public);
        self.receiver = Some(receiver);
        self.state = State::AwaitWrapped;
        Ok(self.emit(&Message::OtBlinded(blinded)))
    }

    pub fn cost_report(&self) -> Result<CostReport> {
        if self.state != State::Done {
            return Err(Error::State(format!("session incomplete ({:?})", self.state)));
        }
        Ok(CostReport::from_transcript(&self.transcript, self.timings.clone()))
    }

    pub fn finish(self) -> Result<Retrieval> {
        let report = self.cost_report()?;
        Ok(Retrieval {
            documents: self.documents,
            positions: self.ranked,
            plan: self.plan,
            report,
            transcript: self.transcript,
        })
    }
}

/// Runs one full session over `transport`.
pub fn run_session<T: Transport + ?Sized>(
    query: &NormalizedEmbedding,
    config: ClientConfig,
    keys: Option<&HEKeyPair>,
    transport: &mut T,
    rng: &mut RandomSource,
) -> Result<Retrieval> {
    let (mut session, frames) = ClientSession::open(query, config, keys, rng)?;
    for frame in &frames {
        transport.send(frame)?;
    }
    while !session.is_done() {
        let frame = transport.recv()?;
        for out in session.receive(frame, rng)? {
            transport.send(&out)?;
        }
    }
    session.finish()
}
