//! Client and cloud roles of the two-phase retrieval protocol.
//!
//! Merged schedule (default), Standard mode:
//!
//! ```text
//! client                                   cloud
//!   PHASE1 {e_k′, k′, k, pk, ⟦e_k⟧} ───────▶  top-k′ of e_k′, encrypted dots
//!   ◀─────── PHASE1_REPLY {⟦d_1⟧..⟦d_k′⟧ [, A]}
//!   FETCH_DIRECT {positions}  ─────────────▶   (Direct route)
//!   ◀───────────────────── DOCUMENTS
//!   OT_B {B_1..B_k′}  ─────────────────────▶   (OT route)
//!   ◀───────────────────── OT_WRAPPED
//! ```
//!
//! The unmerged schedule splits the encrypted query into ENC_QUERY and the
//! OT value into OT_INIT, giving 2.5 rounds on the Direct route and 3 on the
//! OT route. The privacy-ignorant mode sends the raw query and receives the
//! documents in one round; the privacy-conscious mode scores all `N`
//! documents and always uses OT.

mod audit;
mod client;
mod cloud;
mod transport;
pub mod wire;

use std::collections::BTreeMap;
use std::fmt;
use std::time::Duration;

pub use audit::{audit_transcript, AuditReport};
pub use client::{run_session, ClientSession, Retrieval};
pub use cloud::{CloudConfig, CloudSession};
pub use transport::{serve, serve_connection, Loopback, TcpTransport, Transport};
pub use wire::{Frame, Message};

use crate::dp::PrivacyBudget;
use crate::geometry::{PolarAngle, Route};
use crate::he::DEFAULT_SCALE_BITS;
use crate::ot::OtGroup;

/// Fixed-point scale shared by both roles: queries and documents are both
/// encoded at `2^40`, so a decrypted score carries `2^80`.
pub const SCALE_BITS: u32 = DEFAULT_SCALE_BITS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Standard,
    /// No perturbation and no encryption; `k′ = k`.
    PrivacyIgnorant,
    /// No plaintext embedding; every document is scored and fetched by OT.
    PrivacyConscious,
}

impl std::str::FromStr for Mode {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "standard" => Ok(Mode::Standard),
            "ignorant" => Ok(Mode::PrivacyIgnorant),
            "conscious" => Ok(Mode::PrivacyConscious),
            other => Err(crate::Error::Config(format!("unknown mode {other:?}"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Standard => "standard",
            Mode::PrivacyIgnorant => "ignorant",
            Mode::PrivacyConscious => "conscious",
        })
    }
}

/// How the Standard mode sizes its perturbation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Privacy {
    /// Explicit budget; `k′` follows from the realized angle.
    Epsilon(PrivacyBudget),
    /// Budget calibrated so the mean radius expands `k` to this `k′`; the
    /// sent `k′` still follows from the realized angle.
    TargetKPrime(usize),
    /// Calibrated budget as above, but exactly this `k′` is sent. For
    /// benchmarks that sweep `k′`.
    ExactKPrime(usize),
}

#[derive(Clone, Debug)]
pub struct ClientConfig {
    pub k: usize,
    pub privacy: Privacy,
    pub mode: Mode,
    /// `N`, needed to size the candidate range.
    pub corpus_size: usize,
    pub merge_rounds: bool,
    /// `γ` in the `k′` expansion.
    pub safety_factor: f64,
    pub force_route: Option<Route>,
    pub ot_group: OtGroup,
}

impl ClientConfig {
    pub fn new(k: usize, privacy: Privacy, corpus_size: usize) -> Self {
        Self {
            k,
            privacy,
            mode: Mode::Standard,
            corpus_size,
            merge_rounds: true,
            safety_factor: 1.0,
            force_route: None,
            ot_group: OtGroup::modp_2048(),
        }
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_ot_group(mut self, group: OtGroup) -> Self {
        self.ot_group = group;
        self
    }

    pub fn with_route(mut self, route: Route) -> Self {
        self.force_route = Some(route);
        self
    }

    pub fn unmerged(mut self) -> Self {
        self.merge_rounds = false;
        self
    }
}

/// Per-query derived quantities.
#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalPlan {
    pub k: usize,
    pub k_prime: usize,
    pub realized_delta_alpha: PolarAngle,
    pub alpha_k: PolarAngle,
    pub omega: PolarAngle,
    pub route: Route,
    pub mode: Mode,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Direction {
    ToCloud,
    ToClient,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TranscriptEntry {
    pub direction: Direction,
    pub frame: Frame,
}

/// Every frame one client session sent or received, in order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Transcript(pub Vec<TranscriptEntry>);

impl Transcript {
    pub fn push(&mut self, direction: Direction, frame: Frame) {
        self.0.push(TranscriptEntry { direction, frame });
    }

    pub fn iter(&self) -> impl Iterator<Item = &TranscriptEntry> {
        self.0.iter()
    }

    pub fn to_cloud(&self) -> impl Iterator<Item = &Frame> {
        self.0.iter().filter(|e| e.direction == Direction::ToCloud).map(|e| &e.frame)
    }

    pub fn total_bytes(&self) -> u64 {
        self.0.iter().map(|e| e.frame.wire_len() as u64).sum()
    }
}

/// Communication phase a frame is billed to.
pub fn phase_of(tag: u8) -> &'static str {
    match tag {
        wire::tag::PHASE1 | wire::tag::ENC_QUERY => "phase1",
        wire::tag::PHASE1_REPLY => "scores",
        wire::tag::FETCH_DIRECT | wire::tag::DOCUMENTS => "direct_fetch",
        wire::tag::OT_INIT | wire::tag::OT_B | wire::tag::OT_WRAPPED => "oblivious_transfer",
        _ => "control",
    }
}

/// Communication and computation cost of one completed session.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CostReport {
    /// Protocol messages / 2.
    pub rounds: f64,
    pub beta_units: u64,
    pub eta_units: u64,
    pub bytes_by_phase: BTreeMap<&'static str, u64>,
    pub total_bytes: u64,
    pub client_timings: BTreeMap<&'static str, Duration>,
}

impl CostReport {
    pub fn from_transcript(transcript: &Transcript, client_timings: BTreeMap<&'static str, Duration>) -> Self {
        let mut report = CostReport { client_timings, ..Default::default() };
        let mut messages = 0u32;
        for entry in transcript.iter() {
            let phase = phase_of(entry.frame.tag);
            if phase == "control" {
                continue;
            }
            messages += 1;
            let bytes = entry.frame.wire_len() as u64;
            *report.bytes_by_phase.entry(phase).or_default() += bytes;
            report.total_bytes += bytes;
            if let Ok(msg) = Message::decode(&entry.frame) {
                report.beta_units += msg.beta_units();
                report.eta_units += msg.eta_units();
            }
        }
        report.rounds = f64::from(messages) / 2.0;
        report
    }
}

impl fmt::Display for CostReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "rounds: {}", self.rounds)?;
        writeln!(f, "beta_units: {}", self.beta_units)?;
        writeln!(f, "eta_units: {}", self.eta_units)?;
        writeln!(f, "total_bytes: {}", self.total_bytes)?;
        for (phase, bytes) in &self.bytes_by_phase {
            writeln!(f, "bytes.{phase}: {bytes}")?;
        }
        for (phase, t) in &self.client_timings {
            writeln!(f, "time.{phase}: {:.6}", t.as_secs_f64())?;
        }
        Ok(())
    }
}
