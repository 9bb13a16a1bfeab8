//! Checks what a private session let the cloud see.
//!
//! Cloud-bound traffic may carry only the perturbed embedding, `k′`, `k`,
//! the public key and encrypted query, candidate positions (Direct route) or
//! OT blinding values (OT route). The raw query must not appear, in either
//! byte order, anywhere in it.

use std::collections::HashSet;

use super::wire::{tag, Message};
use super::{Mode, RetrievalPlan, Transcript};
use crate::geometry::Route;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AuditReport {
    pub violations: Vec<String>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

const ALLOWED_TO_CLOUD: [u8; 5] = [tag::PHASE1, tag::ENC_QUERY, tag::FETCH_DIRECT, tag::OT_B, tag::HELLO];

pub fn audit_transcript(transcript: &Transcript, raw_query: &[f64], plan: &RetrievalPlan) -> AuditReport {
    let mut violations = Vec::new();
    let private = plan.mode != Mode::PrivacyIgnorant;
    let patterns: HashSet<[u8; 8]> = raw_query
        .iter()
        .filter(|v| **v != 0.0)
        .flat_map(|v| [v.to_be_bytes(), v.to_le_bytes()])
        .collect();

    for (i, frame) in transcript.to_cloud().enumerate() {
        if !ALLOWED_TO_CLOUD.contains(&frame.tag) {
            violations.push(format!("message {i}: tag {:#04x} not allowed toward the cloud", frame.tag));
            continue;
        }
        let msg = match Message::decode(frame) {
            Ok(m) => m,
            Err(e) => {
                violations.push(format!("message {i}: undecodable ({e})"));
                continue;
            }
        };
        if !private {
            continue;
        }
        match &msg {
            Message::Phase1(p) => {
                if !p.private {
                    violations.push(format!("message {i}: private session sent a non-private PHASE1"));
                }
                if p.embedding.as_deref() == Some(raw_query) {
                    violations.push(format!("message {i}: PHASE1 embedding equals the raw query"));
                }
                if plan.mode == Mode::PrivacyConscious && p.embedding.is_some() {
                    violations.push(format!("message {i}: privacy-conscious PHASE1 carries an embedding"));
                }
                if p.k_prime as usize != plan.k_prime || p.k as usize != plan.k {
                    violations.push(format!("message {i}: PHASE1 sizes differ from the plan"));
                }
            }
            Message::FetchDirect(positions) => {
                if plan.route != Route::Direct {
                    violations.push(format!("message {i}: positions sent in the clear on the OT route"));
                }
                if positions.len() != plan.k {
                    violations.push(format!("message {i}: {} positions for k = {}", positions.len(), plan.k));
                }
                if positions.iter().any(|&p| p == 0 || p as usize > plan.k_prime) {
                    violations.push(format!("message {i}: position outside the candidate range"));
                }
            }
            Message::OtBlinded(values) => {
                if values.len() != plan.k_prime {
                    violations.push(format!("message {i}: {} blinded values for k′ = {}", values.len(), plan.k_prime));
                }
            }
            _ => {}
        }
        if frame.payload.windows(8).any(|w| patterns.contains(<&[u8; 8]>::try_from(w).expect("window of 8"))) {
            violations.push(format!("message {i}: raw query bytes present"));
        }
    }
    AuditReport { violations }
}
