//! Private nearest-neighbor retrieval over an untrusted vector store.
//!
//! A query is served in two phases. The client first sends a perturbed copy
//! of its embedding together with a candidate-range size `k′`, chosen so the
//! `k′` neighbours of the perturbed point contain the true top-`k` with high
//! probability on a uniform corpus. The cloud then scores those candidates
//! against a Paillier-encrypted copy of the real query; the client decrypts,
//! ranks, and fetches its `k` documents either by position or through a
//! `k`-out-of-`k′` oblivious transfer when positions would leak too much.
//!
//! Module map:
//! - [`geometry`]: spherical-cap counts, `k ↔ α` conversion, `k′` expansion,
//!   mean-angle leakage bound.
//! - [`dp`]: gamma-radius / uniform-direction noise and budget calibration.
//! - [`he`]: Paillier keys, fixed-point codec, encrypted dot products.
//! - [`ot`]: discrete-log `k`-out-of-`k′` oblivious transfer.
//! - [`store`]: flat exact cosine store and its file formats.
//! - [`protocol`]: wire format, client and cloud roles, cost accounting.
//! - [`bench`]: experiment harness (recall, curves, pipeline costs).

pub mod bench;
pub mod bigint;
pub mod dp;
pub mod embedding;
pub mod error;
pub mod geometry;
pub mod he;
pub mod ot;
pub mod protocol;
pub mod rng;
pub mod store;

pub use embedding::NormalizedEmbedding;
pub use error::{Error, Result};
pub use rng::RandomSource;
