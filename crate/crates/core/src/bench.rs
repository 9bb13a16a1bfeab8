//! Experiment harness: synthetic corpora, recall trials, analytic curves and
//! per-phase pipeline costs, all emitted as CSV.
//!
//! Experiments are configured with a flat `key = value` file:
//!
//! ```text
//! # recall at desk scale
//! N = 10000
//! n = 128
//! k = 5
//! r = 0.05          # or epsilon = ..., or k_prime = ...
//! trials = 50
//! seed = 7
//! mode = standard
//! key_bits = 1024
//! ```
//!
//! Other keys: `gamma` (k′ safety factor), `grid` (comma-separated k′ values
//! for `pipeline`), `curve` (`gamma_pdf`, `epsilon_kprime` or
//! `k_over_n_alpha`), `dims` (comma-separated n values for
//! `k_over_n_alpha`), `route` (`direct` or `ot`, to force a route) and
//! `embeddings` (a store file to use instead of a synthetic corpus).

use std::collections::{BTreeMap, HashMap, HashSet};
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use statrs::distribution::{Continuous, Gamma};

use crate::dp::{calibrate_epsilon, sample_direction, PrivacyBudget};
use crate::error::{Error, Result};
use crate::geometry::{k_from_alpha, PolarAngle, Route, SphereParams};
use crate::he::{keygen, HEKeyPair, KeyPolicy};
use crate::ot::OtGroup;
use crate::protocol::{
    run_session, ClientConfig, CloudConfig, CloudSession, Loopback, Mode, Privacy, Retrieval,
};
use crate::rng::RandomSource;
use crate::store::{DocumentRecord, Store};

/// Ids `1..=N`, i.i.d. uniform directions, text `"doc {id}"`.
pub fn gen_uniform_corpus(corpus_size: usize, dim: usize, seed: u64) -> Result<Store> {
    if corpus_size == 0 {
        return Err(Error::Config("N must be at least 1".into()));
    }
    let mut rng = RandomSource::from_seed(seed);
    let records = (1..=corpus_size as u64)
        .map(|id| {
            Ok(DocumentRecord {
                id,
                embedding: sample_direction(dim, &mut rng)?,
                text: format!("doc {id}").into_bytes(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Store::from_records(records)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Perturbation {
    Epsilon(f64),
    /// Mean radius `r̄ = n/ε`.
    Radius(f64),
    /// Target `k′`, calibrated to a budget.
    KPrime(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CurveKind {
    GammaPdf,
    EpsilonKprime,
    KOverNAlpha,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub corpus_size: usize,
    pub dim: usize,
    pub k: usize,
    pub perturbation: Option<Perturbation>,
    pub trials: usize,
    pub seed: u64,
    pub mode: Mode,
    pub key_bits: u32,
    pub safety_factor: f64,
    pub force_route: Option<Route>,
    pub grid: Vec<usize>,
    pub curve: Option<CurveKind>,
    pub dims: Vec<usize>,
    pub embeddings: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            corpus_size: 10_000,
            dim: 128,
            k: 5,
            perturbation: None,
            trials: 50,
            seed: 0,
            mode: Mode::Standard,
            key_bits: 1024,
            safety_factor: 1.0,
            force_route: None,
            grid: vec![40, 80, 160, 320],
            curve: None,
            dims: vec![8, 32, 128, 768],
            embeddings: None,
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut perturbations = 0;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |what: &str| Error::Config(format!("line {}: {what}", lineno + 1));
            let (key, value) = line.split_once('=').ok_or_else(|| bad("expected key = value"))?;
            let (key, value) = (key.trim(), value.trim());
            let num = |v: &str| v.replace('_', "").parse::<f64>().map_err(|_| bad(&format!("bad number {v:?}")));
            let int = |v: &str| -> Result<usize> {
                let x = num(v)?;
                if x < 0.0 || x.fract() != 0.0 || x > 1e15 {
                    return Err(bad(&format!("{key} must be a non-negative integer")));
                }
                Ok(x as usize)
            };
            let list = |v: &str| v.split(',').map(|s| int(s.trim())).collect::<Result<Vec<_>>>();
            match key {
                "N" => cfg.corpus_size = int(value)?,
                "n" => cfg.dim = int(value)?,
                "k" => cfg.k = int(value)?,
                "epsilon" => {
                    cfg.perturbation = Some(Perturbation::Epsilon(num(value)?));
                    perturbations += 1;
                }
                "r" => {
                    cfg.perturbation = Some(Perturbation::Radius(num(value)?));
                    perturbations += 1;
                }
                "k_prime" => {
                    cfg.perturbation = Some(Perturbation::KPrime(int(value)?));
                    perturbations += 1;
                }
                "trials" => cfg.trials = int(value)?,
                "seed" => cfg.seed = value.parse().map_err(|_| bad("seed must be a u64"))?,
                "mode" => cfg.mode = value.parse()?,
                "key_bits" => cfg.key_bits = int(value)? as u32,
                "gamma" => cfg.safety_factor = num(value)?,
                "route" => {
                    cfg.force_route = Some(match value {
                        "direct" => Route::Direct,
                        "ot" => Route::ObliviousTransfer,
                        _ => return Err(bad("route must be direct or ot")),
                    })
                }
                "grid" => cfg.grid = list(value)?,
                "dims" => cfg.dims = list(value)?,
                "curve" => {
                    cfg.curve = Some(match value {
                        "gamma_pdf" => CurveKind::GammaPdf,
                        "epsilon_kprime" => CurveKind::EpsilonKprime,
                        "k_over_n_alpha" => CurveKind::KOverNAlpha,
                        _ => return Err(bad("unknown curve")),
                    })
                }
                "embeddings" => cfg.embeddings = Some(PathBuf::from(value)),
                _ => return Err(bad(&format!("unknown key {key:?}"))),
            }
        }
        if perturbations > 1 {
            return Err(Error::Config("set at most one of epsilon, r, k_prime".into()));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.corpus_size == 0 || self.dim < 2 {
            return Err(Error::Config("need N ≥ 1 and n ≥ 2".into()));
        }
        if self.k == 0 || self.k > self.corpus_size {
            return Err(Error::Config(format!("k = {} outside [1, N]", self.k)));
        }
        if !(self.safety_factor.is_finite() && self.safety_factor > 0.0) {
            return Err(Error::Config("gamma must be positive".into()));
        }
        if self.grid.is_empty() {
            return Err(Error::Config("grid must not be empty".into()));
        }
        Ok(())
    }

    fn privacy(&self, dim: usize) -> Result<Privacy> {
        Ok(match self.perturbation {
            Some(Perturbation::Epsilon(e)) => Privacy::Epsilon(PrivacyBudget::new(e)?),
            Some(Perturbation::Radius(r)) => Privacy::Epsilon(PrivacyBudget::for_mean_radius(dim, r)?),
            Some(Perturbation::KPrime(t)) => Privacy::TargetKPrime(t),
            None if self.mode == Mode::Standard => {
                return Err(Error::Config("standard mode needs one of epsilon, r, k_prime".into()))
            }
            // Unused outside the standard mode.
            None => Privacy::TargetKPrime(self.k),
        })
    }

    fn load_store(&self) -> Result<Store> {
        match &self.embeddings {
            Some(path) => Store::read_any(std::io::BufReader::new(std::fs::File::open(path)?)),
            None => gen_uniform_corpus(self.corpus_size, self.dim, self.seed),
        }
    }
}

/// Keys and groups sized for the configured key length: the test OT group
/// goes with 1024-bit keys, RFC 3526 group 14 with production keys.
pub fn bench_keys(key_bits: u32, rng: &mut RandomSource) -> Result<(HEKeyPair, CloudConfig)> {
    let policy = if key_bits < 2048 { KeyPolicy::Test } else { KeyPolicy::Production };
    let keys = keygen(key_bits, policy, rng)?;
    let cloud = if key_bits < 2048 {
        CloudConfig { ot_group: OtGroup::test_256(), min_key_bits: key_bits }
    } else {
        CloudConfig::default()
    };
    Ok((keys, cloud))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecallResult {
    pub per_trial: Vec<f64>,
    pub k_primes: Vec<usize>,
    pub mean: f64,
    pub full_recall_fraction: f64,
}

impl RecallResult {
    fn from_trials(per_trial: Vec<f64>, k_primes: Vec<usize>) -> Self {
        let mean = per_trial.iter().sum::<f64>() / per_trial.len() as f64;
        let full = per_trial.iter().filter(|&&r| r == 1.0).count() as f64 / per_trial.len() as f64;
        Self { per_trial, k_primes, mean, full_recall_fraction: full }
    }

    pub fn full_recall_trials(&self) -> usize {
        self.per_trial.iter().filter(|&&r| r == 1.0).count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("trial,k_prime,recall\n");
        for (i, (r, kp)) in self.per_trial.iter().zip(&self.k_primes).enumerate() {
            let _ = writeln!(out, "{},{kp},{r}", i + 1);
        }
        let _ = writeln!(out, "mean,,{}", self.mean);
        let _ = writeln!(out, "full_recall_fraction,,{}", self.full_recall_fraction);
        out
    }
}

/// Maps returned document texts back to ids.
fn text_index(store: &Store) -> HashMap<Vec<u8>, u64> {
    (0..store.len()).map(|row| (store.text(row).to_vec(), store.ids()[row])).collect()
}

/// `|returned ∩ top-k| / k`.
pub fn recall(returned: &[u64], truth: &[u64]) -> f64 {
    let truth: HashSet<u64> = truth.iter().copied().collect();
    let hits = returned.iter().filter(|id| truth.contains(id)).count();
    hits as f64 / truth.len() as f64
}

/// Runs `trials` full sessions against fresh random queries. Synthetic
/// corpora get uniform queries; a supplied embeddings file gets queries
/// drawn from its own records.
pub fn recall_experiment(config: &ExperimentConfig) -> Result<RecallResult> {
    config.validate()?;
    let store = Arc::new(config.load_store()?);
    let dim = store.dim();
    let mut rng = RandomSource::from_seed(config.seed ^ 0x5EED);
    let (keys, cloud_config) = bench_keys(config.key_bits, &mut rng)?;
    let texts = text_index(&store);
    let mut transport = Loopback::new(CloudSession::new(Arc::clone(&store), cloud_config.clone(), rng.fork()));

    let mut per_trial = Vec::with_capacity(config.trials);
    let mut k_primes = Vec::with_capacity(config.trials);
    for _ in 0..config.trials {
        let mut trial_rng = rng.fork();
        let query = match &config.embeddings {
            Some(_) => {
                let row = rand::Rng::random_range(&mut trial_rng, 0..store.len());
                crate::NormalizedEmbedding::from_unit(store.embedding(row).to_vec())?
            }
            None => sample_direction(dim, &mut trial_rng)?,
        };
        let client = client_config(config, store.len(), dim, &cloud_config)?;
        let result = run_session(&query, client, Some(&keys), &mut transport, &mut trial_rng)?;
        let returned = ids_of(&result, &texts)?;
        let truth = store.top_k(&query, config.k)?.ids();
        per_trial.push(recall(&returned, &truth));
        k_primes.push(result.plan.k_prime);
    }
    Ok(RecallResult::from_trials(per_trial, k_primes))
}

fn client_config(
    config: &ExperimentConfig,
    corpus_size: usize,
    dim: usize,
    cloud: &CloudConfig,
) -> Result<ClientConfig> {
    let mut client = ClientConfig::new(config.k, config.privacy(dim)?, corpus_size)
        .with_mode(config.mode)
        .with_ot_group(cloud.ot_group.clone());
    client.safety_factor = config.safety_factor;
    client.force_route = config.force_route;
    Ok(client)
}

pub fn ids_of(result: &Retrieval, texts: &HashMap<Vec<u8>, u64>) -> Result<Vec<u64>> {
    result
        .documents
        .iter()
        .map(|t| texts.get(t).copied().ok_or_else(|| Error::protocol("returned document not in the store")))
        .collect()
}

/// Analytic curves as CSV.
///
/// - `GammaPdf`: `r,density` of `Gamma(n, 1/ε)` at `ε = 10n` over
///   `[0.06, 0.14]`, for the configured `n`.
/// - `EpsilonKprime`: `k,k_prime,epsilon` for `k ∈ {5, 10, 20}` over the
///   `k′` grid, at the configured `N` and `n`.
/// - `KOverNAlpha`: `n,alpha,k_over_n` over `α ∈ [0, π]` for each of `dims`.
pub fn emit_curves(kind: CurveKind, config: &ExperimentConfig) -> Result<String> {
    let mut out = String::new();
    match kind {
        CurveKind::GammaPdf => {
            let n = config.dim as f64;
            let gamma = Gamma::new(n, 10.0 * n).map_err(|e| Error::Config(e.to_string()))?;
            out.push_str("r,density\n");
            for i in 0..=160 {
                let r = 0.06 + 0.08 * i as f64 / 160.0;
                let _ = writeln!(out, "{r:.6},{:.6}", gamma.pdf(r));
            }
        }
        CurveKind::EpsilonKprime => {
            let params = SphereParams::new(config.dim, config.corpus_size)?;
            out.push_str("k,k_prime,epsilon\n");
            for k in [5usize, 10, 20] {
                for &kp in &config.grid {
                    if kp <= k || kp > config.corpus_size {
                        continue;
                    }
                    let eps = calibrate_epsilon(params, k, kp)?.epsilon();
                    let _ = writeln!(out, "{k},{kp},{eps:.3}");
                }
            }
        }
        CurveKind::KOverNAlpha => {
            out.push_str("n,alpha,k_over_n\n");
            for &n in &config.dims {
                let params = SphereParams::new(n, 1)?;
                for i in 0..=180 {
                    let alpha = PI * i as f64 / 180.0;
                    let frac = k_from_alpha(params, PolarAngle::new(alpha)?);
                    let _ = writeln!(out, "{n},{alpha:.6},{frac:.9}");
                }
            }
        }
    }
    Ok(out)
}

/// One measurement of one phase in one session.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineRow {
    pub k_prime: usize,
    pub route: Route,
    pub phase: String,
    pub seconds: f64,
    pub bytes: u64,
}

/// Compute phases that make up encrypted scoring: query encryption, the
/// cloud's encrypted dots and client decryption with ranking.
pub const ENCRYPTED_SCORING_PHASES: [&str; 3] = ["encrypt", "encrypted_dot", "decrypt_rank"];

/// Runs one session per `(k′, route)`, with exactly that `k′` sent, and
/// reports per-phase compute seconds and per-phase bytes. A `total` row
/// carries the sums.
pub fn bench_pipeline(config: &ExperimentConfig, routes: &[Route]) -> Result<Vec<PipelineRow>> {
    config.validate()?;
    let store = Arc::new(config.load_store()?);
    let dim = store.dim();
    let mut rng = RandomSource::from_seed(config.seed ^ 0xBE4C);
    let (keys, cloud_config) = bench_keys(config.key_bits, &mut rng)?;
    let mut transport = Loopback::new(CloudSession::new(Arc::clone(&store), cloud_config.clone(), rng.fork()));
    let mut rows = Vec::new();
    for &route in routes {
        for &k_prime in &config.grid {
            let mut trial_rng = rng.fork();
            let query = sample_direction(dim, &mut trial_rng)?;
            let client = ClientConfig::new(config.k, Privacy::ExactKPrime(k_prime), store.len())
                .with_ot_group(cloud_config.ot_group.clone())
                .with_route(route);
            transport.cloud_mut().reset_timings();
            let result = run_session(&query, client, Some(&keys), &mut transport, &mut trial_rng)?;
            let mut seconds: BTreeMap<&str, Duration> = result.report.client_timings.clone();
            for (phase, t) in transport.cloud().timings() {
                *seconds.entry(phase).or_default() += *t;
            }
            let phases: Vec<&str> = {
                let mut p: Vec<&str> = seconds.keys().copied().collect();
                p.extend(result.report.bytes_by_phase.keys().copied().filter(|k| !seconds.contains_key(k)));
                p
            };
            for phase in phases {
                rows.push(PipelineRow {
                    k_prime: result.plan.k_prime,
                    route,
                    phase: phase.to_string(),
                    seconds: seconds.get(phase).map_or(0.0, Duration::as_secs_f64),
                    bytes: result.report.bytes_by_phase.get(phase).copied().unwrap_or(0),
                });
            }
            rows.push(PipelineRow {
                k_prime: result.plan.k_prime,
                route,
                phase: "total".into(),
                seconds: seconds.values().map(Duration::as_secs_f64).sum(),
                bytes: result.report.total_bytes,
            });
        }
    }
    Ok(rows)
}

pub fn pipeline_csv(rows: &[PipelineRow]) -> String {
    let mut out = String::from("k_prime,route,phase,seconds,bytes\n");
    for r in rows {
        let route = match r.route {
            Route::Direct => "direct",
            Route::ObliviousTransfer => "ot",
        };
        let _ = writeln!(out, "{},{route},{},{:.6},{}", r.k_prime, r.phase, r.seconds, r.bytes);
    }
    out
}

/// Share of compute spent on encrypted scoring for one `(k′, route)`.
pub fn encrypted_scoring_share(rows: &[PipelineRow], k_prime: usize, route: Route) -> Option<f64> {
    let select = |phase: &str| rows.iter().find(|r| r.k_prime == k_prime && r.route == route && r.phase == phase);
    let total = select("total")?.seconds;
    let scoring: f64 = ENCRYPTED_SCORING_PHASES.iter().filter_map(|p| select(p)).map(|r| r.seconds).sum();
    (total > 0.0).then(|| scoring / total)
}

/// Least-squares fit `y = a + b·x`, returning `(a, b, R²)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (intercept, slope, r2)
}
