//! Distance-based differential privacy noise for embeddings.
//!
//! The mechanism adds `r·v` to the query, where the radius `r` has density
//! `∝ r^{n−1} e^{−εr}` (a `Gamma(n, 1/ε)` law, mean `n/ε`) and `v` is uniform
//! on the unit sphere. The sum is renormalized before it leaves the client.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::embedding::{l2_norm, NormalizedEmbedding};
use crate::error::{Error, Result};
use crate::geometry::{self, PolarAngle, SphereParams};
use crate::rng::RandomSource;

/// The budget `ε`, in inverse L2 distance. Larger means less noise.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct PrivacyBudget(f64);

impl PrivacyBudget {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::domain(format!("privacy budget {epsilon} must be finite and > 0")));
        }
        Ok(Self(epsilon))
    }

    /// Budget whose mean perturbation radius is `radius`, i.e. `ε = n / r̄`.
    pub fn for_mean_radius(dim: usize, radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::domain(format!("mean radius {radius} must be > 0")));
        }
        Self::new(dim as f64 / radius)
    }

    pub fn epsilon(self) -> f64 {
        self.0
    }

    pub fn mean_radius(self, dim: usize) -> f64 {
        dim as f64 / self.0
    }

    /// `Some(message)` when ε falls outside the recommended `[10n, 50n]`
    /// band (mean radius between 0.02 and 0.1).
    pub fn guidance_warning(self, dim: usize) -> Option<String> {
        let (lo, hi) = (10.0 * dim as f64, 50.0 * dim as f64);
        if self.0 < lo {
            Some(format!("ε = {} below 10n = {lo}: perturbation radius above 0.1", self.0))
        } else if self.0 > hi {
            Some(format!("ε = {} above 50n = {hi}: perturbation radius below 0.02", self.0))
        } else {
            None
        }
    }
}

/// One draw of the mechanism and the angle it moved the query by.
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationSample {
    pub radius: f64,
    pub direction: NormalizedEmbedding,
    pub realized_delta_alpha: PolarAngle,
}

/// Marsaglia–Tsang squeeze sampler for `Gamma(shape, 1)`.
///
/// Shapes below one use the `U^{1/shape}` boost.
pub fn sample_standard_gamma<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    debug_assert!(shape > 0.0);
    if shape < 1.0 {
        let u: f64 = rng.random();
        return sample_standard_gamma(shape + 1.0, rng) * u.powf(1.0 / shape);
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let (x, v) = loop {
            let x: f64 = rng.sample(StandardNormal);
            let v = 1.0 + c * x;
            if v > 0.0 {
                break (x, v * v * v);
            }
        };
        let u: f64 = rng.random();
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 {
            return d * v;
        }
        if u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

/// Perturbation radius `r ~ Gamma(n, 1/ε)`.
pub fn sample_radius(n: usize, budget: PrivacyBudget, rng: &mut RandomSource) -> Result<f64> {
    if n < 2 {
        return Err(Error::domain(format!("dimension {n} < 2")));
    }
    loop {
        let r = sample_standard_gamma(n as f64, rng) / budget.0;
        if r > 0.0 {
            return Ok(r);
        }
    }
}

/// Uniform direction on the unit sphere in `ℝⁿ` via normalized Gaussians.
pub fn sample_direction(n: usize, rng: &mut RandomSource) -> Result<NormalizedEmbedding> {
    if n < 2 {
        return Err(Error::domain(format!("dimension {n} < 2")));
    }
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        if l2_norm(&v) > 0.0 {
            return NormalizedEmbedding::normalize(v);
        }
    }
}

/// `normalize(e_k + r·v)` with the realized angle recorded.
pub fn perturb_with(
    query: &NormalizedEmbedding,
    radius: f64,
    direction: NormalizedEmbedding,
) -> Result<(NormalizedEmbedding, PerturbationSample)> {
    if query.dim() != direction.dim() {
        return Err(Error::domain(format!(
            "direction dimension {} != query dimension {}",
            direction.dim(),
            query.dim()
        )));
    }
    if !(radius.is_finite() && radius >= 0.0) {
        return Err(Error::domain(format!("radius {radius} must be finite and ≥ 0")));
    }
    let shifted: Vec<f64> = query.iter().zip(direction.iter()).map(|(q, v)| q + radius * v).collect();
    let perturbed = NormalizedEmbedding::normalize(shifted)?;
    let realized = PolarAngle::saturating(angle_between(query, &perturbed));
    Ok((
        perturbed,
        PerturbationSample { radius, direction, realized_delta_alpha: realized },
    ))
}

/// Draws `r` and `v` and applies them to `query`.
pub fn perturb(
    query: &NormalizedEmbedding,
    budget: PrivacyBudget,
    rng: &mut RandomSource,
) -> Result<(NormalizedEmbedding, PerturbationSample)> {
    let radius = sample_radius(query.dim(), budget, rng)?;
    let direction = sample_direction(query.dim(), rng)?;
    perturb_with(query, radius, direction)
}

/// Angle between unit vectors, accurate for tiny angles where `acos` of
/// the dot product loses half its digits.
fn angle_between(a: &NormalizedEmbedding, b: &NormalizedEmbedding) -> f64 {
    let dot = a.dot(b);
    let diff: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let sum: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x + y) * (x + y)).sum::<f64>().sqrt();
    let angle = 2.0 * diff.atan2(sum);
    debug_assert!((angle.cos() - dot).abs() < 1e-9);
    angle
}

/// Budget whose mean radius `n/ε`, used as `Δα`, expands `k` to exactly
/// `k_prime_target` candidates.
///
/// `k_prime_target == k` means no perturbation at all, which has no finite
/// budget; callers should switch to the privacy-ignorant service instead.
pub fn calibrate_epsilon(
    params: SphereParams,
    k: usize,
    k_prime_target: usize,
) -> Result<PrivacyBudget> {
    let total = params.corpus_size();
    if k == 0 || k > total {
        return Err(Error::domain(format!("k = {k} outside [1, {total}]")));
    }
    if k_prime_target < k {
        return Err(Error::domain(format!("target k′ = {k_prime_target} below k = {k}")));
    }
    if k_prime_target > total {
        return Err(Error::domain(format!("target k′ = {k_prime_target} above N = {total}")));
    }
    if k_prime_target == k {
        return Err(Error::domain(
            "k′ = k needs zero perturbation (ε = ∞); use the privacy-ignorant mode",
        ));
    }
    let alpha_k = geometry::alpha_from_k(params, k as f64)?;
    let span = PI - alpha_k.radians();
    let k_prime_at = |delta: f64| geometry::expanded_k_prime(params, k, PolarAngle::saturating(delta), 1.0);

    // Smallest Δα reaching the target; the integer map is a nondecreasing step
    // function, so bisect on "reaches target".
    let (mut lo, mut hi) = (0.0, span);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if k_prime_at(mid)? >= k_prime_target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    if hi <= 0.0 {
        return Err(Error::domain("calibration collapsed to zero perturbation"));
    }
    // Land strictly inside the step rather than on its left edge.
    let step_hi = {
        let (mut a, mut b) = (hi, span);
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b {
                break;
            }
            if k_prime_at(mid)? <= k_prime_target {
                a = mid;
            } else {
                b = mid;
            }
        }
        a
    };
    let delta = 0.5 * (hi + step_hi);
    PrivacyBudget::new(params.dim() as f64 / delta)
}
