//! Geometry of points spread uniformly over the unit sphere in `ℝⁿ`.
//!
//! The central quantity is the expected number of corpus points inside a
//! spherical cap of polar angle `α`:
//!
//! ```text
//! k(α) = N · Ω_{n−1} / Ω_n · ∫₀^α sin^{n−2}θ dθ
//! ```
//!
//! where `Ω_n = 2π^{n/2} / Γ(n/2)` is the area of the unit sphere in `ℝⁿ`.
//! The integral is evaluated through the regularized incomplete beta
//! function, `∫₀^α sin^{n−2}θ dθ = ½·B((n−1)/2, ½)·I_{sin²α}((n−1)/2, ½)` for
//! `α ≤ π/2`, which stays accurate where direct quadrature of
//! `sin^{766}θ` would underflow.

use std::f64::consts::{FRAC_PI_2, PI};

use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

const BISECTION_MAX_ITERS: usize = 200;

/// Corpus shape: embedding dimension `n` and corpus size `N`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SphereParams {
    dim: usize,
    corpus_size: usize,
}

impl SphereParams {
    pub fn new(dim: usize, corpus_size: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::domain(format!("dimension {dim} < 2")));
        }
        if corpus_size < 1 {
            return Err(Error::domain("corpus size must be at least 1"));
        }
        Ok(Self { dim, corpus_size })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn corpus_size(&self) -> usize {
        self.corpus_size
    }

    /// `Ω_n`, the area of the unit sphere in `ℝⁿ`.
    pub fn sphere_area(&self) -> f64 {
        unit_sphere_area(self.dim).expect("validated dimension")
    }
}

/// A polar angle in `[0, π]`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct PolarAngle(f64);

impl PolarAngle {
    pub const ZERO: PolarAngle = PolarAngle(0.0);
    pub const HALF_PI: PolarAngle = PolarAngle(FRAC_PI_2);
    pub const PI: PolarAngle = PolarAngle(PI);

    pub fn new(radians: f64) -> Result<Self> {
        if !(0.0..=PI).contains(&radians) {
            return Err(Error::domain(format!("polar angle {radians} outside [0, π]")));
        }
        Ok(Self(radians))
    }

    /// Clamps into `[0, π]`; NaN maps to zero.
    pub fn saturating(radians: f64) -> Self {
        if radians.is_nan() {
            return Self::ZERO;
        }
        Self(radians.clamp(0.0, PI))
    }

    pub fn radians(self) -> f64 {
        self.0
    }
}

/// `Ω_n = 2π^{n/2} / Γ(n/2)`.
pub fn unit_sphere_area(n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::domain(format!("dimension {n} < 2")));
    }
    let half = n as f64 / 2.0;
    Ok((2f64.ln() + half * PI.ln() - ln_gamma(half)).exp())
}

/// `∫₀^α sin^{n−2}θ dθ`.
pub fn cap_integral(n: usize, alpha: PolarAngle) -> Result<f64> {
    if n < 2 {
        return Err(Error::domain(format!("dimension {n} < 2")));
    }
    let a = (n as f64 - 1.0) / 2.0;
    let full = ln_beta(a, 0.5).exp();
    Ok(full * cap_fraction(n, alpha.0))
}

/// Fraction of the sphere's area inside the cap, `Ω_{n−1}/Ω_n · ∫₀^α sin^{n−2}θ dθ`.
///
/// The normalizing constant `Ω_{n−1}/Ω_n` is exactly `1 / B((n−1)/2, ½)`, so
/// the fraction reduces to half a regularized incomplete beta value.
fn cap_fraction(n: usize, alpha: f64) -> f64 {
    let a = (n as f64 - 1.0) / 2.0;
    if alpha <= FRAC_PI_2 {
        let (s, c) = alpha.sin_cos();
        0.5 * reg_inc_beta(a, 0.5, s * s, c * c)
    } else {
        let mirrored = PI - alpha;
        let (s, c) = mirrored.sin_cos();
        1.0 - 0.5 * reg_inc_beta(a, 0.5, s * s, c * c)
    }
}

/// Expected number of the `N` points within `alpha` of any fixed direction.
pub fn k_from_alpha(params: SphereParams, alpha: PolarAngle) -> f64 {
    params.corpus_size as f64 * cap_fraction(params.dim, alpha.0)
}

/// Inverse of [`k_from_alpha`] by bisection on `[0, π]`.
pub fn alpha_from_k(params: SphereParams, k: f64) -> Result<PolarAngle> {
    let total = params.corpus_size as f64;
    if !(k > 0.0 && k <= total) {
        return Err(Error::domain(format!("k = {k} outside (0, {total}]")));
    }
    if k == total {
        return Ok(PolarAngle::PI);
    }
    let (mut lo, mut hi) = (0.0f64, PI);
    for _ in 0..BISECTION_MAX_ITERS {
        let mid = 0.5 * (lo + hi);
        // Halve until the bracket stops shrinking rather than stopping at a
        // fixed angle tolerance: near π/2 with large N, 1e-12 rad is still
        // worth ~1e-6 in k.
        if mid <= lo || mid >= hi {
            break;
        }
        if k_from_alpha(params, PolarAngle(mid)) < k {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let lo_err = (k_from_alpha(params, PolarAngle(lo)) - k).abs();
    let hi_err = (k_from_alpha(params, PolarAngle(hi)) - k).abs();
    Ok(PolarAngle(if lo_err <= hi_err { lo } else { hi }))
}

/// Candidate-range size that covers the true top-`k` after the query moved
/// by `delta_alpha`: `k′ = ⌈k + γ·(k(α_k + Δα) − k(α_k))⌉`, clamped to `[k, N]`.
///
/// `safety_factor` is `γ`; `1.0` reproduces the uniform-corpus expansion.
/// `k` larger than `N` is clamped to `N`. When `α_k + Δα` passes `π` the
/// whole corpus is returned.
pub fn expanded_k_prime(
    params: SphereParams,
    k: usize,
    delta_alpha: PolarAngle,
    safety_factor: f64,
) -> Result<usize> {
    if k == 0 {
        return Err(Error::domain("k must be at least 1"));
    }
    if !(safety_factor.is_finite() && safety_factor > 0.0) {
        return Err(Error::domain(format!("safety factor {safety_factor} must be positive")));
    }
    let total = params.corpus_size;
    let k = k.min(total);
    if delta_alpha.0 == 0.0 {
        return Ok(k);
    }
    let alpha_k = alpha_from_k(params, k as f64)?;
    let outer = alpha_k.0 + delta_alpha.0;
    if outer >= PI {
        return Ok(total);
    }
    let delta_k = k_from_alpha(params, PolarAngle(outer)) - k_from_alpha(params, alpha_k);
    let expanded = k as f64 + safety_factor * delta_k.max(0.0);
    // Absorb bisection noise so an exact integer target does not round up.
    let k_prime = (expanded - 1e-9).ceil();
    Ok((k_prime as usize).clamp(k, total))
}

/// Expected angle `ω` between the query and the mean of its top-`k`
/// neighbours, from `tan ω = tan α_k / √k`.
pub fn mean_angle(k: usize, alpha_k: PolarAngle) -> Result<PolarAngle> {
    if k == 0 {
        return Err(Error::domain("k must be at least 1"));
    }
    if alpha_k.0 >= FRAC_PI_2 {
        return Err(Error::domain(format!(
            "mean angle needs an acute cap, got α_k = {}",
            alpha_k.0
        )));
    }
    Ok(PolarAngle((alpha_k.0.tan() / (k as f64).sqrt()).atan()))
}

/// How the client collects its `k` documents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Route {
    /// Send the chosen candidate positions in the clear.
    Direct,
    /// Fetch through `k`-out-of-`k′` oblivious transfer.
    ObliviousTransfer,
}

/// Positions are safe to reveal when the neighbour centroid is at least as
/// far from the query as the perturbed embedding already is.
pub fn leakage_route(omega: PolarAngle, delta_alpha: PolarAngle) -> Route {
    if omega.0 >= delta_alpha.0 {
        Route::Direct
    } else {
        Route::ObliviousTransfer
    }
}

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Regularized incomplete beta `I_x(a, b)`; `y` must equal `1 − x` and is
/// passed separately so callers can supply it without cancellation.
pub(crate) fn reg_inc_beta(a: f64, b: f64, x: f64, y: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if y <= 0.0 {
        return 1.0;
    }
    let ln_front = a * x.ln() + b * y.ln() - ln_beta(a, b);
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * beta_continued_fraction(b, a, y) / b
    }
}

/// Modified Lentz evaluation of the incomplete-beta continued fraction.
fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITERS: usize = 100_000;
    const EPS: f64 = 1e-16;
    const TINY: f64 = 1e-300;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITERS {
        let m = m as f64;
        let m2 = 2.0 * m;

        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;

        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Composite Simpson rule on `sin^{n−2}`, evaluated as `exp((n−2)·ln sin θ)`.
    fn simpson_cap(n: usize, alpha: f64) -> f64 {
        let steps = 200_000;
        let h = alpha / steps as f64;
        let f = |t: f64| {
            if n == 2 {
                1.0
            } else if t == 0.0 {
                0.0
            } else {
                ((n as f64 - 2.0) * t.sin().ln()).exp()
            }
        };
        let mut sum = f(0.0) + f(alpha);
        for i in 1..steps {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            sum += w * f(i as f64 * h);
        }
        sum * h / 3.0
    }

    fn params(n: usize, total: usize) -> SphereParams {
        SphereParams::new(n, total).unwrap()
    }

    fn angle(r: f64) -> PolarAngle {
        PolarAngle::new(r).unwrap()
    }

    #[test]
    fn sphere_area_closed_forms() {
        assert!((unit_sphere_area(2).unwrap() - 2.0 * PI).abs() < 1e-12);
        assert!((unit_sphere_area(3).unwrap() - 4.0 * PI).abs() < 1e-12);
        assert!((unit_sphere_area(4).unwrap() - 2.0 * PI * PI).abs() < 1e-12);
        assert!(unit_sphere_area(1).is_err());
    }

    #[test]
    fn cap_integral_closed_forms() {
        assert!((cap_integral(2, angle(1.0)).unwrap() - 1.0).abs() < 1e-12);
        assert!((cap_integral(3, PolarAngle::HALF_PI).unwrap() - 1.0).abs() < 1e-12);
        assert!((cap_integral(4, PolarAngle::HALF_PI).unwrap() - PI / 4.0).abs() < 1e-12);
        // ∫₀^α sin θ = 1 − cos α on either side of π/2.
        for a in [0.3, 1.2, 2.0, 3.0] {
            assert!((cap_integral(3, angle(a)).unwrap() - (1.0 - a.cos())).abs() < 1e-12);
        }
        assert!(PolarAngle::new(3.5).is_err());
        assert!(PolarAngle::new(-0.1).is_err());
    }

    #[test]
    fn cap_integral_matches_quadrature() {
        for n in [5, 17, 64, 130] {
            for a in [0.2, 0.9, 1.4, FRAC_PI_2, 2.2, 3.0] {
                let got = cap_integral(n, angle(a)).unwrap();
                let want = simpson_cap(n, a);
                assert!((got - want).abs() < 1e-12, "n={n} α={a}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn normalizer_equals_sphere_area_ratio() {
        for n in [3, 10, 50] {
            let ratio = unit_sphere_area(n - 1).unwrap() / unit_sphere_area(n).unwrap();
            let k = k_from_alpha(params(n, 1), angle(0.7));
            let direct = ratio * cap_integral(n, angle(0.7)).unwrap();
            assert!((k - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn k_at_hemisphere_and_full_sphere() {
        let p = params(768, 1000);
        assert!((k_from_alpha(p, PolarAngle::PI) - 1000.0).abs() < 1e-9);
        assert!((k_from_alpha(p, PolarAngle::HALF_PI) - 500.0).abs() < 1e-9);
        assert_eq!(alpha_from_k(p, 1000.0).unwrap(), PolarAngle::PI);
        assert!((alpha_from_k(p, 500.0).unwrap().radians() - FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn alpha_from_k_at_operating_point() {
        // Reference root from 40-digit quadrature.
        let p = params(768, 100_000);
        let alpha = alpha_from_k(p, 5.0).unwrap();
        assert!((alpha.radians() - 1.430_500_618_091_862_5).abs() < 1e-11);
        assert!((k_from_alpha(p, alpha) - 5.0).abs() < 1e-9);
    }

    #[test]
    fn alpha_from_k_rejects_out_of_range() {
        let p = params(16, 100);
        assert!(alpha_from_k(p, 0.0).is_err());
        assert!(alpha_from_k(p, -1.0).is_err());
        assert!(alpha_from_k(p, 100.5).is_err());
    }

    #[test]
    fn k_prime_operating_point() {
        // 40-digit quadrature: k(α₅ + 0.03) = 111.885331650551…
        let p = params(768, 100_000);
        let k_prime = expanded_k_prime(p, 5, angle(0.03), 1.0).unwrap();
        assert_eq!(k_prime, 112);
    }

    #[test]
    fn k_prime_edges() {
        let p = params(64, 10_000);
        assert_eq!(expanded_k_prime(p, 7, PolarAngle::ZERO, 1.0).unwrap(), 7);
        assert_eq!(expanded_k_prime(p, 7, PolarAngle::PI, 1.0).unwrap(), 10_000);
        // k beyond N clamps to N.
        assert_eq!(expanded_k_prime(params(8, 3), 5, angle(0.1), 1.0).unwrap(), 3);
        assert!(expanded_k_prime(p, 0, angle(0.1), 1.0).is_err());
        assert!(expanded_k_prime(p, 5, angle(0.1), 0.0).is_err());
    }

    #[test]
    fn safety_factor_scales_expansion() {
        let p = params(128, 10_000);
        let base = expanded_k_prime(p, 5, angle(0.1), 1.0).unwrap();
        let wide = expanded_k_prime(p, 5, angle(0.1), 2.0).unwrap();
        let narrow = expanded_k_prime(p, 5, angle(0.1), 0.1).unwrap();
        assert!(narrow < base && base < wide);
    }

    #[test]
    fn delta_k_is_the_cap_integral_between_angles() {
        let p = params(300, 50_000);
        let alpha_k = alpha_from_k(p, 12.0).unwrap();
        let outer = angle(alpha_k.radians() + 0.05);
        let ratio = 1.0 / ln_beta(299.0 / 2.0, 0.5).exp();
        let annulus = cap_integral(300, outer).unwrap() - cap_integral(300, alpha_k).unwrap();
        let delta_k = 50_000.0 * ratio * annulus;
        let diff = k_from_alpha(p, outer) - k_from_alpha(p, alpha_k);
        assert!((delta_k - diff).abs() < 1e-9);
    }

    #[test]
    fn mean_angle_examples() {
        let a = angle(0.4);
        assert!((mean_angle(1, a).unwrap().radians() - 0.4).abs() < 1e-15);
        assert_eq!(mean_angle(3, PolarAngle::ZERO).unwrap().radians(), 0.0);
        let w = mean_angle(4, angle(PI / 4.0)).unwrap().radians();
        assert!((w - 0.5f64.atan()).abs() < 1e-15);
        assert!((w - 0.463_647_609).abs() < 1e-9);
        assert!(mean_angle(2, PolarAngle::HALF_PI).is_err());
        assert!(mean_angle(0, a).is_err());
    }

    #[test]
    fn routing_boundary_is_inclusive() {
        assert_eq!(leakage_route(angle(0.03), angle(0.03)), Route::Direct);
        assert_eq!(leakage_route(angle(0.05), angle(0.03)), Route::Direct);
        assert_eq!(leakage_route(angle(0.01), angle(0.03)), Route::ObliviousTransfer);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn inverse_consistency(n in 2usize..2000, total in 10usize..1_000_000, frac in 0.0001f64..1.0) {
                let p = params(n, total);
                let k = (frac * total as f64).max(1.0);
                let alpha = alpha_from_k(p, k).unwrap();
                let back = k_from_alpha(p, alpha);
                prop_assert!((back - k).abs() <= 1e-6 * k, "k={} back={}", k, back);
            }

            #[test]
            fn k_prime_monotone(n in 8usize..1024, k in 1usize..50, d1 in 0.0f64..0.3, d2 in 0.0f64..0.3) {
                let p = params(n, 100_000);
                let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
                let a = expanded_k_prime(p, k, angle(lo), 1.0).unwrap();
                let b = expanded_k_prime(p, k, angle(hi), 1.0).unwrap();
                prop_assert!(a <= b);
                prop_assert!(a >= k);
                let c = expanded_k_prime(p, k + 1, angle(lo), 1.0).unwrap();
                prop_assert!(a <= c);
            }

            #[test]
            fn cap_integral_monotone(n in 2usize..500, a in 0.0f64..PI, b in 0.0f64..PI) {
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                prop_assert!(cap_integral(n, angle(lo)).unwrap() <= cap_integral(n, angle(hi)).unwrap() + 1e-15);
            }

            #[test]
            fn mean_angle_shrinks_with_k(k in 1usize..1000, a in 0.01f64..1.5) {
                let w1 = mean_angle(k, angle(a)).unwrap().radians();
                let w2 = mean_angle(k + 1, angle(a)).unwrap().radians();
                prop_assert!(w2 < w1);
                prop_assert!(w1 <= a + 1e-15);
            }
        }
    }
}
