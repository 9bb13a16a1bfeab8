use std::ops::Deref;

use crate::error::{Error, Result};

/// Tolerance on `‖e‖ = 1` accepted by [`NormalizedEmbedding::from_unit`].
pub const UNIT_NORM_TOLERANCE: f64 = 1e-9;

/// A unit-norm real vector.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedEmbedding(Vec<f64>);

impl NormalizedEmbedding {
    /// Scales `values` to unit length. Rejects empty, zero and non-finite input.
    pub fn normalize(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::domain("empty embedding"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!("non-finite component at {i}")));
        }
        let norm = l2_norm(&values);
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::domain("zero-norm embedding"));
        }
        if (norm - 1.0).abs() <= 4.0 * f64::EPSILON {
            return Ok(Self(values));
        }
        Ok(Self(values.into_iter().map(|v| v / norm).collect()))
    }

    /// Wraps a vector that is already unit length, without rescaling.
    pub fn from_unit(values: Vec<f64>) -> Result<Self> {
        let norm = l2_norm(&values);
        if values.is_empty() || (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(Error::domain(format!("embedding norm {norm} is not 1")));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        dot(&self.0, other)
    }

    /// Angle to `other` in `[0, π]`.
    pub fn angle_to(&self, other: &NormalizedEmbedding) -> f64 {
        self.dot(&other.0).clamp(-1.0, 1.0).acos()
    }
}

impl Deref for NormalizedEmbedding {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// `1 − ⟨a, b⟩` for unit vectors.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    1.0 - dot(a, b)
}

pub fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
