//! Flattened policy gradients and the reductions used to combine them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense gradient over the flattened policy weights (row-major: answer, then feature).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientVec(pub Vec<f64>);

impl GradientVec {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.check_len(other)?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(self.0.iter().map(|v| v * factor).collect())
    }

    /// `self += factor * other`
    pub fn add_scaled(&mut self, factor: f64, other: &Self) -> Result<()> {
        self.check_len(other)?;
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += factor * b;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    fn check_len(&self, other: &Self) -> Result<()> {
        if self.0.len() != other.0.len() {
            return Err(Error::Config(format!(
                "gradient length mismatch: {} vs {}",
                self.0.len(),
                other.0.len()
            )));
        }
        Ok(())
    }
}

/// Cosine similarity, defined as 0 when either vector has norm below `1e-12`.
pub fn cosine(a: &GradientVec, b: &GradientVec) -> Result<f64> {
    let dot = a.dot(b)?;
    let (na, nb) = (a.norm(), b.norm());
    if na < NEAR_ZERO_NORM || nb < NEAR_ZERO_NORM {
        return Ok(0.0);
    }
    Ok(dot / (na * nb))
}

pub const NEAR_ZERO_NORM: f64 = 1e-12;

/// Pairwise (tree) summation of equal-length gradients in the given order.
///
/// Callers sort their inputs by problem id first; the result then depends only
/// on the multiset of (id, gradient) pairs, never on how they were produced.
pub fn pairwise_sum(parts: &[GradientVec], len: usize) -> Result<GradientVec> {
    match parts {
        [] => Ok(GradientVec::zeros(len)),
        [one] => {
            if one.len() != len {
                return Err(Error::Config(format!(
                    "gradient length mismatch: {} vs {len}",
                    one.len()
                )));
            }
            Ok(one.clone())
        }
        _ => {
            let mid = parts.len() / 2;
            let mut left = pairwise_sum(&parts[..mid], len)?;
            let right = pairwise_sum(&parts[mid..], len)?;
            left.add_scaled(1.0, &right)?;
            Ok(left)
        }
    }
}

/// Mean of `parts` keyed by id, summed pairwise in ascending key order.
pub fn ordered_mean<K: Ord + Copy>(
    mut parts: Vec<(K, GradientVec)>,
    len: usize,
) -> Result<GradientVec> {
    if parts.is_empty() {
        return Ok(GradientVec::zeros(len));
    }
    parts.sort_by_key(|a| a.0);
    let n = parts.len() as f64;
    let grads: Vec<GradientVec> = parts.into_iter().map(|(_, g)| g).collect();
    Ok(pairwise_sum(&grads, len)?.scaled(1.0 / n))
}
