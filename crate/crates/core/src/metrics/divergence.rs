use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::genres::{GenreDistribution, GenreTaxonomy};

/// Additive smoothing applied to every bin before taking ratios.
pub const DEFAULT_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityVector {
    pub values: Vec<f64>,
    pub smoothing_epsilon: f64,
}

impl ProbabilityVector {
    /// `p_i = (c_i + ε) / (Σc + ε·dim)`.
    pub fn from_counts(counts: &[u64], epsilon: f64) -> Result<Self, MetricError> {
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(MetricError::BadEpsilon(epsilon));
        }
        let total: u64 = counts.iter().sum();
        let denom = total as f64 + epsilon * counts.len() as f64;
        if denom <= 0.0 {
            return Err(MetricError::EmptyDistribution);
        }
        Ok(ProbabilityVector {
            values: counts.iter().map(|&c| (c as f64 + epsilon) / denom).collect(),
            smoothing_epsilon: epsilon,
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

pub fn to_probability(
    dist: &GenreDistribution,
    taxonomy: &GenreTaxonomy,
    epsilon: f64,
) -> Result<ProbabilityVector, MetricError> {
    if dist.counts.len() != taxonomy.dim() {
        return Err(MetricError::DimensionMismatch {
            left: dist.counts.len(),
            right: taxonomy.dim(),
        });
    }
    if dist.domain != taxonomy.domain {
        return Err(MetricError::MixedTaxonomies);
    }
    ProbabilityVector::from_counts(&dist.counts, epsilon)
}

/// `KL(p‖q) = Σ p_i ln(p_i / q_i)` in nats.
pub fn kl_divergence(p: &ProbabilityVector, q: &ProbabilityVector) -> Result<f64, MetricError> {
    if p.dim() != q.dim() {
        return Err(MetricError::DimensionMismatch {
            left: p.dim(),
            right: q.dim(),
        });
    }
    if p.values.iter().chain(&q.values).any(|&x| x.is_nan() || x <= 0.0) {
        return Err(MetricError::NonPositive);
    }
    let kl: f64 = p
        .values
        .iter()
        .zip(&q.values)
        .map(|(&pi, &qi)| pi * (pi / qi).ln())
        .sum();
    // rounding can push identical-looking inputs a hair below zero
    Ok(kl.max(0.0))
}
