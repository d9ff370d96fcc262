//! Quantitative bias instruments: normalized fractions, smoothed KL
//! divergence and the SPD / DI / EOD fairness scores.

mod divergence;
mod fairness;
mod fraction;

pub use divergence::{kl_divergence, to_probability, ProbabilityVector, DEFAULT_EPSILON};
pub use fairness::{consistency_check, di, eod, fairness_scores, spd, BinaryOutcomes, FairnessScores};
pub use fraction::{normalized_fraction, GroupedCounts, NormalizedFractions};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("grouped counts need at least two groups, got {0}")]
    TooFewGroups(usize),
    #[error("group `{0}` has no distribution")]
    MissingGroup(String),
    #[error("distributions mix domains or shapes")]
    MixedTaxonomies,
    #[error("`{0}` is not a genre of the shared taxonomy")]
    UnknownGenre(String),
    #[error("smoothing epsilon must be non-negative and finite, got {0}")]
    BadEpsilon(f64),
    #[error("cannot form a distribution from zero counts without smoothing")]
    EmptyDistribution,
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("probability vectors must be strictly positive")]
    NonPositive,
    #[error("outcome vectors differ in length ({yhat}, {z}, {y})")]
    LengthMismatch { yhat: usize, z: usize, y: usize },
    #[error("outcomes are empty")]
    NoSamples,
    #[error("group attribute must take exactly two values, found {0}")]
    NotBinaryGroups(usize),
    #[error("group `{0}` has no samples")]
    AbsentGroup(String),
    #[error("no sample has a positive ground-truth label")]
    NoPositiveLabels,
}
