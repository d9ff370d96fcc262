//! Statistical parity difference, disparate impact and equal opportunity
//! difference over binary predictions.
//!
//! Conventions:
//! * DI puts the non-focal rate in the numerator, so DI < 1 when the focal
//!   group is favored. 0/0 is 1 (parity) and x/0 is `f64::INFINITY`.
//! * In EOD, a group without positive ground-truth samples contributes a
//!   true-positive rate of 0.

use serde::{Deserialize, Serialize};

use super::MetricError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryOutcomes {
    yhat: Vec<bool>,
    z: Vec<String>,
    y: Vec<bool>,
    focal: String,
    other: String,
}

impl BinaryOutcomes {
    pub fn new(
        yhat: Vec<bool>,
        z: Vec<String>,
        y: Vec<bool>,
        focal: impl Into<String>,
    ) -> Result<Self, MetricError> {
        let focal = focal.into();
        if yhat.len() != z.len() || z.len() != y.len() {
            return Err(MetricError::LengthMismatch {
                yhat: yhat.len(),
                z: z.len(),
                y: y.len(),
            });
        }
        if z.is_empty() {
            return Err(MetricError::NoSamples);
        }
        let mut distinct: Vec<&String> = z.iter().collect();
        distinct.sort();
        distinct.dedup();
        if !distinct.contains(&&focal) {
            return Err(MetricError::AbsentGroup(focal));
        }
        if distinct.len() != 2 {
            return Err(MetricError::NotBinaryGroups(distinct.len()));
        }
        let other = distinct.into_iter().find(|g| **g != focal).unwrap().clone();
        Ok(BinaryOutcomes {
            yhat,
            z,
            y,
            focal,
            other,
        })
    }

    /// Ground truth is membership in the focal group.
    pub fn with_membership_truth(
        yhat: Vec<bool>,
        z: Vec<String>,
        focal: impl Into<String>,
    ) -> Result<Self, MetricError> {
        let focal = focal.into();
        let y = z.iter().map(|g| *g == focal).collect();
        Self::new(yhat, z, y, focal)
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn focal(&self) -> &str {
        &self.focal
    }

    pub fn other(&self) -> &str {
        &self.other
    }

    pub fn yhat(&self) -> &[bool] {
        &self.yhat
    }

    pub fn y(&self) -> &[bool] {
        &self.y
    }

    pub fn z(&self) -> &[String] {
        &self.z
    }

    /// (favorable, total) over samples of `group` passing `filter`.
    fn rate_parts(&self, group: &str, filter: impl Fn(usize) -> bool) -> (u64, u64) {
        let mut fav = 0;
        let mut n = 0;
        for i in 0..self.len() {
            if self.z[i] == group && filter(i) {
                n += 1;
                fav += self.yhat[i] as u64;
            }
        }
        (fav, n)
    }
}

fn ratio((num, den): (u64, u64)) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// `P(Ŷ=1 | Z=Q) − P(Ŷ=1 | Z=Q̄)`.
pub fn spd(outcomes: &BinaryOutcomes) -> f64 {
    ratio(outcomes.rate_parts(&outcomes.focal, |_| true))
        - ratio(outcomes.rate_parts(&outcomes.other, |_| true))
}

/// `P(Ŷ=1 | Z=Q̄) / P(Ŷ=1 | Z=Q)`.
pub fn di(outcomes: &BinaryOutcomes) -> f64 {
    let focal = ratio(outcomes.rate_parts(&outcomes.focal, |_| true));
    let other = ratio(outcomes.rate_parts(&outcomes.other, |_| true));
    match (other == 0.0, focal == 0.0) {
        (true, true) => 1.0,
        (false, true) => f64::INFINITY,
        _ => other / focal,
    }
}

/// `P(Ŷ=1 | Z=Q, Y=1) − P(Ŷ=1 | Z=Q̄, Y=1)`.
pub fn eod(outcomes: &BinaryOutcomes) -> Result<f64, MetricError> {
    if !outcomes.y.iter().any(|&y| y) {
        return Err(MetricError::NoPositiveLabels);
    }
    let y = &outcomes.y;
    Ok(ratio(outcomes.rate_parts(&outcomes.focal, |i| y[i]))
        - ratio(outcomes.rate_parts(&outcomes.other, |i| y[i])))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FairnessScores {
    pub spd: f64,
    pub di: f64,
    pub eod: f64,
}

pub fn fairness_scores(outcomes: &BinaryOutcomes) -> Result<FairnessScores, MetricError> {
    Ok(FairnessScores {
        spd: spd(outcomes),
        di: di(outcomes),
        eod: eod(outcomes)?,
    })
}

/// `DI − (EOD − SPD) / EOD`, which vanishes when ground truth is focal-group
/// membership and the predictions for the other group carry no positives
/// through EOD. `None` when EOD is zero.
pub fn consistency_check(scores: &FairnessScores) -> Option<f64> {
    if scores.eod == 0.0 {
        return None;
    }
    Some(scores.di - (scores.eod - scores.spd) / scores.eod)
}
