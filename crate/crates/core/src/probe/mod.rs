//! Separability probe: can a tree ensemble tell two persona groups apart
//! from the genres recommended to them?
//!
//! One sample is one response. Ground truth is focal-group membership, so a
//! probe that separates the groups perfectly reports SPD = EOD = 1, DI = 0.

mod forest;

pub use forest::{Forest, ForestParams, Node};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::genres::{GenreDistribution, GenreTaxonomy};
use crate::metrics::{fairness_scores, BinaryOutcomes, FairnessScores, MetricError};
use crate::personas::{ContextProfile, Persona};
use crate::selector::Selector;

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("group `{label}` matches {found} records, need at least 2")]
    TooFewMatches { label: String, found: usize },
    #[error("record `{source_id}` matches both groups")]
    Overlap { source_id: String },
    #[error("group labels must differ, both are `{0}`")]
    SameLabel(String),
    #[error("record `{source_id}` has {found} genre bins, expected {expected}")]
    Shape {
        source_id: String,
        found: usize,
        expected: usize,
    },
    #[error("`{0}` is not a genre of the taxonomy")]
    UnknownGenre(String),
    #[error("need at least 4 samples to split, got {0}")]
    TooSmall(usize),
    #[error("train fraction must lie in (0, 1), got {0}")]
    BadFraction(f64),
    #[error("split leaves the {partition} partition without `{group}` samples")]
    EmptyPartition { partition: &'static str, group: String },
    #[error("training set holds a single class")]
    SingleClass,
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("sample has {found} features, model expects {expected}")]
    FeatureDim { found: usize, expected: usize },
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// A record as the probe sees it.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub source_id: &'a str,
    pub persona: &'a Persona,
    pub context: Option<&'a ContextProfile>,
    pub distribution: &'a GenreDistribution,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub label: String,
    pub selector: Selector,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "genre")]
pub enum FeatureMode {
    /// All genre counts, Others included.
    Vector,
    /// The named genre's count alone.
    Scalar(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSample {
    pub source_id: String,
    pub features: Vec<f64>,
    pub group: String,
    pub y: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub focal: String,
    pub other: String,
    pub samples: Vec<ProbeSample>,
}

pub fn build_dataset(
    observations: &[Observation<'_>],
    taxonomy: &GenreTaxonomy,
    focal: &GroupSpec,
    other: &GroupSpec,
    mode: &FeatureMode,
) -> Result<Dataset, ProbeError> {
    if focal.label == other.label {
        return Err(ProbeError::SameLabel(focal.label.clone()));
    }
    let scalar_idx = match mode {
        FeatureMode::Vector => None,
        FeatureMode::Scalar(genre) => Some(
            taxonomy
                .index_of(genre)
                .ok_or_else(|| ProbeError::UnknownGenre(genre.clone()))?,
        ),
    };
    let mut samples = Vec::new();
    let (mut n_focal, mut n_other) = (0, 0);
    for obs in observations {
        let in_focal = focal.selector.matches(obs.persona, obs.context);
        let in_other = other.selector.matches(obs.persona, obs.context);
        let group = match (in_focal, in_other) {
            (true, true) => {
                return Err(ProbeError::Overlap {
                    source_id: obs.source_id.to_string(),
                })
            }
            (false, false) => continue,
            (true, false) => {
                n_focal += 1;
                &focal.label
            }
            (false, true) => {
                n_other += 1;
                &other.label
            }
        };
        let counts = &obs.distribution.counts;
        if counts.len() != taxonomy.dim() || obs.distribution.domain != taxonomy.domain {
            return Err(ProbeError::Shape {
                source_id: obs.source_id.to_string(),
                found: counts.len(),
                expected: taxonomy.dim(),
            });
        }
        let features = match scalar_idx {
            Some(i) => vec![counts[i] as f64],
            None => counts.iter().map(|&c| c as f64).collect(),
        };
        samples.push(ProbeSample {
            source_id: obs.source_id.to_string(),
            features,
            group: group.clone(),
            y: in_focal,
        });
    }
    for (spec, found) in [(focal, n_focal), (other, n_other)] {
        if found < 2 {
            return Err(ProbeError::TooFewMatches {
                label: spec.label.clone(),
                found,
            });
        }
    }
    Ok(Dataset {
        focal: focal.label.clone(),
        other: other.label.clone(),
        samples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train_fraction: 0.75,
            seed: 0,
            stratified: true,
        }
    }
}

/// Shuffled partition with `round(f·n)` training samples. Stratified splits
/// hand each group its proportional share, breaking fractional ties by
/// largest remainder.
pub fn split(
    samples: &[ProbeSample],
    config: &SplitConfig,
) -> Result<(Vec<ProbeSample>, Vec<ProbeSample>), ProbeError> {
    let f = config.train_fraction;
    if !(f > 0.0 && f < 1.0) {
        return Err(ProbeError::BadFraction(f));
    }
    let n = samples.len();
    if n < 4 {
        return Err(ProbeError::TooSmall(n));
    }
    let target = (f * n as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut groups: Vec<String> = samples.iter().map(|s| s.group.clone()).collect();
    groups.sort();
    groups.dedup();
    let strata: Vec<Vec<usize>> = if config.stratified {
        groups
            .iter()
            .map(|g| (0..n).filter(|&i| samples[i].group == *g).collect())
            .collect()
    } else {
        vec![(0..n).collect()]
    };

    let mut quotas: Vec<usize> = strata
        .iter()
        .map(|s| (f * s.len() as f64).floor() as usize)
        .collect();
    let mut by_remainder: Vec<usize> = (0..strata.len()).collect();
    by_remainder.sort_by(|&a, &b| {
        let ra = f * strata[a].len() as f64 - quotas[a] as f64;
        let rb = f * strata[b].len() as f64 - quotas[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut short = target.saturating_sub(quotas.iter().sum());
    for &s in by_remainder.iter().cycle().take(strata.len() * 2) {
        if short == 0 {
            break;
        }
        if quotas[s] < strata[s].len() {
            quotas[s] += 1;
            short -= 1;
        }
    }

    let mut train_idx = Vec::with_capacity(target);
    let mut test_idx = Vec::with_capacity(n - target);
    for (stratum, &q) in strata.iter().zip(&quotas) {
        let mut order = stratum.clone();
        order.shuffle(&mut rng);
        train_idx.extend_from_slice(&order[..q]);
        test_idx.extend_from_slice(&order[q..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();

    for (partition, idx) in [("train", &train_idx), ("test", &test_idx)] {
        let required: &[String] = if config.stratified { &groups } else { &[] };
        if idx.is_empty() {
            return Err(ProbeError::EmptyPartition {
                partition,
                group: groups.join("|"),
            });
        }
        for g in required {
            if !idx.iter().any(|&i| samples[i].group == *g) {
                return Err(ProbeError::EmptyPartition {
                    partition,
                    group: g.clone(),
                });
            }
        }
    }
    let pick = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect();
    Ok((pick(&train_idx), pick(&test_idx)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeModel {
    pub forest: Forest,
}

impl ProbeModel {
    pub fn predict(&self, features: &[f64]) -> Result<bool, ProbeError> {
        if features.len() != self.forest.dim {
            return Err(ProbeError::FeatureDim {
                found: features.len(),
                expected: self.forest.dim,
            });
        }
        Ok(self.forest.predict(features))
    }
}

pub fn train(train_set: &[ProbeSample], params: &ForestParams, seed: u64) -> Result<ProbeModel, ProbeError> {
    let positives = train_set.iter().filter(|s| s.y).count();
    if positives == 0 || positives == train_set.len() {
        return Err(ProbeError::SingleClass);
    }
    let dim = train_set[0].features.len();
    if let Some(bad) = train_set.iter().find(|s| s.features.len() != dim) {
        return Err(ProbeError::FeatureDim {
            found: bad.features.len(),
            expected: dim,
        });
    }
    let x: Vec<Vec<f64>> = train_set.iter().map(|s| s.features.clone()).collect();
    let y: Vec<bool> = train_set.iter().map(|s| s.y).collect();
    Ok(ProbeModel {
        forest: Forest::fit(&x, &y, params, seed),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub source_id: String,
    pub group: String,
    pub y: bool,
    pub yhat: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeEvaluation {
    pub focal: String,
    pub other: String,
    pub accuracy: f64,
    pub scores: FairnessScores,
    pub confusion: Confusion,
    pub n_test: usize,
    pub predictions: Vec<Prediction>,
}

impl ProbeEvaluation {
    /// Fairness scores recomputed from the stored predictions.
    pub fn recount(&self) -> Result<FairnessScores, ProbeError> {
        let outcomes = BinaryOutcomes::with_membership_truth(
            self.predictions.iter().map(|p| p.yhat).collect(),
            self.predictions.iter().map(|p| p.group.clone()).collect(),
            self.focal.clone(),
        )?;
        Ok(fairness_scores(&outcomes)?)
    }
}

pub fn evaluate(
    model: &ProbeModel,
    test_set: &[ProbeSample],
    focal: &str,
) -> Result<ProbeEvaluation, ProbeError> {
    if test_set.is_empty() {
        return Err(ProbeError::EmptyTestSet);
    }
    let mut confusion = Confusion::default();
    let mut predictions = Vec::with_capacity(test_set.len());
    for s in test_set {
        let yhat = model.predict(&s.features)?;
        match (s.y, yhat) {
            (true, true) => confusion.tp += 1,
            (false, true) => confusion.fp += 1,
            (false, false) => confusion.tn += 1,
            (true, false) => confusion.fn_ += 1,
        }
        predictions.push(Prediction {
            source_id: s.source_id.clone(),
            group: s.group.clone(),
            y: s.y,
            yhat,
        });
    }
    let outcomes = BinaryOutcomes::with_membership_truth(
        predictions.iter().map(|p| p.yhat).collect(),
        predictions.iter().map(|p| p.group.clone()).collect(),
        focal,
    )?;
    let scores = fairness_scores(&outcomes)?;
    Ok(ProbeEvaluation {
        focal: focal.to_string(),
        other: outcomes.other().to_string(),
        accuracy: (confusion.tp + confusion.tn) as f64 / test_set.len() as f64,
        scores,
        confusion,
        n_test: test_set.len(),
        predictions,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeParams {
    pub split: SplitConfig,
    pub forest: ForestParams,
    pub train_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRun {
    pub evaluation: ProbeEvaluation,
    pub n_train: usize,
}

/// Split, train and evaluate in one step.
pub fn run_probe(dataset: &Dataset, params: &ProbeParams) -> Result<ProbeRun, ProbeError> {
    let (train_set, test_set) = split(&dataset.samples, &params.split)?;
    let model = train(&train_set, &params.forest, params.train_seed)?;
    Ok(ProbeRun {
        evaluation: evaluate(&model, &test_set, &dataset.focal)?,
        n_train: train_set.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genres::Taxonomies;
    use crate::personas::Gender;
    use crate::prompting::Domain;
    use rand::Rng;

    fn sample(i: usize, group: &str, focal: bool, x: f64) -> ProbeSample {
        ProbeSample {
            source_id: format!("s{i}"),
            features: vec![x],
            group: group.into(),
            y: focal,
        }
    }

    fn balanced(n: usize) -> Vec<ProbeSample> {
        (0..n)
            .map(|i| {
                let focal = i % 2 == 0;
                sample(i, if focal { "Q" } else { "R" }, focal, i as f64)
            })
            .collect()
    }

    #[test]
    fn split_is_75_25_and_stratified() {
        let data = balanced(100);
        let (train, test) = split(&data, &SplitConfig::default()).unwrap();
        assert_eq!((train.len(), test.len()), (75, 25));
        let q_train = train.iter().filter(|s| s.y).count();
        assert!((37..=38).contains(&q_train));
        let (train2, _) = split(&data, &SplitConfig::default()).unwrap();
        assert_eq!(train, train2);
        let other = split(
            &data,
            &SplitConfig {
                seed: 9,
                ..SplitConfig::default()
            },
        )
        .unwrap()
        .0;
        assert_ne!(train, other);
    }

    #[test]
    fn split_rounding_matches_target() {
        for n in 4..60 {
            let data: Vec<ProbeSample> = (0..n)
                .map(|i| {
                    let focal = i % 3 == 0;
                    sample(i, if focal { "Q" } else { "R" }, focal, 0.0)
                })
                .collect();
            match split(&data, &SplitConfig::default()) {
                Ok((train, test)) => {
                    assert_eq!(train.len(), (0.75 * n as f64).round() as usize);
                    assert_eq!(train.len() + test.len(), n);
                }
                Err(ProbeError::EmptyPartition { .. }) => assert!(n < 8),
                Err(e) => panic!("{e}"),
            }
        }
    }

    #[test]
    fn split_preconditions() {
        assert!(matches!(
            split(&balanced(3), &SplitConfig::default()),
            Err(ProbeError::TooSmall(3))
        ));
        let bad = SplitConfig {
            train_fraction: 1.0,
            ..SplitConfig::default()
        };
        assert!(matches!(
            split(&balanced(8), &bad),
            Err(ProbeError::BadFraction(_))
        ));
    }

    #[test]
    fn single_class_training_is_rejected() {
        let data: Vec<ProbeSample> = (0..6).map(|i| sample(i, "Q", true, 1.0)).collect();
        assert!(matches!(
            train(&data, &ForestParams::default(), 0),
            Err(ProbeError::SingleClass)
        ));
    }

    #[test]
    fn perfect_separation_signature() {
        let data: Vec<ProbeSample> = (0..80)
            .map(|i| {
                let focal = i % 2 == 0;
                let x = if focal {
                    5.0 + (i % 7) as f64
                } else {
                    (i % 2) as f64
                };
                sample(i, if focal { "Q" } else { "R" }, focal, x)
            })
            .collect();
        let ds = Dataset {
            focal: "Q".into(),
            other: "R".into(),
            samples: data.clone(),
        };
        let model = train(&data, &ForestParams::default(), 1).unwrap();
        let train_acc = data
            .iter()
            .filter(|s| model.predict(&s.features).unwrap() == s.y)
            .count();
        assert_eq!(train_acc, data.len());
        let run = run_probe(&ds, &ProbeParams::default()).unwrap();
        let e = run.evaluation;
        assert_eq!(e.accuracy, 1.0);
        assert_eq!((e.scores.spd, e.scores.eod, e.scores.di), (1.0, 1.0, 0.0));
        assert_eq!(e.recount().unwrap(), e.scores);
        assert_eq!(run.n_train + e.n_test, 80);
    }

    #[test]
    fn shuffled_labels_sit_near_chance() {
        let mut total = 0.0;
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let data: Vec<ProbeSample> = (0..200)
                .map(|i| {
                    let focal = i % 2 == 0;
                    let x: f64 = rng.random_range(0..8) as f64;
                    sample(i, if focal { "Q" } else { "R" }, focal, x)
                })
                .collect();
            let ds = Dataset {
                focal: "Q".into(),
                other: "R".into(),
                samples: data,
            };
            let params = ProbeParams {
                split: SplitConfig {
                    seed,
                    ..SplitConfig::default()
                },
                train_seed: seed,
                ..ProbeParams::default()
            };
            total += run_probe(&ds, &params).unwrap().evaluation.accuracy;
        }
        let mean = total / 20.0;
        assert!((mean - 0.5).abs() <= 0.1, "{mean}");
    }

    #[test]
    fn dataset_modes_and_errors() {
        let t = Taxonomies::bundled();
        let books = t.get(Domain::Books);
        let writer = Persona::demographic("Emma", Gender::Female, 30, "writer");
        let comedian = Persona::demographic("Emma", Gender::Female, 30, "comedian");
        let chef = Persona::demographic("Emma", Gender::Female, 30, "chef");
        let mut dist = GenreDistribution::empty(books);
        dist.add_label(books, "Fiction").unwrap();
        dist.add_label(books, "Others").unwrap();
        let ids: Vec<String> = (0..5).map(|i| format!("r{i}")).collect();
        let people = [&writer, &writer, &comedian, &comedian, &chef];
        let obs: Vec<Observation> = people
            .iter()
            .zip(&ids)
            .map(|(p, id)| Observation {
                source_id: id,
                persona: p,
                context: None,
                distribution: &dist,
            })
            .collect();
        let spec = |label: &str, sel: &str| GroupSpec {
            label: label.into(),
            selector: sel.parse().unwrap(),
        };
        let w = spec("writers", "occupation=writer");
        let c = spec("comedians", "occupation=comedian");
        let ds = build_dataset(&obs, books, &w, &c, &FeatureMode::Scalar("Fiction".into())).unwrap();
        assert_eq!(ds.samples.len(), 4);
        assert!(ds.samples.iter().all(|s| s.features == vec![1.0]));
        assert_eq!(ds.samples.iter().filter(|s| s.y).count(), 2);
        let ds = build_dataset(&obs, books, &w, &c, &FeatureMode::Vector).unwrap();
        assert_eq!(ds.samples[0].features.len(), 11);

        let all = spec("everyone", "gender=female");
        assert!(matches!(
            build_dataset(&obs, books, &w, &all, &FeatureMode::Vector),
            Err(ProbeError::Overlap { .. })
        ));
        let pilots = spec("pilots", "occupation=pilot");
        assert!(matches!(
            build_dataset(&obs, books, &w, &pilots, &FeatureMode::Vector),
            Err(ProbeError::TooFewMatches { found: 0, .. })
        ));
        assert!(matches!(
            build_dataset(&obs, books, &w, &c, &FeatureMode::Scalar("Polka".into())),
            Err(ProbeError::UnknownGenre(_))
        ));
    }
}
