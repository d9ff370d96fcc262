//! Bagged CART trees with Gini splits for binary labels.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub tree_count: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Features examined per split; `None` means ⌈√d⌉.
    pub features_per_split: Option<usize>,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            tree_count: 100,
            max_depth: 8,
            min_samples_leaf: 2,
            features_per_split: None,
            bootstrap: true,
        }
    }
}

impl ForestParams {
    pub fn features_for(&self, dim: usize) -> usize {
        self.features_per_split
            .unwrap_or_else(|| (dim as f64).sqrt().ceil() as usize)
            .clamp(1, dim.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        positive: bool,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    pub fn predict(&self, x: &[f64]) -> bool {
        match self {
            Node::Leaf { positive } => *positive,
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if x[*feature] <= *threshold {
                    left.predict(x)
                } else {
                    right.predict(x)
                }
            }
        }
    }
}

fn gini(pos: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

/// Majority label; ties go to the negative class.
fn majority(pos: usize, n: usize) -> bool {
    2 * pos > n
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [bool],
    params: &'a ForestParams,
    mtry: usize,
    dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct BestSplit {
    pub feature: usize,
    pub threshold: f64,
    pub impurity: f64,
}

/// Exhaustive search over the given features for the split with the lowest
/// weighted Gini impurity. Thresholds are midpoints between consecutive
/// distinct values; both sides must keep `min_leaf` samples.
pub(crate) fn best_split(
    x: &[Vec<f64>],
    y: &[bool],
    idx: &[usize],
    features: &[usize],
    min_leaf: usize,
) -> Option<BestSplit> {
    let n = idx.len();
    let total_pos = idx.iter().filter(|&&i| y[i]).count();
    let mut best: Option<BestSplit> = None;
    let mut order: Vec<usize> = idx.to_vec();
    for &f in features {
        order.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]));
        let mut left_pos = 0;
        for k in 0..n - 1 {
            left_pos += y[order[k]] as usize;
            let (lv, rv) = (x[order[k]][f], x[order[k + 1]][f]);
            if lv == rv {
                continue;
            }
            let (nl, nr) = (k + 1, n - k - 1);
            if nl < min_leaf || nr < min_leaf {
                continue;
            }
            let impurity =
                (nl as f64 * gini(left_pos, nl) + nr as f64 * gini(total_pos - left_pos, nr)) / n as f64;
            if best.is_none_or(|b| impurity < b.impurity - 1e-12) {
                best = Some(BestSplit {
                    feature: f,
                    threshold: lv + (rv - lv) / 2.0,
                    impurity,
                });
            }
        }
    }
    best
}

impl Builder<'_> {
    fn grow(&self, idx: &[usize], depth: usize, rng: &mut ChaCha8Rng) -> Node {
        let n = idx.len();
        let pos = idx.iter().filter(|&&i| self.y[i]).count();
        let leaf = Node::Leaf {
            positive: majority(pos, n),
        };
        if depth >= self.params.max_depth || pos == 0 || pos == n || n < 2 * self.params.min_samples_leaf {
            return leaf;
        }
        let features: Vec<usize> = sample(rng, self.dim, self.mtry).into_vec();
        let Some(split) = best_split(self.x, self.y, idx, &features, self.params.min_samples_leaf) else {
            return leaf;
        };
        if split.impurity >= gini(pos, n) {
            return leaf;
        }
        let (l, r): (Vec<usize>, Vec<usize>) = idx
            .iter()
            .partition(|&&i| self.x[i][split.feature] <= split.threshold);
        Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left: Box::new(self.grow(&l, depth + 1, rng)),
            right: Box::new(self.grow(&r, depth + 1, rng)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Node>,
    pub params: ForestParams,
    pub seed: u64,
    pub dim: usize,
}

impl Forest {
    /// Trains on rows `x` with labels `y`. Tree `t` draws its bootstrap and
    /// feature subsets from a generator seeded with `(seed, t)`, so the model
    /// does not depend on scheduling.
    pub fn fit(x: &[Vec<f64>], y: &[bool], params: &ForestParams, seed: u64) -> Forest {
        assert_eq!(x.len(), y.len());
        assert!(!x.is_empty());
        let dim = x[0].len();
        let builder = Builder {
            x,
            y,
            params,
            mtry: params.features_for(dim),
            dim,
        };
        let trees = (0..params.tree_count.max(1))
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(t as u64);
                let idx: Vec<usize> = if params.bootstrap {
                    (0..x.len()).map(|_| rng.random_range(0..x.len())).collect()
                } else {
                    (0..x.len()).collect()
                };
                builder.grow(&idx, 0, &mut rng)
            })
            .collect();
        Forest {
            trees,
            params: params.clone(),
            seed,
            dim,
        }
    }

    /// Majority vote over trees; ties predict the negative class.
    pub fn predict(&self, x: &[f64]) -> bool {
        let votes = self.trees.iter().filter(|t| t.predict(x)).count();
        majority(votes, self.trees.len())
    }
}
