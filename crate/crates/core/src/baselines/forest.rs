use rand::seq::index;
use rand::RngExt;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_training_set, ModelError};
use crate::features::FeatureVector;
use crate::label::StanceLabel;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        /// `x[feature] <= threshold`
        left: Box<Node>,
        right: Box<Node>,
    },
    Leaf {
        n_support: usize,
        n_against: usize,
    },
}

impl Node {
    pub fn depth(&self) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    fn leaf_for(&self, x: &FeatureVector) -> (usize, usize) {
        let mut node = self;
        loop {
            match node {
                Node::Leaf {
                    n_support,
                    n_against,
                } => return (*n_support, *n_against),
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if x.get(*feature) <= *threshold { left } else { right };
                }
            }
        }
    }

    pub fn support_fraction(&self, x: &FeatureVector) -> f64 {
        let (s, a) = self.leaf_for(x);
        s as f64 / (s + a) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    /// `None` grows until leaves are pure or hold a single sample.
    pub max_depth: Option<usize>,
    pub seed: u64,
    pub bootstrap: bool,
    /// Features tried per split; `None` means `ceil(sqrt(d))`.
    pub max_features: Option<usize>,
}

impl ForestParams {
    pub fn new(n_trees: usize, max_depth: Option<usize>, seed: u64) -> Self {
        ForestParams {
            n_trees,
            max_depth,
            seed,
            bootstrap: true,
            max_features: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<Node>,
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub seed: u64,
    pub dim: usize,
}

impl ForestModel {
    /// Mean over trees of the leaf's Support fraction.
    pub fn predict_proba(&self, x: &FeatureVector) -> Result<f64, ModelError> {
        if x.dim() != self.dim {
            return Err(ModelError::DimensionMismatch {
                expected: self.dim,
                found: x.dim(),
            });
        }
        Ok(self.trees.iter().map(|t| t.support_fraction(x)).sum::<f64>() / self.trees.len() as f64)
    }
}

struct Builder<'a> {
    xs: &'a [FeatureVector],
    ys: &'a [bool],
    max_depth: Option<usize>,
    max_features: usize,
    dim: usize,
}

fn gini(pos: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let p = pos as f64 / total as f64;
    2.0 * p * (1.0 - p)
}

impl Builder<'_> {
    fn grow(&self, samples: &mut [usize], depth: usize, rng: &mut impl rand::Rng) -> Node {
        let n_support = samples.iter().filter(|&&i| self.ys[i]).count();
        let n_against = samples.len() - n_support;
        let leaf = Node::Leaf {
            n_support,
            n_against,
        };
        if n_support == 0 || n_against == 0 || samples.len() < 2 {
            return leaf;
        }
        if self.max_depth.is_some_and(|d| depth >= d) {
            return leaf;
        }
        let mut features = index::sample(rng, self.dim, self.max_features).into_vec();
        features.sort_unstable();

        // (weighted child impurity, feature, threshold)
        let mut best: Option<(f64, usize, f64)> = None;
        let mut column: Vec<(f64, bool)> = Vec::with_capacity(samples.len());
        for &feature in &features {
            column.clear();
            column.extend(samples.iter().map(|&i| (self.xs[i].get(feature), self.ys[i])));
            column.sort_by(|a, b| a.0.total_cmp(&b.0));
            let total = column.len();
            let mut left_pos = 0;
            for k in 0..total - 1 {
                left_pos += column[k].1 as usize;
                if column[k].0 == column[k + 1].0 {
                    continue;
                }
                let n_left = k + 1;
                let n_right = total - n_left;
                let impurity = (n_left as f64 * gini(left_pos, n_left)
                    + n_right as f64 * gini(n_support - left_pos, n_right))
                    / total as f64;
                let threshold = (column[k].0 + column[k + 1].0) / 2.0;
                // Features are visited in ascending order and thresholds
                // ascend within a feature, so strict improvement keeps the
                // lowest feature and lowest threshold among ties.
                if best.is_none_or(|(b, _, _)| impurity < b) {
                    best = Some((impurity, feature, threshold));
                }
            }
        }
        let Some((_, feature, threshold)) = best else {
            return leaf;
        };
        let split = partition(samples, |i| self.xs[i].get(feature) <= threshold);
        let (left, right) = samples.split_at_mut(split);
        Node::Split {
            feature,
            threshold,
            left: Box::new(self.grow(left, depth + 1, rng)),
            right: Box::new(self.grow(right, depth + 1, rng)),
        }
    }
}

/// Stable in-place partition; returns the count satisfying `pred`.
fn partition(samples: &mut [usize], pred: impl Fn(usize) -> bool) -> usize {
    let (yes, no): (Vec<usize>, Vec<usize>) = samples.iter().partition(|&&i| pred(i));
    let split = yes.len();
    for (slot, v) in samples.iter_mut().zip(yes.into_iter().chain(no)) {
        *slot = v;
    }
    split
}

/// Bagged CART trees with Gini splits. Trees are grown in parallel; each
/// draws from its own seed-derived stream so the result does not depend on
/// scheduling.
pub fn train_forest(
    xs: &[FeatureVector],
    ys: &[StanceLabel],
    params: &ForestParams,
) -> Result<ForestModel, ModelError> {
    let dim = check_training_set(xs, ys)?;
    if params.n_trees == 0 {
        return Err(ModelError::BadHyperparameter("n_trees = 0".into()));
    }
    let max_features = params
        .max_features
        .unwrap_or_else(|| (dim as f64).sqrt().ceil() as usize)
        .clamp(1, dim);
    let labels: Vec<bool> = ys.iter().map(|y| *y == StanceLabel::Support).collect();
    let builder = Builder {
        xs,
        ys: &labels,
        max_depth: params.max_depth,
        max_features,
        dim,
    };
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = seed::rng(params.seed, &[b"tree", &(t as u64).to_le_bytes()]);
            let mut samples: Vec<usize> = if params.bootstrap {
                (0..xs.len()).map(|_| rng.random_range(0..xs.len())).collect()
            } else {
                (0..xs.len()).collect()
            };
            builder.grow(&mut samples, 0, &mut rng)
        })
        .collect();
    Ok(ForestModel {
        trees,
        n_trees: params.n_trees,
        max_depth: params.max_depth,
        seed: params.seed,
        dim,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use StanceLabel::{Against as A, Support as S};

    fn random_set(n: usize, d: usize, seed: u64) -> (Vec<FeatureVector>, Vec<StanceLabel>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<_> = (0..n)
            .map(|_| FeatureVector::Dense((0..d).map(|_| rng.random_range(0.0..1.0)).collect()))
            .collect();
        let ys = (0..n).map(|i| if i % 2 == 0 { S } else { A }).collect();
        (xs, ys)
    }

    #[test]
    fn single_unbagged_tree_memorizes_distinct_points() {
        let (xs, ys) = random_set(60, 4, 1);
        let params = ForestParams { bootstrap: false, ..ForestParams::new(1, None, 3) };
        let forest = train_forest(&xs, &ys, &params).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            let p = forest.predict_proba(x).unwrap();
            assert_eq!(p, if *y == S { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn stump_separates_two_points() {
        let xs = vec![FeatureVector::Dense(vec![0.0]), FeatureVector::Dense(vec![1.0])];
        let params = ForestParams { bootstrap: false, ..ForestParams::new(1, Some(1), 0) };
        let forest = train_forest(&xs, &[A, S], &params).unwrap();
        assert_eq!(forest.predict_proba(&xs[0]).unwrap(), 0.0);
        assert_eq!(forest.predict_proba(&xs[1]).unwrap(), 1.0);
        assert_eq!(
            forest.trees[0],
            Node::Split {
                feature: 0,
                threshold: 0.5,
                left: Box::new(Node::Leaf { n_support: 0, n_against: 1 }),
                right: Box::new(Node::Leaf { n_support: 1, n_against: 0 }),
            }
        );
    }

    #[test]
    fn depth_bound_holds_for_every_tree() {
        let (xs, ys) = random_set(80, 5, 2);
        let forest = train_forest(&xs, &ys, &ForestParams::new(12, Some(1), 9)).unwrap();
        assert!(forest.trees.iter().all(|t| t.depth() <= 1));
        let forest = train_forest(&xs, &ys, &ForestParams::new(6, Some(3), 9)).unwrap();
        assert!(forest.trees.iter().all(|t| t.depth() <= 3));
    }

    #[test]
    fn same_seed_same_forest() {
        let (xs, ys) = random_set(50, 6, 3);
        let a = train_forest(&xs, &ys, &ForestParams::new(8, None, 11)).unwrap();
        let b = train_forest(&xs, &ys, &ForestParams::new(8, None, 11)).unwrap();
        assert_eq!(a, b);
        let c = train_forest(&xs, &ys, &ForestParams::new(8, None, 12)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn probabilities_stay_in_unit_interval() {
        let (xs, ys) = random_set(40, 3, 4);
        let forest = train_forest(&xs, &ys, &ForestParams::new(5, Some(2), 1)).unwrap();
        let (probe, _) = random_set(100, 3, 99);
        for x in &probe {
            let p = forest.predict_proba(x).unwrap();
            assert!((0.0..=1.0).contains(&p));
        }
    }

    #[test]
    fn ties_prefer_lowest_feature() {
        // Both features split the data perfectly; feature 0 must win.
        let xs = vec![FeatureVector::Dense(vec![0.0, 0.0]), FeatureVector::Dense(vec![1.0, 1.0])];
        let params = ForestParams { bootstrap: false, ..ForestParams::new(1, None, 0) };
        let forest = train_forest(&xs, &[A, S], &params).unwrap();
        assert!(matches!(forest.trees[0], Node::Split { feature: 0, .. }));
    }
}
