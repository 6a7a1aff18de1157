use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{DecisionTree, TreeParams};
use super::{ClassScores, Samples};
use crate::error::Result;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub bootstrap: bool,
    /// Features searched per split; `None` means `sqrt(d)` rounded.
    pub max_features: Option<usize>,
    pub tree: TreeParams,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            bootstrap: true,
            max_features: None,
            tree: TreeParams {
                max_depth: 20,
                min_samples_leaf: 1,
                laplace: 0.0,
            },
        }
    }
}

/// Bagged CART trees; probability is the mean of the trees' leaf
/// distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    trees: Vec<DecisionTree>,
}

impl RandomForest {
    pub fn fit(params: &ForestParams, samples: &Samples, seed: u64) -> Result<Self> {
        let n = samples.len();
        let d = samples.n_features();
        let max_features = params
            .max_features
            .unwrap_or_else(|| ((d as f64).sqrt().round() as usize).max(1))
            .clamp(1, d.max(1));
        let weights = vec![1.0; n];
        let trees = (0..params.n_trees.max(1))
            .into_par_iter()
            .map(|t| {
                let mut rng = seed::child_rng(seed, t as u64);
                let indices: Vec<usize> = if params.bootstrap {
                    (0..n).map(|_| rng.random_range(0..n)).collect()
                } else {
                    (0..n).collect()
                };
                DecisionTree::grow(
                    &params.tree,
                    samples,
                    indices,
                    &weights,
                    Some(max_features),
                    Some(&mut rng),
                )
            })
            .collect();
        Ok(RandomForest { trees })
    }

    pub fn from_trees(trees: Vec<DecisionTree>) -> Self {
        RandomForest { trees }
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    /// Leaf distribution of every tree for `x`.
    pub fn tree_distributions(&self, x: &[f64]) -> Vec<Vec<f64>> {
        self.trees
            .iter()
            .map(|t| t.leaf_distribution(x).to_vec())
            .collect()
    }
}

impl ClassScores for RandomForest {
    fn class_weights(&self, x: &[f64]) -> Vec<f64> {
        let mut sum: Vec<f64> = Vec::new();
        for tree in &self.trees {
            let dist = tree.leaf_distribution(x);
            if sum.is_empty() {
                sum = vec![0.0; dist.len()];
            }
            for (s, p) in sum.iter_mut().zip(dist) {
                *s += p;
            }
        }
        let n = self.trees.len() as f64;
        sum.iter().map(|s| s / n).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::super::tree::Node;
    use super::*;

    #[test]
    fn averages_leaf_distributions() {
        let a = DecisionTree::from_nodes(vec![Node::Leaf {
            distribution: vec![1.0, 0.0],
        }]);
        let b = DecisionTree::from_nodes(vec![Node::Leaf {
            distribution: vec![0.5, 0.5],
        }]);
        let forest = RandomForest::from_trees(vec![a, b]);
        assert_eq!(forest.class_weights(&[0.0]), vec![0.75, 0.25]);
    }
}
