use serde::{Deserialize, Serialize};

use super::tree::{DecisionTree, TreeParams};
use super::{softmax, ClassScores, Samples};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaBoostParams {
    pub rounds: usize,
    pub max_depth: usize,
}

impl Default for AdaBoostParams {
    fn default() -> Self {
        AdaBoostParams {
            rounds: 50,
            max_depth: 2,
        }
    }
}

/// Error floor so a perfect round still gets a finite weight.
const MIN_ERROR: f64 = 1e-10;

/// Multiclass SAMME boosting over shallow trees. Probability is the
/// softmax of the per-class sums of round weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaBoost {
    n_classes: usize,
    estimators: Vec<DecisionTree>,
    alphas: Vec<f64>,
}

impl AdaBoost {
    pub fn fit(params: &AdaBoostParams, samples: &Samples) -> Result<Self> {
        let n = samples.len();
        let k = samples.n_classes();
        let tree_params = TreeParams {
            max_depth: params.max_depth,
            min_samples_leaf: 1,
            laplace: 0.0,
        };
        let chance_error = 1.0 - 1.0 / k as f64;
        let mut weights = vec![1.0 / n as f64; n];
        let mut estimators = Vec::new();
        let mut alphas = Vec::new();
        for round in 0..params.rounds.max(1) {
            let tree = DecisionTree::grow(&tree_params, samples, (0..n).collect(), &weights, None, None);
            let miss: Vec<bool> = (0..n)
                .map(|i| tree.predict_index(samples.row(i)) != samples.target(i))
                .collect();
            let total: f64 = weights.iter().sum();
            let error: f64 = weights
                .iter()
                .zip(&miss)
                .filter(|(_, m)| **m)
                .map(|(w, _)| w)
                .sum::<f64>()
                / total;
            if error >= chance_error {
                // No better than chance: keep a lone first learner so the
                // model is still usable, otherwise stop.
                if round == 0 {
                    estimators.push(tree);
                    alphas.push(1.0);
                }
                break;
            }
            let clipped = error.max(MIN_ERROR);
            let alpha = ((1.0 - clipped) / clipped).ln() + ((k - 1) as f64).ln();
            estimators.push(tree);
            alphas.push(alpha);
            if error <= 0.0 {
                break;
            }
            let boost = alpha.exp();
            for (w, m) in weights.iter_mut().zip(&miss) {
                if *m {
                    *w *= boost;
                }
            }
            let total: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= total);
        }
        Ok(AdaBoost {
            n_classes: k,
            estimators,
            alphas,
        })
    }

    pub fn estimators(&self) -> &[DecisionTree] {
        &self.estimators
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    /// Sum of round weights voting for each class.
    pub fn vote_scores(&self, x: &[f64]) -> Vec<f64> {
        let mut scores = vec![0.0; self.n_classes];
        for (tree, alpha) in self.estimators.iter().zip(&self.alphas) {
            scores[tree.predict_index(x)] += alpha;
        }
        scores
    }
}

impl ClassScores for AdaBoost {
    fn class_weights(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.vote_scores(x))
    }
}
