use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{ClassScores, Samples};
use crate::error::Result;
use crate::seed::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Additive smoothing of leaf class counts.
    pub laplace: f64,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: 20,
            min_samples_leaf: 2,
            laplace: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        distribution: Vec<f64>,
    },
}

/// CART tree with Gini impurity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    params: TreeParams,
    nodes: Vec<Node>,
}

impl DecisionTree {
    pub fn fit(params: &TreeParams, samples: &Samples) -> Result<Self> {
        let indices: Vec<usize> = (0..samples.len()).collect();
        let weights = vec![1.0; samples.len()];
        Ok(Self::grow(params, samples, indices, &weights, None, None))
    }

    /// Grows a tree on `indices` (repeats allowed, as in a bootstrap
    /// sample) with per-sample `weights`. With `max_features`, each node
    /// searches that many random non-constant features.
    pub(crate) fn grow(
        params: &TreeParams,
        samples: &Samples,
        indices: Vec<usize>,
        weights: &[f64],
        max_features: Option<usize>,
        rng: Option<&mut Rng>,
    ) -> Self {
        let total: f64 = indices.iter().map(|&i| weights[i]).sum();
        let scale = if total > 0.0 {
            indices.len() as f64 / total
        } else {
            1.0
        };
        let scaled: Vec<f64> = weights.iter().map(|w| w * scale).collect();
        let mut grower = Grower {
            params,
            samples,
            weights: &scaled,
            max_features,
            rng,
            nodes: Vec::new(),
        };
        grower.build(indices, 0);
        DecisionTree {
            params: params.clone(),
            nodes: grower.nodes,
        }
    }

    /// Tree from explicit nodes; node 0 is the root.
    pub fn from_nodes(nodes: Vec<Node>) -> Self {
        DecisionTree {
            params: TreeParams::default(),
            nodes,
        }
    }

    /// Class distribution of the leaf `x` falls into.
    pub fn leaf_distribution(&self, x: &[f64]) -> &[f64] {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[*feature] <= *threshold { *left } else { *right },
                Node::Leaf { distribution } => return distribution,
            }
        }
    }

    pub fn predict_index(&self, x: &[f64]) -> usize {
        super::argmax(self.leaf_distribution(x))
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

impl ClassScores for DecisionTree {
    fn class_weights(&self, x: &[f64]) -> Vec<f64> {
        self.leaf_distribution(x).to_vec()
    }
}

struct Grower<'a, 'r> {
    params: &'a TreeParams,
    samples: &'a Samples,
    weights: &'a [f64],
    max_features: Option<usize>,
    rng: Option<&'r mut Rng>,
    nodes: Vec<Node>,
}

impl Grower<'_, '_> {
    fn x(&self, i: usize, f: usize) -> f64 {
        self.samples.row(i)[f]
    }

    fn build(&mut self, indices: Vec<usize>, depth: usize) -> usize {
        let k = self.samples.n_classes();
        let mut totals = vec![0.0; k];
        for &i in &indices {
            totals[self.samples.target(i)] += self.weights[i];
        }
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf {
            distribution: Vec::new(),
        });
        let pure = totals.iter().filter(|t| **t > 0.0).count() <= 1;
        let splittable = depth < self.params.max_depth
            && indices.len() >= 2 * self.params.min_samples_leaf.max(1)
            && !pure;
        let split = if splittable {
            self.best_split(&indices, &totals)
        } else {
            None
        };
        match split {
            Some((feature, threshold)) => {
                let (l, r): (Vec<usize>, Vec<usize>) = indices
                    .into_iter()
                    .partition(|&i| self.x(i, feature) <= threshold);
                let left = self.build(l, depth + 1);
                let right = self.build(r, depth + 1);
                self.nodes[at] = Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                };
            }
            None => {
                let alpha = self.params.laplace;
                let total: f64 = totals.iter().sum::<f64>() + alpha * k as f64;
                let distribution = totals.iter().map(|t| (t + alpha) / total).collect();
                self.nodes[at] = Node::Leaf { distribution };
            }
        }
        at
    }

    fn best_split(&mut self, indices: &[usize], totals: &[f64]) -> Option<(usize, f64)> {
        let d = self.samples.n_features();
        let mut features: Vec<usize> = (0..d).collect();
        if let (Some(_), Some(rng)) = (self.max_features, self.rng.as_deref_mut()) {
            features.shuffle(rng);
        }
        let min_leaf = self.params.min_samples_leaf.max(1);
        let n = indices.len();
        let weight_total: f64 = totals.iter().sum();
        let parent = totals.iter().map(|t| t * t).sum::<f64>() / weight_total;

        let mut order = indices.to_vec();
        let mut best: Option<(f64, usize, f64)> = None;
        let mut searched = 0;
        for f in features {
            if self.max_features.is_some_and(|m| searched >= m) {
                break;
            }
            order.sort_unstable_by(|&a, &b| self.x(a, f).total_cmp(&self.x(b, f)));
            if self.x(order[0], f) == self.x(order[n - 1], f) {
                continue;
            }
            searched += 1;
            let mut left = vec![0.0; totals.len()];
            let mut right = totals.to_vec();
            let (mut sq_left, mut sq_right) = (0.0, totals.iter().map(|t| t * t).sum::<f64>());
            let (mut w_left, mut w_right) = (0.0, weight_total);
            for pos in 0..n - 1 {
                let s = order[pos];
                let c = self.samples.target(s);
                let w = self.weights[s];
                sq_left += (left[c] + w) * (left[c] + w) - left[c] * left[c];
                sq_right += (right[c] - w) * (right[c] - w) - right[c] * right[c];
                left[c] += w;
                right[c] -= w;
                w_left += w;
                w_right -= w;
                let n_left = pos + 1;
                if n_left < min_leaf || n - n_left < min_leaf {
                    continue;
                }
                let (a, b) = (self.x(s, f), self.x(order[pos + 1], f));
                if a == b || w_left <= 0.0 || w_right <= 0.0 {
                    continue;
                }
                let score = sq_left / w_left + sq_right / w_right;
                if best.is_none_or(|(s, _, _)| score > s) {
                    best = Some((score, f, 0.5 * (a + b)));
                }
            }
        }
        best.filter(|(score, _, _)| score - parent > 1e-9)
            .map(|(_, f, t)| (f, t))
    }
}
