use serde::{Deserialize, Serialize};

use super::{ClassScores, Samples};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KnnParams {
    pub k: usize,
}

impl Default for KnnParams {
    fn default() -> Self {
        KnnParams { k: 5 }
    }
}

/// Brute-force k-nearest neighbours on raw dBm vectors (Euclidean).
/// Probability is the fraction of the k votes per class; neighbours at
/// equal distance are taken in training order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Knn {
    k: usize,
    n_classes: usize,
    n_features: usize,
    points: Vec<f64>,
    targets: Vec<usize>,
}

impl Knn {
    pub fn fit(params: &KnnParams, samples: &Samples) -> Result<Self> {
        if params.k == 0 {
            return Err(Error::InvalidConfig("knn k must be positive".into()));
        }
        let points = (0..samples.len()).flat_map(|i| samples.row(i).to_vec()).collect();
        Ok(Knn {
            k: params.k.min(samples.len()),
            n_classes: samples.n_classes(),
            n_features: samples.n_features(),
            points,
            targets: samples.targets().to_vec(),
        })
    }

    /// Training indices of the k nearest points, closest first.
    pub fn neighbors(&self, x: &[f64]) -> Vec<usize> {
        let mut dist: Vec<(f64, usize)> = self
            .points
            .chunks_exact(self.n_features.max(1))
            .enumerate()
            .map(|(i, p)| {
                let d: f64 = p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
                (d, i)
            })
            .collect();
        let by = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if self.k < dist.len() {
            dist.select_nth_unstable_by(self.k - 1, by);
            dist.truncate(self.k);
        }
        dist.sort_unstable_by(by);
        dist.into_iter().map(|(_, i)| i).collect()
    }
}

impl ClassScores for Knn {
    fn class_weights(&self, x: &[f64]) -> Vec<f64> {
        let mut votes = vec![0.0; self.n_classes];
        let neighbors = self.neighbors(x);
        for &i in &neighbors {
            votes[self.targets[i]] += 1.0;
        }
        let k = neighbors.len() as f64;
        votes.iter().map(|v| v / k).collect()
    }
}
