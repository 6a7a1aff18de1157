use serde::{Deserialize, Serialize};

use super::Samples;

/// Per-feature zero-mean, unit-variance transform fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(samples: &Samples) -> Self {
        let d = samples.n_features();
        let n = samples.len() as f64;
        let mut mean = vec![0.0; d];
        for i in 0..samples.len() {
            for (m, v) in mean.iter_mut().zip(samples.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for i in 0..samples.len() {
            for ((s, v), m) in var.iter_mut().zip(samples.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        // Constant columns keep unit scale.
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, scale }
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    pub(crate) fn transform_samples(&self, samples: &Samples) -> Samples {
        samples.map_rows(|r| self.transform(r))
    }
}
