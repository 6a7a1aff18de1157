use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::scaling::Standardizer;
use super::{softmax, ClassScores, Samples};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmParams {
    /// L2 regularization strength.
    pub lambda: f64,
    pub epochs: usize,
    /// Initial step size.
    pub eta0: f64,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams {
            lambda: 1e-3,
            epochs: 40,
            eta0: 0.1,
        }
    }
}

/// One-vs-rest linear SVM: hinge loss with L2 penalty, fitted by
/// stochastic subgradient descent on standardized features. Probability
/// is the softmax of the per-class margins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSvm {
    n_features: usize,
    scaler: Standardizer,
    /// classes x features, row-major.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl LinearSvm {
    pub fn fit(params: &SvmParams, samples: &Samples, seed: u64) -> Result<Self> {
        if !(params.lambda > 0.0) || !(params.eta0 > 0.0) {
            return Err(Error::InvalidConfig(
                "linear svm needs positive lambda and eta0".into(),
            ));
        }
        let mut rng = seed::rng(seed);
        let scaler = Standardizer::fit(samples);
        let data = scaler.transform_samples(samples);
        let (d, k) = (samples.n_features(), samples.n_classes());
        let mut weights = vec![0.0; k * d];
        let mut bias = vec![0.0; k];
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut t = 0.0;
        for _ in 0..params.epochs.max(1) {
            order.shuffle(&mut rng);
            for &i in &order {
                let eta = params.eta0 / (1.0 + params.lambda * params.eta0 * t);
                t += 1.0;
                let x = data.row(i);
                let target = data.target(i);
                for c in 0..k {
                    let y = if c == target { 1.0 } else { -1.0 };
                    let w = &mut weights[c * d..(c + 1) * d];
                    let margin = bias[c] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                    let shrink = 1.0 - eta * params.lambda;
                    w.iter_mut().for_each(|v| *v *= shrink);
                    if y * margin < 1.0 {
                        for (v, xj) in w.iter_mut().zip(x) {
                            *v += eta * y * xj;
                        }
                        bias[c] += eta * y;
                    }
                }
            }
        }
        Ok(LinearSvm {
            n_features: d,
            scaler,
            weights,
            bias,
        })
    }

    /// Raw one-vs-rest margins for an unscaled feature vector.
    pub fn margins(&self, x: &[f64]) -> Vec<f64> {
        let z = self.scaler.transform(x);
        let d = self.n_features;
        self.bias
            .iter()
            .enumerate()
            .map(|(c, b)| b + self.weights[c * d..(c + 1) * d].iter().zip(&z).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }
}

impl ClassScores for LinearSvm {
    fn class_weights(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.margins(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fingerprint::LocationId;

    #[test]
    fn separates_linearly_separable_classes() {
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|i| {
                let side = if i % 2 == 0 { 1.0 } else { -1.0 };
                vec![-60.0 + 10.0 * side + (i as f64 * 0.37).sin(), -70.0 + (i as f64 * 1.3).cos() * 5.0]
            })
            .collect();
        let labels: Vec<LocationId> = (0..40).map(|i| LocationId(1 + i % 2)).collect();
        let s = Samples::new(&rows, &labels).unwrap();
        let svm = LinearSvm::fit(&SvmParams::default(), &s, 5).unwrap();
        for i in 0..s.len() {
            assert_eq!(super::super::argmax(&svm.class_weights(s.row(i))), s.target(i));
        }
    }

    #[test]
    fn rejects_bad_params() {
        let rows = vec![vec![0.0], vec![1.0]];
        let s = Samples::new(&rows, &[LocationId(1), LocationId(2)]).unwrap();
        let bad = SvmParams {
            lambda: 0.0,
            ..SvmParams::default()
        };
        assert!(LinearSvm::fit(&bad, &s, 0).is_err());
    }
}
