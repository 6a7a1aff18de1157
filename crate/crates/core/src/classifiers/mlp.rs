use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::scaling::Standardizer;
use super::{softmax, ClassScores, Samples};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpParams {
    pub hidden: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Share of the training rows held out for early stopping.
    pub validation_fraction: f64,
    /// Epochs without held-out improvement before stopping.
    pub patience: usize,
    pub l2: f64,
}

impl Default for MlpParams {
    fn default() -> Self {
        MlpParams {
            hidden: 64,
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 200,
            validation_fraction: 0.1,
            patience: 10,
            l2: 1e-4,
        }
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPSILON: f64 = 1e-8;
const IMPROVEMENT_TOL: f64 = 1e-4;
/// Below this many rows no slice is held out.
const MIN_ROWS_FOR_HOLDOUT: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Layers {
    /// hidden x inputs, row-major.
    w1: Vec<f64>,
    b1: Vec<f64>,
    /// classes x hidden, row-major.
    w2: Vec<f64>,
    b2: Vec<f64>,
}

impl Layers {
    fn zeros_like(&self) -> Layers {
        Layers {
            w1: vec![0.0; self.w1.len()],
            b1: vec![0.0; self.b1.len()],
            w2: vec![0.0; self.w2.len()],
            b2: vec![0.0; self.b2.len()],
        }
    }

    fn params_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

/// One hidden layer of rectified units with a softmax output, trained
/// with Adam on cross-entropy over standardized inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    inputs: usize,
    hidden: usize,
    classes: usize,
    scaler: Standardizer,
    layers: Layers,
    epochs_run: usize,
}

impl Mlp {
    pub fn fit(params: &MlpParams, samples: &Samples, seed: u64) -> Result<Self> {
        if params.hidden == 0 || params.batch_size == 0 || !(params.learning_rate > 0.0) {
            return Err(Error::InvalidConfig(
                "mlp needs positive hidden size, batch size and learning rate".into(),
            ));
        }
        let mut rng = seed::rng(seed);
        let scaler = Standardizer::fit(samples);
        let data = scaler.transform_samples(samples);
        let (d, h, k) = (samples.n_features(), params.hidden, samples.n_classes());

        let glorot = |fan_in: usize, fan_out: usize, len: usize, rng: &mut seed::Rng| -> Vec<f64> {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..len).map(|_| rng.random_range(-limit..limit)).collect()
        };
        let mut layers = Layers {
            w1: glorot(d, h, h * d, &mut rng),
            b1: glorot(d, h, h, &mut rng),
            w2: glorot(h, k, k * h, &mut rng),
            b2: glorot(h, k, k, &mut rng),
        };

        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        let holdout_len = if data.len() >= MIN_ROWS_FOR_HOLDOUT && params.validation_fraction > 0.0 {
            ((data.len() as f64 * params.validation_fraction).round() as usize).max(1)
        } else {
            0
        };
        let (holdout, mut train) = {
            let (a, b) = order.split_at(holdout_len);
            (a.to_vec(), b.to_vec())
        };

        let mut model = Mlp {
            inputs: d,
            hidden: h,
            classes: k,
            scaler,
            layers: layers.clone(),
            epochs_run: 0,
        };
        let dims = model.dims();
        let mut m = layers.zeros_like();
        let mut v = layers.zeros_like();
        let mut step = 0i32;
        let mut best_loss = f64::INFINITY;
        let mut best_layers = layers.clone();
        let mut stale = 0;
        for epoch in 0..params.epochs {
            train.shuffle(&mut rng);
            for batch in train.chunks(params.batch_size) {
                let mut grad = layers.zeros_like();
                for &i in batch {
                    backprop(dims, &layers, data.row(i), data.target(i), &mut grad);
                }
                let scale = 1.0 / batch.len() as f64;
                step += 1;
                let bias1 = 1.0 - BETA1.powi(step);
                let bias2 = 1.0 - BETA2.powi(step);
                let l2 = params.l2;
                let grads = [&grad.w1, &grad.b1, &grad.w2, &grad.b2];
                let is_weight = [true, false, true, false];
                for (((p, g), (mm, vv)), decay) in layers
                    .params_mut()
                    .into_iter()
                    .zip(grads)
                    .zip(m.params_mut().into_iter().zip(v.params_mut()))
                    .zip(is_weight)
                {
                    for j in 0..p.len() {
                        let mut gj = g[j] * scale;
                        if decay {
                            gj += l2 * p[j];
                        }
                        mm[j] = BETA1 * mm[j] + (1.0 - BETA1) * gj;
                        vv[j] = BETA2 * vv[j] + (1.0 - BETA2) * gj * gj;
                        let mhat = mm[j] / bias1;
                        let vhat = vv[j] / bias2;
                        p[j] -= params.learning_rate * mhat / (vhat.sqrt() + EPSILON);
                    }
                }
            }
            model.epochs_run = epoch + 1;
            if holdout.is_empty() {
                continue;
            }
            let loss = holdout
                .iter()
                .map(|&i| {
                    let p = forward(dims, &layers, data.row(i)).1;
                    -(p[data.target(i)].max(1e-15)).ln()
                })
                .sum::<f64>()
                / holdout.len() as f64;
            if loss < best_loss - IMPROVEMENT_TOL {
                best_loss = loss;
                best_layers = layers.clone();
                stale = 0;
            } else {
                stale += 1;
                if stale >= params.patience {
                    break;
                }
            }
        }
        model.layers = if !holdout.is_empty() && best_loss.is_finite() {
            best_layers
        } else {
            layers
        };
        Ok(model)
    }

    pub fn epochs_run(&self) -> usize {
        self.epochs_run
    }

    fn dims(&self) -> (usize, usize, usize) {
        (self.inputs, self.hidden, self.classes)
    }

    fn forward(&self, z: &[f64]) -> (Vec<f64>, Vec<f64>) {
        forward(self.dims(), &self.layers, z)
    }
}

/// Hidden activations and output probabilities for standardized `z`.
fn forward((d, h, k): (usize, usize, usize), l: &Layers, z: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let hidden: Vec<f64> = (0..h)
        .map(|j| {
            let row = &l.w1[j * d..(j + 1) * d];
            let a = l.b1[j] + row.iter().zip(z).map(|(w, x)| w * x).sum::<f64>();
            a.max(0.0)
        })
        .collect();
    let logits: Vec<f64> = (0..k)
        .map(|c| {
            let row = &l.w2[c * h..(c + 1) * h];
            l.b2[c] + row.iter().zip(&hidden).map(|(w, a)| w * a).sum::<f64>()
        })
        .collect();
    (hidden, softmax(&logits))
}

/// Accumulates cross-entropy gradients of one example into `grad`.
fn backprop(dims: (usize, usize, usize), layers: &Layers, z: &[f64], target: usize, grad: &mut Layers) {
    let (hidden, probs) = forward(dims, layers, z);
    let (d, h, _) = dims;
    let mut delta_hidden = vec![0.0; h];
    for (c, p) in probs.iter().enumerate() {
        let delta = p - if c == target { 1.0 } else { 0.0 };
        grad.b2[c] += delta;
        let row = &layers.w2[c * h..(c + 1) * h];
        for j in 0..h {
            grad.w2[c * h + j] += delta * hidden[j];
            delta_hidden[j] += delta * row[j];
        }
    }
    for j in 0..h {
        if hidden[j] <= 0.0 {
            continue;
        }
        let dj = delta_hidden[j];
        grad.b1[j] += dj;
        for (g, x) in grad.w1[j * d..(j + 1) * d].iter_mut().zip(z) {
            *g += dj * x;
        }
    }
}

impl ClassScores for Mlp {
    fn class_weights(&self, x: &[f64]) -> Vec<f64> {
        self.forward(&self.scaler.transform(x)).1
    }
}
