//! Multiclass probabilistic classifiers behind one interface: fit on
//! labeled feature vectors, return a distribution over the training
//! labels for a query.

mod adaboost;
mod forest;
mod knn;
mod mlp;
mod scaling;
mod svm;
mod tree;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fingerprint::{FeatureSpace, LocationId};

pub use adaboost::{AdaBoost, AdaBoostParams};
pub use forest::{ForestParams, RandomForest};
pub use knn::{Knn, KnnParams};
pub use mlp::{Mlp, MlpParams};
pub use scaling::Standardizer;
pub use svm::{LinearSvm, SvmParams};
pub use tree::{DecisionTree, Node, TreeParams};

/// Version tag written into serialized models.
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Knn,
    DecisionTree,
    RandomForest,
    AdaBoost,
    Mlp,
    LinearSvm,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::Knn,
        Algorithm::DecisionTree,
        Algorithm::RandomForest,
        Algorithm::AdaBoost,
        Algorithm::Mlp,
        Algorithm::LinearSvm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Knn => "knn",
            Algorithm::DecisionTree => "decision_tree",
            Algorithm::RandomForest => "random_forest",
            Algorithm::AdaBoost => "ada_boost",
            Algorithm::Mlp => "mlp",
            Algorithm::LinearSvm => "linear_svm",
        }
    }

    fn stream(self) -> u64 {
        self as u64
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidConfig(format!("unknown algorithm {s:?}")))
    }
}

/// Hyperparameters for all six algorithms.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub knn: KnnParams,
    pub decision_tree: TreeParams,
    pub random_forest: ForestParams,
    pub ada_boost: AdaBoostParams,
    pub mlp: MlpParams,
    pub linear_svm: SvmParams,
}

impl ClassifierConfig {
    /// Small settings for unit tests and smoke runs.
    pub fn fast() -> Self {
        ClassifierConfig {
            knn: KnnParams::default(),
            decision_tree: TreeParams::default(),
            random_forest: ForestParams {
                n_trees: 10,
                ..ForestParams::default()
            },
            ada_boost: AdaBoostParams {
                rounds: 10,
                ..AdaBoostParams::default()
            },
            mlp: MlpParams {
                epochs: 40,
                ..MlpParams::default()
            },
            linear_svm: SvmParams {
                epochs: 20,
                ..SvmParams::default()
            },
        }
    }
}

/// Row-major training matrix with class-index targets.
#[derive(Debug, Clone)]
pub struct Samples {
    n_features: usize,
    data: Vec<f64>,
    targets: Vec<usize>,
    labels: Vec<LocationId>,
}

impl Samples {
    pub fn new<R: AsRef<[f64]>>(rows: &[R], labels: &[LocationId]) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::LengthMismatch {
                expected: rows.len(),
                found: labels.len(),
            });
        }
        let mut classes: Vec<LocationId> = labels.to_vec();
        classes.sort_unstable();
        classes.dedup();
        if classes.len() < 2 {
            return Err(Error::SingleClass);
        }
        let n_features = rows[0].as_ref().len();
        let mut data = Vec::with_capacity(rows.len() * n_features);
        for (r, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != n_features {
                return Err(Error::LengthMismatch {
                    expected: n_features,
                    found: row.len(),
                });
            }
            if let Some(column) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteFeature { row: r, column });
            }
            data.extend_from_slice(row);
        }
        let targets = labels
            .iter()
            .map(|l| classes.binary_search(l).expect("label collected above"))
            .collect();
        Ok(Samples {
            n_features,
            data,
            targets,
            labels: classes,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[LocationId] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn target(&self, i: usize) -> usize {
        self.targets[i]
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    fn map_rows(&self, f: impl Fn(&[f64]) -> Vec<f64>) -> Samples {
        let data = (0..self.len()).flat_map(|i| f(self.row(i))).collect();
        Samples {
            data,
            ..self.clone()
        }
    }
}

/// Probability per training label, labels ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDistribution {
    labels: Vec<LocationId>,
    probs: Vec<f64>,
}

impl ClassDistribution {
    /// Normalizes non-negative `weights` over `labels` (ascending).
    pub fn from_weights(labels: Vec<LocationId>, weights: Vec<f64>) -> Self {
        debug_assert_eq!(labels.len(), weights.len());
        let clean: Vec<f64> = weights
            .iter()
            .map(|w| if w.is_finite() && *w > 0.0 { *w } else { 0.0 })
            .collect();
        let total: f64 = clean.iter().sum();
        let probs = if total > 0.0 {
            clean.iter().map(|w| w / total).collect()
        } else {
            vec![1.0 / labels.len() as f64; labels.len()]
        };
        ClassDistribution { labels, probs }
    }

    pub fn labels(&self) -> &[LocationId] {
        &self.labels
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn get(&self, label: LocationId) -> f64 {
        self.labels
            .binary_search(&label)
            .map(|i| self.probs[i])
            .unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (LocationId, f64)> + '_ {
        self.labels.iter().copied().zip(self.probs.iter().copied())
    }

    /// Most probable label; exact ties go to the lowest id.
    pub fn argmax(&self) -> LocationId {
        self.labels[argmax(&self.probs)]
    }
}

/// Index of the largest value, first index on ties.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.iter().map(|e| e / total).collect()
}

/// Raw per-class weights for one query, in training-label order.
trait ClassScores {
    fn class_weights(&self, x: &[f64]) -> Vec<f64>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", content = "state", rename_all = "snake_case")]
pub enum ModelState {
    Knn(Knn),
    DecisionTree(DecisionTree),
    RandomForest(RandomForest),
    AdaBoost(AdaBoost),
    Mlp(Mlp),
    LinearSvm(LinearSvm),
}

impl ModelState {
    fn scorer(&self) -> &dyn ClassScores {
        match self {
            ModelState::Knn(m) => m,
            ModelState::DecisionTree(m) => m,
            ModelState::RandomForest(m) => m,
            ModelState::AdaBoost(m) => m,
            ModelState::Mlp(m) => m,
            ModelState::LinearSvm(m) => m,
        }
    }
}

/// A fitted classifier. Immutable; safe to share across threads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    labels: Vec<LocationId>,
    n_features: usize,
    state: ModelState,
}

impl TrainedModel {
    pub fn algorithm(&self) -> Algorithm {
        match self.state {
            ModelState::Knn(_) => Algorithm::Knn,
            ModelState::DecisionTree(_) => Algorithm::DecisionTree,
            ModelState::RandomForest(_) => Algorithm::RandomForest,
            ModelState::AdaBoost(_) => Algorithm::AdaBoost,
            ModelState::Mlp(_) => Algorithm::Mlp,
            ModelState::LinearSvm(_) => Algorithm::LinearSvm,
        }
    }

    pub fn labels(&self) -> &[LocationId] {
        &self.labels
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn state(&self) -> &ModelState {
        &self.state
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<ClassDistribution> {
        if x.len() != self.n_features {
            return Err(Error::LengthMismatch {
                expected: self.n_features,
                found: x.len(),
            });
        }
        let weights = self.state.scorer().class_weights(x);
        Ok(ClassDistribution::from_weights(self.labels.clone(), weights))
    }

    pub fn predict(&self, x: &[f64]) -> Result<LocationId> {
        Ok(self.predict_proba(x)?.argmax())
    }
}

/// Fits `algorithm` on `samples`; deterministic in `seed`.
pub fn fit(
    algorithm: Algorithm,
    config: &ClassifierConfig,
    samples: &Samples,
    seed: u64,
) -> Result<TrainedModel> {
    let seed = crate::seed::derive_seed(seed, algorithm.stream());
    let state = match algorithm {
        Algorithm::Knn => ModelState::Knn(Knn::fit(&config.knn, samples)?),
        Algorithm::DecisionTree => {
            ModelState::DecisionTree(DecisionTree::fit(&config.decision_tree, samples)?)
        }
        Algorithm::RandomForest => {
            ModelState::RandomForest(RandomForest::fit(&config.random_forest, samples, seed)?)
        }
        Algorithm::AdaBoost => ModelState::AdaBoost(AdaBoost::fit(&config.ada_boost, samples)?),
        Algorithm::Mlp => ModelState::Mlp(Mlp::fit(&config.mlp, samples, seed)?),
        Algorithm::LinearSvm => ModelState::LinearSvm(LinearSvm::fit(&config.linear_svm, samples, seed)?),
    };
    Ok(TrainedModel {
        labels: samples.labels().to_vec(),
        n_features: samples.n_features(),
        state,
    })
}

/// Self-describing serialized model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEnvelope {
    pub format_version: u32,
    pub algorithm: Algorithm,
    pub feature_space_digest: String,
    pub labels: Vec<LocationId>,
    pub model: TrainedModel,
}

impl ModelEnvelope {
    pub fn new(model: TrainedModel, space: &FeatureSpace) -> Self {
        ModelEnvelope {
            format_version: MODEL_FORMAT_VERSION,
            algorithm: model.algorithm(),
            feature_space_digest: space.digest(),
            labels: model.labels().to_vec(),
            model,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Parses and checks the envelope against the caller's feature space.
    pub fn from_json(text: &str, space: &FeatureSpace) -> Result<TrainedModel> {
        let env: ModelEnvelope = serde_json::from_str(text)?;
        if env.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Parse(format!(
                "unsupported model format version {}",
                env.format_version
            )));
        }
        if env.feature_space_digest != space.digest() {
            return Err(Error::FeatureSpaceMismatch {
                expected: env.feature_space_digest,
                found: space.digest(),
            });
        }
        Ok(env.model)
    }
}
