//! Repeated accuracy measurement, confusion matrices, AP-ablation and
//! fingerprint-subsampling curves, plus a synthetic data generator.

mod report;
mod synthetic;

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{train_meta, EnsembleConfig, ModelAccuracy};
use crate::error::{Error, Result};
use crate::fingerprint::{
    coverage_table, filter_to_band, redundancy_ranking, CoverageTable, remove_aps, stratified_subsample, ApId, Band, BandProfile, Dataset,
    LocationId,
};
use crate::seed;

pub use report::{
    export_report, import_report, write_confusion_csv, write_curve_csv, EvaluationReport, ReportFormat, QUANTILE_METHOD,
};
pub use synthetic::{
    band5_extra_loss_db, generate_synthetic, path_loss_rssi, synthetic_mac, SyntheticAp, SyntheticCell,
    SyntheticConfig, SYNTHETIC_MAX_DBM, SYNTHETIC_VISIBLE_DBM,
};

/// Row-normalized confusion matrix: entry (i, j) is the share of test
/// points at location i that were predicted as j.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub locations: Vec<LocationId>,
    pub rows: Vec<Vec<f64>>,
    /// Test points per true location.
    pub support: Vec<usize>,
}

impl ConfusionMatrix {
    pub fn from_predictions(locations: &[LocationId], labels: &[LocationId], predictions: &[LocationId]) -> Result<Self> {
        if labels.len() != predictions.len() {
            return Err(Error::LengthMismatch {
                expected: labels.len(),
                found: predictions.len(),
            });
        }
        let n = locations.len();
        let index = |l: &LocationId| {
            locations
                .binary_search(l)
                .map_err(|_| Error::InvalidLocation(l.to_string()))
        };
        let mut counts = vec![vec![0usize; n]; n];
        for (l, p) in labels.iter().zip(predictions) {
            counts[index(l)?][index(p)?] += 1;
        }
        let support: Vec<usize> = counts.iter().map(|r| r.iter().sum()).collect();
        let rows = counts
            .iter()
            .zip(&support)
            .map(|(r, s)| r.iter().map(|c| if *s == 0 { 0.0 } else { *c as f64 / *s as f64 }).collect())
            .collect();
        Ok(ConfusionMatrix {
            locations: locations.to_vec(),
            rows,
            support,
        })
    }

    /// Element-wise mean; each row averages only the matrices that had
    /// test points for that location.
    pub fn mean(matrices: &[ConfusionMatrix]) -> Result<Self> {
        let first = matrices.first().ok_or(Error::EmptyResult)?;
        let n = first.locations.len();
        let mut rows = vec![vec![0.0; n]; n];
        let mut support = vec![0usize; n];
        let mut with_data = vec![0usize; n];
        for m in matrices {
            if m.locations != first.locations {
                return Err(Error::InvalidConfig("confusion matrices cover different locations".into()));
            }
            for i in 0..n {
                support[i] += m.support[i];
                if m.support[i] > 0 {
                    with_data[i] += 1;
                    for j in 0..n {
                        rows[i][j] += m.rows[i][j];
                    }
                }
            }
        }
        for (row, k) in rows.iter_mut().zip(&with_data) {
            if *k > 0 {
                row.iter_mut().for_each(|v| *v /= *k as f64);
            }
        }
        Ok(ConfusionMatrix {
            locations: first.locations.clone(),
            rows,
            support,
        })
    }

    pub fn get(&self, truth: LocationId, predicted: LocationId) -> Option<f64> {
        let i = self.locations.binary_search(&truth).ok()?;
        let j = self.locations.binary_search(&predicted).ok()?;
        Some(self.rows[i][j])
    }

    /// Support-weighted diagonal, i.e. overall accuracy.
    pub fn accuracy(&self) -> f64 {
        let total: usize = self.support.iter().sum();
        if total == 0 {
            return 0.0;
        }
        (0..self.locations.len())
            .map(|i| self.rows[i][i] * self.support[i] as f64)
            .sum::<f64>()
            / total as f64
    }

    /// Share of each location's test points predicted elsewhere.
    pub fn off_diagonal(&self) -> Vec<(LocationId, f64)> {
        self.locations
            .iter()
            .enumerate()
            .filter(|(i, _)| self.support[*i] > 0)
            .map(|(i, l)| (*l, 1.0 - self.rows[i][i]))
            .collect()
    }

    /// Locations ordered from most to least confused.
    pub fn most_confused(&self, n: usize) -> Vec<LocationId> {
        let mut v = self.off_diagonal();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        v.into_iter().take(n).map(|(l, _)| l).collect()
    }
}

/// Summary of repeated measurements. Quantiles interpolate linearly
/// between order statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub values: Vec<f64>,
    pub mean: f64,
    pub q25: f64,
    pub q75: f64,
    pub min: f64,
    pub max: f64,
}

/// Quantile `q` of ascending `sorted` by linear interpolation.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl EvalStats {
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyResult);
        }
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        Ok(EvalStats {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            q25: quantile(&sorted, 0.25),
            q75: quantile(&sorted, 0.75),
            min: sorted[0],
            max: sorted[sorted.len() - 1],
            values,
        })
    }

    pub fn count(&self) -> usize {
        self.values.len()
    }
}

/// One train-and-test run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub seed: u64,
    pub band: BandProfile,
    pub test_accuracy: f64,
    pub validation_accuracy: f64,
    pub model_test_accuracy: Vec<ModelAccuracy>,
    pub confusion: ConfusionMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatedEval {
    pub band: BandProfile,
    pub base_seed: u64,
    pub test: EvalStats,
    pub validation: EvalStats,
    pub confusion: ConfusionMatrix,
    pub runs: Vec<EvalOutcome>,
}

impl RepeatedEval {
    /// Mean test accuracy of each individual model across runs.
    pub fn model_means(&self) -> Vec<ModelAccuracy> {
        let Some(first) = self.runs.first() else {
            return Vec::new();
        };
        first
            .model_test_accuracy
            .iter()
            .enumerate()
            .map(|(k, m)| ModelAccuracy {
                algorithm: m.algorithm,
                accuracy: self.runs.iter().map(|r| r.model_test_accuracy[k].accuracy).sum::<f64>()
                    / self.runs.len() as f64,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// AP count or fingerprint fraction.
    pub x: f64,
    pub stats: EvalStats,
    /// Mean confusion over the repeats at this point.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confusion: Option<ConfusionMatrix>,
    /// AP coverage of the reduced deployment (ablation only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage: Option<CoverageTable>,
}

/// The dataset a band profile is trained on: 2.4 GHz-only runs drop the
/// 5 GHz readings first.
pub fn dataset_for_band(ds: &Dataset, band: BandProfile) -> Result<Dataset> {
    match band {
        BandProfile::DualBand => Ok(ds.clone()),
        BandProfile::Band24Only => Ok(filter_to_band(ds, Band::Band24)?.dataset),
    }
}

/// Trains with `seed` and measures on the held-out test split.
pub fn evaluate_once(ds: &Dataset, band: BandProfile, config: &EnsembleConfig, seed: u64) -> Result<EvalOutcome> {
    let data = dataset_for_band(ds, band)?;
    let meta = train_meta(&data, band, config, seed)?;
    let test = &meta.report().split.test;
    let space = meta.feature_space();
    let rows: Vec<Vec<f64>> = test.iter().map(|&i| space.vectorize(&data.fingerprints()[i]).0).collect();
    let labels: Vec<LocationId> = test.iter().map(|&i| data.label(i)).collect();
    let predictions: Vec<LocationId> = rows.iter().map(|x| meta.predict(x)).collect::<Result<_>>()?;
    let hit_rate = |preds: &[LocationId]| {
        preds.iter().zip(&labels).filter(|(p, l)| p == l).count() as f64 / labels.len().max(1) as f64
    };
    let model_test_accuracy = meta
        .models()
        .iter()
        .map(|m| {
            let preds: Vec<LocationId> = rows.iter().map(|x| m.predict(x)).collect::<Result<_>>()?;
            Ok(ModelAccuracy {
                algorithm: m.algorithm(),
                accuracy: hit_rate(&preds),
            })
        })
        .collect::<Result<_>>()?;
    Ok(EvalOutcome {
        seed,
        band,
        test_accuracy: hit_rate(&predictions),
        validation_accuracy: meta.report().meta_validation_accuracy,
        model_test_accuracy,
        confusion: ConfusionMatrix::from_predictions(meta.locations(), &labels, &predictions)?,
    })
}

/// Repeat `i` uses seed `base_seed + i`. Runs may execute in parallel;
/// results are gathered in repeat order.
pub fn evaluate_repeated(
    ds: &Dataset,
    band: BandProfile,
    config: &EnsembleConfig,
    repeats: usize,
    base_seed: u64,
) -> Result<RepeatedEval> {
    if repeats == 0 {
        return Err(Error::InvalidConfig("repeats must be at least 1".into()));
    }
    let runs: Vec<EvalOutcome> = (0..repeats as u64)
        .into_par_iter()
        .map(|i| evaluate_once(ds, band, config, base_seed.wrapping_add(i)))
        .collect::<Result<_>>()?;
    summarize(band, base_seed, runs)
}

fn summarize(band: BandProfile, base_seed: u64, runs: Vec<EvalOutcome>) -> Result<RepeatedEval> {
    let matrices: Vec<ConfusionMatrix> = runs.iter().map(|r| r.confusion.clone()).collect();
    Ok(RepeatedEval {
        band,
        base_seed,
        test: EvalStats::from_values(runs.iter().map(|r| r.test_accuracy).collect())?,
        validation: EvalStats::from_values(runs.iter().map(|r| r.validation_accuracy).collect())?,
        confusion: ConfusionMatrix::mean(&matrices)?,
        runs,
    })
}

/// APs to remove so that `keep` remain, taken from the front of the
/// redundancy ranking.
pub fn ablation_removals(ranking: &[ApId], keep: usize) -> Result<BTreeSet<ApId>> {
    if keep == 0 || keep > ranking.len() {
        return Err(Error::InvalidConfig(format!(
            "AP count {keep} outside 1..={}",
            ranking.len()
        )));
    }
    Ok(ranking[..ranking.len() - keep].iter().cloned().collect())
}

/// Accuracy as APs are removed, most redundant first. Each point uses
/// the same seeds as the full-deployment baseline.
pub fn ap_ablation(
    ds: &Dataset,
    ap_counts: &[usize],
    config: &EnsembleConfig,
    repeats: usize,
    base_seed: u64,
    visibility_dbm: f64,
) -> Result<Vec<CurvePoint>> {
    let ranking = redundancy_ranking(ds, visibility_dbm);
    log::info!(
        "AP removal order: {}",
        ranking.iter().map(|a| a.0.as_str()).collect::<Vec<_>>().join(", ")
    );
    ap_counts
        .iter()
        .map(|&count| {
            let removed = ablation_removals(&ranking, count)?;
            let reduced = if removed.is_empty() {
                ds.clone()
            } else {
                remove_aps(ds, &removed)?.dataset
            };
            let eval = evaluate_repeated(&reduced, BandProfile::DualBand, config, repeats, base_seed)?;
            log::info!("{count} APs: mean accuracy {:.4}", eval.test.mean);
            Ok(CurvePoint {
                x: count as f64,
                stats: eval.test,
                confusion: Some(eval.confusion),
                coverage: Some(coverage_table(&reduced, visibility_dbm)),
            })
        })
        .collect()
}

/// Accuracy on stratified random subsets of the fingerprints. Repeat `i`
/// of every fraction trains with seed `base_seed + i` on its own subset.
pub fn subsample_curve(
    ds: &Dataset,
    fractions: &[f64],
    band: BandProfile,
    config: &EnsembleConfig,
    repeats: usize,
    base_seed: u64,
) -> Result<Vec<CurvePoint>> {
    if repeats == 0 {
        return Err(Error::InvalidConfig("repeats must be at least 1".into()));
    }
    fractions
        .iter()
        .map(|&f| {
            let runs: Vec<EvalOutcome> = (0..repeats as u64)
                .into_par_iter()
                .map(|i| {
                    let seed = base_seed.wrapping_add(i);
                    let sub = stratified_subsample(ds, f, seed::derive_seed(seed, f.to_bits()))?;
                    evaluate_once(&sub, band, config, seed)
                })
                .collect::<Result<_>>()?;
            let summary = summarize(band, base_seed, runs)?;
            log::info!("fraction {f:.2}: mean accuracy {:.4}", summary.test.mean);
            Ok(CurvePoint {
                x: f,
                stats: summary.test,
                confusion: Some(summary.confusion),
                coverage: None,
            })
        })
        .collect()
}
