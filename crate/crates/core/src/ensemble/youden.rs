use serde::{Deserialize, Serialize};

use crate::classifiers::Algorithm;
use crate::error::{Error, Result};
use crate::fingerprint::LocationId;

fn check_lengths(predictions: &[LocationId], labels: &[LocationId]) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if predictions.len() != labels.len() {
        return Err(Error::LengthMismatch {
            expected: labels.len(),
            found: predictions.len(),
        });
    }
    Ok(())
}

/// TP / (TP + FN) for class `y`.
pub fn sensitivity(predictions: &[LocationId], labels: &[LocationId], y: LocationId) -> Result<f64> {
    check_lengths(predictions, labels)?;
    let (mut tp, mut positives) = (0usize, 0usize);
    for (p, l) in predictions.iter().zip(labels) {
        if *l == y {
            positives += 1;
            tp += usize::from(*p == y);
        }
    }
    if positives == 0 {
        return Err(Error::UndefinedMetric {
            metric: "sensitivity",
            location: y,
        });
    }
    Ok(tp as f64 / positives as f64)
}

/// TN / (TN + FP) for class `y`.
pub fn specificity(predictions: &[LocationId], labels: &[LocationId], y: LocationId) -> Result<f64> {
    check_lengths(predictions, labels)?;
    let (mut tn, mut negatives) = (0usize, 0usize);
    for (p, l) in predictions.iter().zip(labels) {
        if *l != y {
            negatives += 1;
            tn += usize::from(*p != y);
        }
    }
    if negatives == 0 {
        return Err(Error::UndefinedMetric {
            metric: "specificity",
            location: y,
        });
    }
    Ok(tn as f64 / negatives as f64)
}

/// Youden's J (informedness): sensitivity + specificity - 1.
pub fn youden(sensitivity: f64, specificity: f64) -> f64 {
    sensitivity + specificity - 1.0
}

/// Per-(algorithm, location) informedness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YoudenMatrix {
    algorithms: Vec<Algorithm>,
    locations: Vec<LocationId>,
    /// One row per algorithm, one column per location.
    values: Vec<Vec<f64>>,
    /// Cells whose J was undefined and stored as 0.
    undefined: Vec<(Algorithm, LocationId)>,
}

impl YoudenMatrix {
    /// Explicit matrix; rows follow `algorithms`, columns `locations`.
    pub fn from_values(
        algorithms: Vec<Algorithm>,
        locations: Vec<LocationId>,
        values: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if values.len() != algorithms.len() {
            return Err(Error::LengthMismatch {
                expected: algorithms.len(),
                found: values.len(),
            });
        }
        for row in &values {
            if row.len() != locations.len() {
                return Err(Error::LengthMismatch {
                    expected: locations.len(),
                    found: row.len(),
                });
            }
            if let Some(column) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteFeature { row: 0, column });
            }
        }
        Ok(YoudenMatrix {
            algorithms,
            locations,
            values,
            undefined: Vec::new(),
        })
    }

    /// J for every algorithm and location from hard predictions on the
    /// same labeled rows. Undefined cells become 0 with a warning.
    pub fn compute(
        algorithms: &[Algorithm],
        predictions: &[Vec<LocationId>],
        labels: &[LocationId],
        locations: &[LocationId],
    ) -> Result<Self> {
        if predictions.len() != algorithms.len() {
            return Err(Error::LengthMismatch {
                expected: algorithms.len(),
                found: predictions.len(),
            });
        }
        let mut values = Vec::with_capacity(algorithms.len());
        let mut undefined = Vec::new();
        for (alg, preds) in algorithms.iter().zip(predictions) {
            let mut row = Vec::with_capacity(locations.len());
            for &y in locations {
                let j = match (sensitivity(preds, labels, y), specificity(preds, labels, y)) {
                    (Ok(se), Ok(sp)) => youden(se, sp),
                    (Err(e @ Error::UndefinedMetric { .. }), _) | (_, Err(e @ Error::UndefinedMetric { .. })) => {
                        log::warn!("{}: {e}; its weight is set to 0", alg.name());
                        undefined.push((*alg, y));
                        0.0
                    }
                    (Err(e), _) | (_, Err(e)) => return Err(e),
                };
                row.push(j);
            }
            values.push(row);
        }
        Ok(YoudenMatrix {
            algorithms: algorithms.to_vec(),
            locations: locations.to_vec(),
            values,
            undefined,
        })
    }

    pub fn algorithms(&self) -> &[Algorithm] {
        &self.algorithms
    }

    pub fn locations(&self) -> &[LocationId] {
        &self.locations
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn undefined(&self) -> &[(Algorithm, LocationId)] {
        &self.undefined
    }

    pub fn get(&self, algorithm: Algorithm, location: LocationId) -> Option<f64> {
        let a = self.algorithms.iter().position(|x| *x == algorithm)?;
        let l = self.locations.iter().position(|x| *x == location)?;
        Some(self.values[a][l])
    }

    pub fn mean(&self) -> f64 {
        let n = self.algorithms.len() * self.locations.len();
        self.values.iter().flatten().sum::<f64>() / n.max(1) as f64
    }
}

/// Combined score per location: Q_y = sum over models of w(m, y) * P_m(y),
/// where w is J, or max(J, 0) when `clamp` is set.
///
/// `weights` and `probs` are both model-by-location.
pub fn weighted_scores(weights: &[Vec<f64>], probs: &[Vec<f64>], clamp: bool) -> Result<Vec<f64>> {
    if weights.len() != probs.len() {
        return Err(Error::LengthMismatch {
            expected: weights.len(),
            found: probs.len(),
        });
    }
    let width = weights.first().map_or(0, Vec::len);
    let mut q = vec![0.0; width];
    for (w, p) in weights.iter().zip(probs) {
        for row in [w, p] {
            if row.len() != width {
                return Err(Error::LengthMismatch {
                    expected: width,
                    found: row.len(),
                });
            }
        }
        for ((qy, wy), py) in q.iter_mut().zip(w).zip(p) {
            let wy = if clamp { wy.max(0.0) } else { *wy };
            *qy += wy * py;
        }
    }
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[u32]) -> Vec<LocationId> {
        v.iter().map(|i| LocationId(*i)).collect()
    }

    #[test]
    fn hand_counted_rates() {
        let labels = ids(&[1, 1, 2]);
        let preds = ids(&[1, 2, 2]);
        assert_eq!(sensitivity(&preds, &labels, LocationId(1)).unwrap(), 0.5);
        assert_eq!(specificity(&preds, &labels, LocationId(1)).unwrap(), 1.0);
        assert_eq!(sensitivity(&labels, &labels, LocationId(2)).unwrap(), 1.0);
        assert_eq!(specificity(&labels, &labels, LocationId(2)).unwrap(), 1.0);
        let wrong = ids(&[2, 2, 1]);
        assert_eq!(sensitivity(&wrong, &labels, LocationId(1)).unwrap(), 0.0);
        let always = ids(&[1, 1, 1]);
        assert_eq!(specificity(&always, &labels, LocationId(1)).unwrap(), 0.0);
    }

    #[test]
    fn undefined_rates() {
        let labels = ids(&[1, 1]);
        assert!(matches!(
            sensitivity(&labels, &labels, LocationId(3)),
            Err(Error::UndefinedMetric { .. })
        ));
        assert!(matches!(
            specificity(&labels, &labels, LocationId(1)),
            Err(Error::UndefinedMetric { .. })
        ));
        assert!(matches!(sensitivity(&[], &[], LocationId(1)), Err(Error::EmptyDataset)));
        assert!(sensitivity(&ids(&[1]), &labels, LocationId(1)).is_err());
    }

    #[test]
    fn youden_arithmetic() {
        assert_eq!(youden(1.0, 1.0), 1.0);
        assert_eq!(youden(0.5, 0.5), 0.0);
        assert!((youden(0.9, 0.8) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn undefined_cells_become_zero() {
        let labels = ids(&[1, 1, 2]);
        let m = YoudenMatrix::compute(&[Algorithm::Knn], &[ids(&[1, 1, 2])], &labels, &ids(&[1, 2, 3])).unwrap();
        assert_eq!(m.rows()[0], vec![1.0, 1.0, 0.0]);
        assert_eq!(m.undefined(), &[(Algorithm::Knn, LocationId(3))]);
    }

    #[test]
    fn score_examples() {
        let q = weighted_scores(&[vec![1.0], vec![1.0]], &[vec![0.6], vec![0.8]], true).unwrap();
        assert!((q[0] - 1.4).abs() < 1e-12);
        let q = weighted_scores(&[vec![-0.2], vec![0.5]], &[vec![0.9], vec![0.1]], true).unwrap();
        assert!((q[0] - 0.05).abs() < 1e-12);
        let q = weighted_scores(&[vec![-0.2], vec![0.5]], &[vec![0.9], vec![0.1]], false).unwrap();
        assert!((q[0] - (-0.13)).abs() < 1e-12);
        let q = weighted_scores(&[vec![0.0, 0.0]], &[vec![0.3, 0.7]], true).unwrap();
        assert_eq!(q, vec![0.0, 0.0]);
        assert!(weighted_scores(&[vec![1.0]], &[vec![0.5, 0.5]], true).is_err());
    }
}
