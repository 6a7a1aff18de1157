use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ApId, Dataset, LocationId, Mac};

/// Typical receiver sensitivity; a reading at or above it counts as seen.
pub const DEFAULT_VISIBILITY_DBM: f64 = -90.0;

/// A location counts an AP as covering when at least this share of its
/// scans see one of the AP's radios.
const COVERING_RATIO: f64 = 0.5;

/// Per (location, AP) share of scans that see the AP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageTable {
    pub threshold_dbm: f64,
    pub locations: Vec<LocationId>,
    pub aps: Vec<ApId>,
    /// `ratios[location][ap]`, in the order of `locations` and `aps`.
    pub ratios: Vec<Vec<f64>>,
    /// Number of APs with ratio >= 0.5 at each location.
    pub covering_aps: Vec<usize>,
}

impl CoverageTable {
    pub fn ratio(&self, location: LocationId, ap: &ApId) -> Option<f64> {
        let l = self.locations.iter().position(|x| *x == location)?;
        let a = self.aps.iter().position(|x| x == ap)?;
        Some(self.ratios[l][a])
    }

    pub fn covering(&self, location: LocationId) -> Option<usize> {
        let l = self.locations.iter().position(|x| *x == location)?;
        Some(self.covering_aps[l])
    }

    pub fn min_covering(&self) -> usize {
        self.covering_aps.iter().copied().min().unwrap_or(0)
    }
}

pub fn coverage_table(ds: &Dataset, visibility_threshold: f64) -> CoverageTable {
    let aps = ds.registry().aps();
    let ap_ids: Vec<ApId> = aps.keys().cloned().collect();
    let by_location = ds.indices_by_location();
    let locations: Vec<LocationId> = by_location.keys().copied().collect();
    let mut ratios = Vec::with_capacity(locations.len());
    let mut covering_aps = Vec::with_capacity(locations.len());
    for indices in by_location.values() {
        let row: Vec<f64> = aps
            .values()
            .map(|radios| {
                let seen = indices
                    .iter()
                    .filter(|&&i| sees_ap(ds, i, radios, visibility_threshold))
                    .count();
                seen as f64 / indices.len() as f64
            })
            .collect();
        covering_aps.push(row.iter().filter(|r| **r >= COVERING_RATIO).count());
        ratios.push(row);
    }
    CoverageTable {
        threshold_dbm: visibility_threshold,
        locations,
        aps: ap_ids,
        ratios,
        covering_aps,
    }
}

fn sees_ap(ds: &Dataset, i: usize, radios: &[Mac], threshold: f64) -> bool {
    let fp = &ds.fingerprints()[i];
    radios
        .iter()
        .any(|m| fp.rssi(m).is_some_and(|v| v >= threshold))
}

/// Orders APs from most to least redundant.
///
/// Greedy: at each step drop the AP whose removal keeps the largest
/// minimum number of covering APs per location. Ties go to the AP with
/// the highest mean RSSI correlation with the APs still present, then to
/// the smallest radio MAC.
pub fn redundancy_ranking(ds: &Dataset, threshold: f64) -> Vec<ApId> {
    let aps = ds.registry().aps();
    let ids: Vec<ApId> = aps.keys().cloned().collect();
    if ids.len() < 2 {
        return ids;
    }
    let table = coverage_table(ds, threshold);
    let covers: Vec<Vec<bool>> = table
        .ratios
        .iter()
        .map(|row| row.iter().map(|r| *r >= COVERING_RATIO).collect())
        .collect();
    let corr = ap_correlations(ds, &aps);
    let min_mac: Vec<&Mac> = aps.values().map(|r| &r[0]).collect();

    let mut remaining: Vec<usize> = (0..ids.len()).collect();
    let mut order = Vec::with_capacity(ids.len());
    while !remaining.is_empty() {
        let key = |a: usize| {
            let min_cover = covers
                .iter()
                .map(|row| remaining.iter().filter(|&&b| b != a && row[b]).count())
                .min()
                .unwrap_or(0);
            let others: Vec<usize> = remaining.iter().copied().filter(|&b| b != a).collect();
            let mean_corr = if others.is_empty() {
                0.0
            } else {
                others.iter().map(|&b| corr[a][b]).sum::<f64>() / others.len() as f64
            };
            (min_cover, mean_corr)
        };
        let best = remaining
            .iter()
            .copied()
            .map(|a| (a, key(a)))
            .max_by(|(a, ka), (b, kb)| {
                ka.0.cmp(&kb.0)
                    .then(ka.1.total_cmp(&kb.1))
                    .then_with(|| min_mac[*b].cmp(min_mac[*a]))
            })
            .map(|(a, _)| a)
            .expect("remaining is non-empty");
        remaining.retain(|&a| a != best);
        order.push(ids[best].clone());
    }
    order
}

/// Pearson correlation between per-scan AP strengths (strongest radio,
/// sentinel when unheard).
fn ap_correlations(ds: &Dataset, aps: &BTreeMap<ApId, Vec<Mac>>) -> Vec<Vec<f64>> {
    let columns: Vec<Vec<f64>> = aps
        .values()
        .map(|radios| {
            ds.fingerprints()
                .iter()
                .map(|fp| {
                    radios
                        .iter()
                        .filter_map(|m| fp.rssi(m))
                        .max_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal))
                        .unwrap_or(super::DEFAULT_SENTINEL_DBM)
                })
                .collect()
        })
        .collect();
    let n = columns.len();
    let mut corr = vec![vec![0.0; n]; n];
    for a in 0..n {
        for b in a..n {
            let c = pearson(&columns[a], &columns[b]);
            corr[a][b] = c;
            corr[b][a] = c;
        }
    }
    corr
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    if x.is_empty() {
        return 0.0;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}
