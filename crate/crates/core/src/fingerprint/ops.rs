use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{ApId, Band, Dataset, Fingerprint, Mac, RadioRegistry};
use crate::error::{Error, Result};
use crate::seed;

/// Fewest fingerprints a location needs to land in all three splits.
pub const MIN_FINGERPRINTS_PER_LOCATION: usize = 3;

/// A reshaped dataset and the number of scans that lost every reading.
#[derive(Debug, Clone)]
pub struct Pruned {
    pub dataset: Dataset,
    pub dropped: usize,
}

fn prune(ds: &Dataset, registry: RadioRegistry) -> Result<Pruned> {
    let mut dropped = 0;
    let fingerprints: Vec<Fingerprint> = ds
        .fingerprints()
        .iter()
        .filter_map(|fp| {
            let kept = fp.retain_signals(|m| registry.contains(m));
            dropped += usize::from(kept.is_none());
            kept
        })
        .collect();
    if fingerprints.is_empty() {
        return Err(Error::EmptyResult);
    }
    Ok(Pruned {
        dataset: Dataset::with_parts(fingerprints, ds.locations().clone(), registry),
        dropped,
    })
}

/// Keeps only the readings (and registry radios) of `band`.
pub fn filter_to_band(ds: &Dataset, band: Band) -> Result<Pruned> {
    let registry = ds.registry().retain(|_, info| info.band == band);
    prune(ds, registry)
}

/// Removes every radio of the given APs.
pub fn remove_aps(ds: &Dataset, aps: &BTreeSet<ApId>) -> Result<Pruned> {
    let known = ds.registry().aps();
    if let Some(unknown) = aps.iter().find(|ap| !known.contains_key(*ap)) {
        return Err(Error::UnknownAp(unknown.clone()));
    }
    let removed: BTreeSet<&Mac> = aps.iter().flat_map(|ap| &known[ap]).collect();
    let registry = ds.registry().retain(|mac, _| !removed.contains(mac));
    prune(ds, registry)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.7,
            validation: 0.2,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.validation, self.test];
        let ok = parts.iter().all(|r| r.is_finite() && *r > 0.0)
            && (parts.iter().sum::<f64>() - 1.0).abs() <= 1e-9;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidRatios((self.train, self.validation, self.test)))
        }
    }

    /// Part sizes for `n` items: floors first, leftovers handed out
    /// train, validation, test in turn, then every empty part takes one
    /// item from the largest part.
    fn sizes(&self, n: usize) -> [usize; 3] {
        let ratios = [self.train, self.validation, self.test];
        let mut sizes = ratios.map(|r| ((n as f64) * r + 1e-9).floor() as usize);
        let mut i = 0;
        while sizes.iter().sum::<usize>() < n {
            sizes[i % 3] += 1;
            i += 1;
        }
        for part in 0..3 {
            if sizes[part] == 0 {
                let largest = (0..3).max_by_key(|&p| (sizes[p], 3 - p)).unwrap_or(0);
                if sizes[largest] > 1 {
                    sizes[largest] -= 1;
                    sizes[part] += 1;
                }
            }
        }
        sizes
    }
}

/// Indices into the source dataset, ascending within each part.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified train/validation/test partition, deterministic in `seed`.
pub fn split_dataset(ds: &Dataset, ratios: SplitRatios, seed: u64) -> Result<SplitIndices> {
    ratios.validate()?;
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut split = SplitIndices {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    for (location, mut indices) in ds.indices_by_location() {
        if indices.len() < MIN_FINGERPRINTS_PER_LOCATION {
            return Err(Error::InsufficientFingerprints {
                location,
                count: indices.len(),
                required: MIN_FINGERPRINTS_PER_LOCATION,
            });
        }
        indices.shuffle(&mut seed::child_rng(seed, u64::from(location.0)));
        let [train, validation, _] = ratios.sizes(indices.len());
        split.train.extend_from_slice(&indices[..train]);
        split
            .validation
            .extend_from_slice(&indices[train..train + validation]);
        split.test.extend_from_slice(&indices[train + validation..]);
    }
    split.train.sort_unstable();
    split.validation.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

/// Keeps `round(fraction * count)` random fingerprints per location.
pub fn stratified_subsample(ds: &Dataset, fraction: f64, seed: u64) -> Result<Dataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidFraction(fraction));
    }
    let mut keep = Vec::with_capacity(ds.len());
    for (location, mut indices) in ds.indices_by_location() {
        let k = (fraction * indices.len() as f64).round() as usize;
        if k == 0 {
            return Err(Error::EmptySubsample { location, fraction });
        }
        indices.shuffle(&mut seed::child_rng(seed, u64::from(location.0)));
        keep.extend_from_slice(&indices[..k]);
    }
    keep.sort_unstable();
    Ok(ds.subset(&keep))
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use proptest::prelude::*;

    use super::super::testutil::*;
    use super::super::LocationId;
    use super::*;

    fn uniform(per_location: &[usize], aps: u8) -> Dataset {
        let mut fps = Vec::new();
        for (l, &n) in per_location.iter().enumerate() {
            for i in 0..n {
                let v = -40.0 - (i % 50) as f64;
                let signals: Vec<(u8, f64)> = (0..2 * aps).map(|m| (m, v)).collect();
                fps.push(fp(l as u32 + 1, &signals));
            }
        }
        Dataset::new(fps, locations(per_location.len() as u32), dual_registry(aps)).unwrap()
    }

    #[test]
    fn split_sizes_single_location() {
        let ds = uniform(&[1000], 1);
        let s = split_dataset(&ds, SplitRatios::default(), 1).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (700, 200, 100));
    }

    #[test]
    fn split_is_stratified() {
        let ds = uniform(&[800, 1200], 1);
        let s = split_dataset(&ds, SplitRatios::default(), 9).unwrap();
        let train_at = |l: u32| s.train.iter().filter(|&&i| ds.label(i) == LocationId(l)).count();
        assert_eq!((train_at(1), train_at(2)), (560, 840));
    }

    #[test]
    fn split_deterministic_and_seed_sensitive() {
        let ds = uniform(&[50, 60], 1);
        let a = split_dataset(&ds, SplitRatios::default(), 3).unwrap();
        assert_eq!(a, split_dataset(&ds, SplitRatios::default(), 3).unwrap());
        assert_ne!(a, split_dataset(&ds, SplitRatios::default(), 4).unwrap());
    }

    #[test]
    fn split_small_locations() {
        let ds = uniform(&[3, 2], 1);
        match split_dataset(&ds, SplitRatios::default(), 0) {
            Err(Error::InsufficientFingerprints { location, count, .. }) => {
                assert_eq!((location, count), (LocationId(2), 2))
            }
            other => panic!("unexpected {other:?}"),
        }
        let ds = uniform(&[3, 4], 1);
        let s = split_dataset(&ds, SplitRatios::default(), 0).unwrap();
        for part in [&s.train, &s.validation, &s.test] {
            let locs: BTreeSet<_> = part.iter().map(|&i| ds.label(i)).collect();
            assert_eq!(locs.len(), 2, "every part sees every location");
        }
    }

    #[test]
    fn split_rejects_bad_ratios() {
        let ds = uniform(&[10], 1);
        let bad = SplitRatios {
            train: 0.7,
            validation: 0.2,
            test: 0.2,
        };
        assert!(matches!(split_dataset(&ds, bad, 0), Err(Error::InvalidRatios(_))));
        let zero = SplitRatios {
            train: 1.0,
            validation: 0.0,
            test: 0.0,
        };
        assert!(split_dataset(&ds, zero, 0).is_err());
    }

    #[test]
    fn subsample_cases() {
        let ds = uniform(&[1000, 30], 1);
        assert_eq!(stratified_subsample(&ds, 1.0, 5).unwrap(), ds);
        let half = stratified_subsample(&ds, 0.5, 5).unwrap();
        assert_eq!(half.counts_by_location()[&LocationId(1)], 500);
        assert_eq!(half.counts_by_location()[&LocationId(2)], 15);
        assert!(matches!(stratified_subsample(&ds, 0.0, 5), Err(Error::InvalidFraction(_))));
        assert!(matches!(stratified_subsample(&ds, 1.5, 5), Err(Error::InvalidFraction(_))));
        assert!(matches!(
            stratified_subsample(&ds, 0.01, 5),
            Err(Error::EmptySubsample { .. })
        ));
    }

    #[test]
    fn subsample_forty_percent_of_twenty_thousand() {
        let counts = [800, 1500, 1100, 1250, 1300, 1400, 1450, 1350, 1200, 1000, 1150, 1300, 1250, 1200, 1000, 1750];
        assert_eq!(counts.iter().sum::<usize>(), 20_000);
        let ds = uniform(&counts, 1);
        let sub = stratified_subsample(&ds, 0.4, 1).unwrap();
        assert!((sub.len() as i64 - 8000).abs() <= counts.len() as i64);
    }

    #[test]
    fn band_filter() {
        let ds = uniform(&[5], 15);
        let only24 = filter_to_band(&ds, Band::Band24).unwrap();
        assert_eq!(only24.dataset.registry().len(), 15);
        assert_eq!(only24.dropped, 0);
        let again = filter_to_band(&only24.dataset, Band::Band24).unwrap();
        assert_eq!(again.dataset, only24.dataset);
        // Scans that only heard 5 GHz radios disappear.
        let mixed = Dataset::new(
            vec![fp(1, &[(0, -50.0)]), fp(1, &[(1, -50.0)])],
            locations(1),
            dual_registry(1),
        )
        .unwrap();
        let pruned = filter_to_band(&mixed, Band::Band24).unwrap();
        assert_eq!((pruned.dataset.len(), pruned.dropped), (1, 1));
        let only5 = Dataset::new(vec![fp(1, &[(1, -50.0)])], locations(1), dual_registry(1)).unwrap();
        assert!(matches!(filter_to_band(&only5, Band::Band24), Err(Error::EmptyResult)));
    }

    #[test]
    fn ap_removal() {
        let ds = uniform(&[5], 15);
        let drop: BTreeSet<ApId> = (0..5).map(|k| ApId(format!("ap{k:02}"))).collect();
        let pruned = remove_aps(&ds, &drop).unwrap();
        assert_eq!(pruned.dataset.registry().len(), 20);
        assert_eq!(remove_aps(&ds, &BTreeSet::new()).unwrap().dataset, ds);
        let all: BTreeSet<ApId> = ds.registry().aps().into_keys().collect();
        assert!(matches!(remove_aps(&ds, &all), Err(Error::EmptyResult)));
        let unknown: BTreeSet<ApId> = [ApId("nope".into())].into();
        assert!(matches!(remove_aps(&ds, &unknown), Err(Error::UnknownAp(_))));
    }

    proptest! {
        #[test]
        fn split_partitions_input(counts in prop::collection::vec(3usize..40, 1..5), seed in any::<u64>()) {
            let ds = uniform(&counts, 1);
            let s = split_dataset(&ds, SplitRatios::default(), seed).unwrap();
            let mut all: Vec<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..ds.len()).collect::<Vec<_>>());
        }

        #[test]
        fn subsample_keeps_proportions(counts in prop::collection::vec(5usize..200, 1..5), fraction in 0.3f64..=1.0, seed in any::<u64>()) {
            let ds = uniform(&counts, 1);
            let sub = stratified_subsample(&ds, fraction, seed).unwrap();
            let before = ds.counts_by_location();
            let after: BTreeMap<_, _> = sub.counts_by_location();
            for (loc, n) in before {
                let expected = fraction * n as f64;
                prop_assert!((after[&loc] as f64 - expected).abs() <= 1.0);
            }
        }
    }
}
