use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Band, BandProfile, Dataset, Fingerprint, RadioId, RadioRegistry, RSSI_FLOOR_DBM};
use crate::error::{Error, Result};

/// Value substituted for radios a scan did not hear.
pub const DEFAULT_SENTINEL_DBM: f64 = -100.0;

/// Canonical ordered radio list defining the dense vector encoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpace {
    radios: Vec<RadioId>,
    sentinel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vectorized {
    pub vector: FeatureVector,
    /// Readings from radios outside the feature space.
    pub unknown: usize,
}

impl FeatureSpace {
    pub fn new(mut radios: Vec<RadioId>, sentinel: f64) -> Result<Self> {
        if radios.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if !sentinel.is_finite() || sentinel > RSSI_FLOOR_DBM {
            return Err(Error::InvalidConfig(format!(
                "sentinel {sentinel} dBm must be finite and at most {RSSI_FLOOR_DBM} dBm"
            )));
        }
        radios.sort_by(|a, b| a.mac.cmp(&b.mac));
        radios.dedup_by(|a, b| a.mac == b.mac);
        Ok(FeatureSpace { radios, sentinel })
    }

    /// Every registry radio, ordered by MAC.
    pub fn canonical(ds: &Dataset, sentinel: f64) -> Result<Self> {
        if ds.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Self::new(ds.registry().radios().collect(), sentinel)
    }

    pub fn radios(&self) -> &[RadioId] {
        &self.radios
    }

    pub fn len(&self) -> usize {
        self.radios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.radios.is_empty()
    }

    pub fn sentinel(&self) -> f64 {
        self.sentinel
    }

    pub fn count_band(&self, band: Band) -> usize {
        self.radios.iter().filter(|r| r.band == band).count()
    }

    pub fn vectorize(&self, fp: &Fingerprint) -> FeatureVector {
        self.vectorize_counted(fp).vector
    }

    pub fn vectorize_counted(&self, fp: &Fingerprint) -> Vectorized {
        let values: Vec<f64> = self
            .radios
            .iter()
            .map(|r| fp.rssi(&r.mac).unwrap_or(self.sentinel))
            .collect();
        let unknown = fp
            .signals()
            .keys()
            .filter(|m| self.radios.binary_search_by(|r| r.mac.cmp(m)).is_err())
            .count();
        Vectorized {
            vector: FeatureVector(values),
            unknown,
        }
    }

    /// Hex SHA-256 of the ordered MAC list; models record it to reject
    /// queries from a different space.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for r in &self.radios {
            h.update(r.mac.as_str());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }
}

/// A scan hearing no 5 GHz radio comes from a 2.4 GHz-only device.
pub fn detect_band_profile(fp: &Fingerprint, registry: &RadioRegistry) -> Result<BandProfile> {
    let mut known = 0usize;
    let mut has_5 = false;
    for mac in fp.signals().keys() {
        if let Some(band) = registry.band(mac) {
            known += 1;
            has_5 |= band == Band::Band5;
        }
    }
    match (known, has_5) {
        (0, _) => Err(Error::UnrecognizedScan),
        (_, true) => Ok(BandProfile::DualBand),
        (_, false) => Ok(BandProfile::Band24Only),
    }
}
