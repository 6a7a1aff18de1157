//! Fingerprint domain model: radios, scans, labeled datasets and the
//! operations used to reshape them before training.

mod coverage;
mod feature;
pub mod io;
mod ops;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use coverage::{coverage_table, redundancy_ranking, CoverageTable, DEFAULT_VISIBILITY_DBM};
pub use feature::{detect_band_profile, FeatureSpace, FeatureVector, Vectorized, DEFAULT_SENTINEL_DBM};
pub use ops::{
    filter_to_band, remove_aps, split_dataset, stratified_subsample, Pruned, SplitIndices,
    SplitRatios, MIN_FINGERPRINTS_PER_LOCATION,
};

/// Weakest reading accepted at ingestion, in dBm.
pub const RSSI_FLOOR_DBM: f64 = -100.0;
/// Strongest reading accepted at ingestion, in dBm.
pub const RSSI_CEILING_DBM: f64 = 0.0;

/// Normalized MAC address: lowercase hex octets joined by colons.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Mac(String);

impl Mac {
    pub fn parse(raw: &str) -> Result<Self> {
        let hex: String = raw
            .trim()
            .chars()
            .filter(|c| !matches!(c, ':' | '-' | '.'))
            .collect();
        if hex.len() != 12 || !hex.chars().all(|c| c.is_ascii_hexdigit()) {
            return Err(Error::InvalidMac(raw.to_string()));
        }
        let hex = hex.to_ascii_lowercase();
        let octets: Vec<&str> = (0..6).map(|i| &hex[2 * i..2 * i + 2]).collect();
        Ok(Mac(octets.join(":")))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// First five octets; radios of one dual-band AP usually share it.
    fn prefix(&self) -> &str {
        &self.0[..14]
    }
}

impl fmt::Display for Mac {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for Mac {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mac::parse(s)
    }
}

impl Serialize for Mac {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for Mac {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        Mac::parse(&raw).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Band {
    #[serde(rename = "2.4")]
    Band24,
    #[serde(rename = "5")]
    Band5,
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Band::Band24 => f.write_str("2.4"),
            Band::Band5 => f.write_str("5"),
        }
    }
}

impl FromStr for Band {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().trim_end_matches("ghz").trim() {
            "2.4" | "2" | "24" => Ok(Band::Band24),
            "5" | "5.0" => Ok(Band::Band5),
            _ => Err(Error::InvalidBand(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RadioId {
    pub mac: Mac,
    pub band: Band,
}

/// Which feature space a scan can be served by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BandProfile {
    #[serde(rename = "dual")]
    DualBand,
    #[serde(rename = "2.4-only")]
    Band24Only,
}

impl fmt::Display for BandProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BandProfile::DualBand => f.write_str("dual"),
            BandProfile::Band24Only => f.write_str("2.4-only"),
        }
    }
}

impl FromStr for BandProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dual" | "dual-band" => Ok(BandProfile::DualBand),
            "2.4" | "2.4-only" | "24" | "band24" => Ok(BandProfile::Band24Only),
            _ => Err(Error::InvalidBand(s.to_string())),
        }
    }
}

/// Location (area) label. Ordering defines every argmax tie-break.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LocationId(pub u32);

impl fmt::Display for LocationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for LocationId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().parse::<u32>() {
            Ok(id) if id > 0 => Ok(LocationId(id)),
            _ => Err(Error::InvalidLocation(s.to_string())),
        }
    }
}

/// Access point identifier; an AP owns one radio per band.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ApId(pub String);

impl fmt::Display for ApId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One scan: the RSSI of every radio a device heard at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct Fingerprint {
    pub device_id: String,
    pub ts_ms: i64,
    pub location: Option<LocationId>,
    signals: BTreeMap<Mac, f64>,
}

impl Fingerprint {
    /// Builds a scan, clamping readings into `[-100, 0]` dBm.
    pub fn new(
        device_id: impl Into<String>,
        ts_ms: i64,
        location: Option<LocationId>,
        signals: impl IntoIterator<Item = (Mac, f64)>,
    ) -> Result<Self> {
        let mut map = BTreeMap::new();
        let mut clamped = 0usize;
        for (mac, rssi) in signals {
            if !rssi.is_finite() {
                return Err(Error::NonFiniteRssi(rssi));
            }
            let (value, was_clamped) = clamp_rssi(rssi);
            clamped += usize::from(was_clamped);
            if map.insert(mac.clone(), value).is_some() {
                return Err(Error::DuplicateRadio(mac));
            }
        }
        if map.is_empty() {
            return Err(Error::EmptySignals);
        }
        let device_id = device_id.into();
        if clamped > 0 {
            log::warn!("clamped {clamped} out-of-range RSSI readings from device {device_id}");
        }
        Ok(Fingerprint {
            device_id,
            ts_ms,
            location,
            signals: map,
        })
    }

    pub fn signals(&self) -> &BTreeMap<Mac, f64> {
        &self.signals
    }

    pub fn rssi(&self, mac: &Mac) -> Option<f64> {
        self.signals.get(mac).copied()
    }

    /// Drops readings rejected by `keep`; `None` when nothing is left.
    pub fn retain_signals(&self, mut keep: impl FnMut(&Mac) -> bool) -> Option<Fingerprint> {
        let signals: BTreeMap<Mac, f64> = self
            .signals
            .iter()
            .filter(|(mac, _)| keep(mac))
            .map(|(m, v)| (m.clone(), *v))
            .collect();
        if signals.is_empty() {
            None
        } else {
            Some(Fingerprint {
                device_id: self.device_id.clone(),
                ts_ms: self.ts_ms,
                location: self.location,
                signals,
            })
        }
    }

    pub fn with_location(mut self, location: Option<LocationId>) -> Self {
        self.location = location;
        self
    }
}

/// Clamps a reading into the accepted range; reports whether it moved.
pub fn clamp_rssi(rssi: f64) -> (f64, bool) {
    let clamped = rssi.clamp(RSSI_FLOOR_DBM, RSSI_CEILING_DBM);
    (clamped, clamped != rssi)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RadioInfo {
    pub band: Band,
    pub ap: ApId,
}

/// Maps every known radio MAC to its band and owning AP.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RadioRegistry {
    radios: BTreeMap<Mac, RadioInfo>,
}

impl RadioRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, mac: Mac, band: Band, ap: ApId) {
        self.radios.insert(mac, RadioInfo { band, ap });
    }

    /// Registry from `(mac, band)` pairs with AP grouping inferred: radios
    /// sharing their first five octets with exactly one radio per band are
    /// grouped under one AP, every other radio is its own AP. The AP id is
    /// the smallest MAC of the group.
    pub fn with_inferred_aps(radios: impl IntoIterator<Item = (Mac, Band)>) -> Self {
        let mut by_prefix: BTreeMap<String, Vec<(Mac, Band)>> = BTreeMap::new();
        for (mac, band) in radios {
            by_prefix
                .entry(mac.prefix().to_string())
                .or_default()
                .push((mac, band));
        }
        let mut registry = RadioRegistry::new();
        for (_, mut group) in by_prefix {
            group.sort();
            group.dedup_by(|a, b| a.0 == b.0);
            let paired = group.len() == 2 && group[0].1 != group[1].1;
            if paired {
                let ap = ApId(group[0].0.to_string());
                for (mac, band) in group {
                    registry.insert(mac, band, ap.clone());
                }
            } else {
                for (mac, band) in group {
                    let ap = ApId(mac.to_string());
                    registry.insert(mac, band, ap);
                }
            }
        }
        registry
    }

    pub fn len(&self) -> usize {
        self.radios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.radios.is_empty()
    }

    pub fn get(&self, mac: &Mac) -> Option<&RadioInfo> {
        self.radios.get(mac)
    }

    pub fn band(&self, mac: &Mac) -> Option<Band> {
        self.radios.get(mac).map(|r| r.band)
    }

    pub fn contains(&self, mac: &Mac) -> bool {
        self.radios.contains_key(mac)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Mac, &RadioInfo)> {
        self.radios.iter()
    }

    pub fn radios(&self) -> impl Iterator<Item = RadioId> + '_ {
        self.radios.iter().map(|(mac, info)| RadioId {
            mac: mac.clone(),
            band: info.band,
        })
    }

    pub fn bands(&self) -> BTreeSet<Band> {
        self.radios.values().map(|r| r.band).collect()
    }

    /// AP → its radio MACs, both sorted.
    pub fn aps(&self) -> BTreeMap<ApId, Vec<Mac>> {
        let mut aps: BTreeMap<ApId, Vec<Mac>> = BTreeMap::new();
        for (mac, info) in &self.radios {
            aps.entry(info.ap.clone()).or_default().push(mac.clone());
        }
        aps
    }

    pub fn retain(&self, mut keep: impl FnMut(&Mac, &RadioInfo) -> bool) -> RadioRegistry {
        RadioRegistry {
            radios: self
                .radios
                .iter()
                .filter(|(m, i)| keep(m, i))
                .map(|(m, i)| (m.clone(), i.clone()))
                .collect(),
        }
    }
}

/// Labeled fingerprints plus the location set and radio registry they
/// refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    fingerprints: Vec<Fingerprint>,
    locations: BTreeMap<LocationId, String>,
    registry: RadioRegistry,
}

impl Dataset {
    pub fn new(
        fingerprints: Vec<Fingerprint>,
        locations: BTreeMap<LocationId, String>,
        registry: RadioRegistry,
    ) -> Result<Self> {
        for (index, fp) in fingerprints.iter().enumerate() {
            let location = fp.location.ok_or(Error::MissingLabel { index })?;
            if !locations.contains_key(&location) {
                return Err(Error::UnregisteredLocation { index, location });
            }
            if let Some(mac) = fp.signals.keys().find(|m| !registry.contains(m)) {
                return Err(Error::UnregisteredRadio(mac.clone()));
            }
        }
        Ok(Dataset {
            fingerprints,
            locations,
            registry,
        })
    }

    /// Like [`Dataset::new`] but drops readings from unregistered radios
    /// and the scans left empty or unlabeled. Returns the number of
    /// dropped readings and scans.
    pub fn new_lenient(
        fingerprints: Vec<Fingerprint>,
        locations: BTreeMap<LocationId, String>,
        registry: RadioRegistry,
    ) -> Result<(Self, usize, usize)> {
        let mut unknown_readings = 0;
        let mut dropped = 0;
        let mut kept = Vec::with_capacity(fingerprints.len());
        for fp in fingerprints {
            let labeled = fp.location.is_some_and(|l| locations.contains_key(&l));
            if !labeled {
                dropped += 1;
                continue;
            }
            let before = fp.signals.len();
            match fp.retain_signals(|m| registry.contains(m)) {
                Some(clean) => {
                    unknown_readings += before - clean.signals.len();
                    kept.push(clean);
                }
                None => {
                    unknown_readings += before;
                    dropped += 1;
                }
            }
        }
        let ds = Dataset::new(kept, locations, registry)?;
        Ok((ds, unknown_readings, dropped))
    }

    pub fn fingerprints(&self) -> &[Fingerprint] {
        &self.fingerprints
    }

    pub fn len(&self) -> usize {
        self.fingerprints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fingerprints.is_empty()
    }

    pub fn locations(&self) -> &BTreeMap<LocationId, String> {
        &self.locations
    }

    pub fn registry(&self) -> &RadioRegistry {
        &self.registry
    }

    /// Location of fingerprint `i`; always present by construction.
    pub fn label(&self, i: usize) -> LocationId {
        self.fingerprints[i]
            .location
            .expect("dataset fingerprints are labeled")
    }

    pub fn labels(&self) -> Vec<LocationId> {
        (0..self.len()).map(|i| self.label(i)).collect()
    }

    /// Indices of the fingerprints at each location, ascending.
    pub fn indices_by_location(&self) -> BTreeMap<LocationId, Vec<usize>> {
        let mut by: BTreeMap<LocationId, Vec<usize>> = BTreeMap::new();
        for i in 0..self.len() {
            by.entry(self.label(i)).or_default().push(i);
        }
        by
    }

    pub fn counts_by_location(&self) -> BTreeMap<LocationId, usize> {
        let mut counts: BTreeMap<LocationId, usize> =
            self.locations.keys().map(|l| (*l, 0)).collect();
        for i in 0..self.len() {
            *counts.entry(self.label(i)).or_default() += 1;
        }
        counts
    }

    /// The fingerprints at `indices`, same locations and registry.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            fingerprints: indices.iter().map(|&i| self.fingerprints[i].clone()).collect(),
            locations: self.locations.clone(),
            registry: self.registry.clone(),
        }
    }

    /// Same data with location labels replaced, used for null-model checks.
    pub fn relabeled(&self, labels: &[LocationId]) -> Result<Dataset> {
        if labels.len() != self.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                found: labels.len(),
            });
        }
        let fps = self
            .fingerprints
            .iter()
            .zip(labels)
            .map(|(fp, l)| fp.clone().with_location(Some(*l)))
            .collect();
        Dataset::new(fps, self.locations.clone(), self.registry.clone())
    }

    pub(crate) fn with_parts(
        fingerprints: Vec<Fingerprint>,
        locations: BTreeMap<LocationId, String>,
        registry: RadioRegistry,
    ) -> Dataset {
        Dataset {
            fingerprints,
            locations,
            registry,
        }
    }

    /// SHA-256 over labels, readings, locations and registry. Device ids
    /// and timestamps are excluded so equivalent CSV and JSONL inputs
    /// hash identically.
    pub fn content_digest(&self) -> String {
        let mut h = Sha256::new();
        for (id, name) in &self.locations {
            h.update(format!("L{id}={name}\n"));
        }
        for (mac, info) in &self.registry.radios {
            h.update(format!("R{mac}={},{}\n", info.band, info.ap));
        }
        for i in 0..self.len() {
            h.update(format!("F{}", self.label(i)));
            for (mac, rssi) in &self.fingerprints[i].signals {
                h.update(format!("|{mac}={rssi}"));
            }
            h.update("\n");
        }
        hex::encode(h.finalize())
    }
}
