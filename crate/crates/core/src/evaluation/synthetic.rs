use std::collections::BTreeMap;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fingerprint::{ApId, Band, Dataset, Fingerprint, LocationId, Mac, RadioRegistry};
use crate::seed;

/// Strongest reading the generator emits.
pub const SYNTHETIC_MAX_DBM: f64 = -30.0;
/// Readings below this are treated as not heard.
pub const SYNTHETIC_VISIBLE_DBM: f64 = -95.0;

/// Closest distance used in the path-loss formula, in metres.
const MIN_DISTANCE_M: f64 = 0.1;
/// Draws per sample before a cell is declared out of range.
const MAX_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticAp {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCell {
    pub id: LocationId,
    pub name: String,
    /// Simple polygon, vertices in metres.
    pub polygon: Vec<(f64, f64)>,
}

/// Log-distance path-loss floor model used as a test fixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub width_m: f64,
    pub height_m: f64,
    pub aps: Vec<SyntheticAp>,
    pub cells: Vec<SyntheticCell>,
    pub path_loss_exponent: f64,
    /// Received power at 1 m, dBm.
    pub ref_power_dbm: f64,
    /// Shadowing standard deviation, dB.
    pub sigma_db: f64,
    pub samples_per_location: usize,
    /// Give every AP a 5 GHz radio as well as a 2.4 GHz one.
    pub dual_band: bool,
    pub seed: u64,
}

/// Noise-free received power at `distance_m`.
pub fn path_loss_rssi(ref_power_dbm: f64, exponent: f64, distance_m: f64) -> f64 {
    ref_power_dbm - 10.0 * exponent * distance_m.max(MIN_DISTANCE_M).log10()
}

/// Extra free-space loss of 5 GHz relative to 2.4 GHz at equal distance.
pub fn band5_extra_loss_db() -> f64 {
    20.0 * (5.0f64 / 2.4).log10()
}

/// MAC of an AP's radio; both radios of an AP share the first five octets.
pub fn synthetic_mac(ap: usize, band: Band) -> Mac {
    let last = match band {
        Band::Band24 => 0x24,
        Band::Band5 => 0x50,
    };
    Mac::parse(&format!("02:00:00:{:02x}:{:02x}:{last:02x}", ap >> 8, ap & 0xff)).expect("valid MAC")
}

fn square(cx: f64, cy: f64, side: f64) -> Vec<(f64, f64)> {
    let h = side / 2.0;
    vec![(cx - h, cy - h), (cx + h, cy - h), (cx + h, cy + h), (cx - h, cy + h)]
}

fn contains(polygon: &[(f64, f64)], (x, y): (f64, f64)) -> bool {
    let mut inside = false;
    let mut j = polygon.len() - 1;
    for i in 0..polygon.len() {
        let (xi, yi) = polygon[i];
        let (xj, yj) = polygon[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn area(polygon: &[(f64, f64)]) -> f64 {
    let n = polygon.len();
    (0..n)
        .map(|i| {
            let (a, b) = (polygon[i], polygon[(i + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum::<f64>()
        .abs()
        / 2.0
}

impl SyntheticConfig {
    /// `cols` x `rows` square cells of side `cell_m` whose centres are
    /// `spacing_m` apart, with `n_aps` APs spread over the floor.
    pub fn grid(cols: usize, rows: usize, cell_m: f64, spacing_m: f64, n_aps: usize) -> Self {
        let margin = spacing_m / 2.0;
        let width_m = spacing_m * cols as f64;
        let height_m = spacing_m * rows as f64;
        let mut cells = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let id = (r * cols + c + 1) as u32;
                cells.push(SyntheticCell {
                    id: LocationId(id),
                    name: format!("cell-{id}"),
                    polygon: square(margin + c as f64 * spacing_m, margin + r as f64 * spacing_m, cell_m),
                });
            }
        }
        // APs on a regular lattice covering the floor, offset from the
        // cell centres so no two cells see identical distances.
        let ap_cols = ((n_aps as f64 * width_m / height_m.max(1e-9)).sqrt().ceil() as usize).max(1);
        let ap_rows = n_aps.div_ceil(ap_cols);
        let aps = (0..n_aps)
            .map(|i| {
                let (c, r) = (i % ap_cols, i / ap_cols);
                SyntheticAp {
                    x: width_m * (c as f64 + 0.5) / ap_cols as f64 + 1.3,
                    y: height_m * (r as f64 + 0.5) / ap_rows as f64 + 0.7,
                }
            })
            .collect();
        SyntheticConfig {
            width_m,
            height_m,
            aps,
            cells,
            ..SyntheticConfig::default()
        }
    }

    /// Sixteen rooms in a 4 x 4 layout with fifteen dual-band APs.
    pub fn museum_like() -> Self {
        SyntheticConfig {
            samples_per_location: 200,
            ..SyntheticConfig::grid(4, 4, 6.0, 12.0, 15)
        }
    }

    pub fn with_sigma(mut self, sigma_db: f64) -> Self {
        self.sigma_db = sigma_db;
        self
    }

    pub fn with_samples(mut self, samples: usize) -> Self {
        self.samples_per_location = samples;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidGeometry(m));
        if self.cells.len() < 2 {
            return bad("at least two location cells are required".into());
        }
        if self.aps.is_empty() {
            return bad("at least one access point is required".into());
        }
        if !(self.sigma_db >= 0.0) || !self.sigma_db.is_finite() {
            return bad(format!("shadowing sigma must be finite and non-negative, got {}", self.sigma_db));
        }
        if !(self.path_loss_exponent > 0.0) || !self.ref_power_dbm.is_finite() {
            return bad("path-loss exponent must be positive and reference power finite".into());
        }
        if self.samples_per_location == 0 {
            return bad("samples per location must be positive".into());
        }
        if self.aps.len() > 0xffff {
            return bad("too many access points".into());
        }
        let mut ids: Vec<LocationId> = self.cells.iter().map(|c| c.id).collect();
        ids.sort();
        ids.dedup();
        if ids.len() != self.cells.len() || ids.first().is_some_and(|id| id.0 == 0) {
            return bad("cell ids must be distinct and positive".into());
        }
        for cell in &self.cells {
            let finite = cell.polygon.iter().all(|(x, y)| x.is_finite() && y.is_finite());
            if cell.polygon.len() < 3 || !finite || area(&cell.polygon) <= 0.0 {
                return bad(format!("cell {} needs a polygon with positive area", cell.id));
            }
        }
        Ok(())
    }

    pub fn registry(&self) -> RadioRegistry {
        let mut reg = RadioRegistry::new();
        for k in 0..self.aps.len() {
            let ap = ApId(format!("ap{:02}", k + 1));
            reg.insert(synthetic_mac(k, Band::Band24), Band::Band24, ap.clone());
            if self.dual_band {
                reg.insert(synthetic_mac(k, Band::Band5), Band::Band5, ap);
            }
        }
        reg
    }
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            width_m: 0.0,
            height_m: 0.0,
            aps: Vec::new(),
            cells: Vec::new(),
            path_loss_exponent: 2.5,
            ref_power_dbm: -40.0,
            sigma_db: 6.0,
            samples_per_location: 100,
            dual_band: true,
            seed: 0,
        }
    }
}

/// Samples `samples_per_location` labeled scans uniformly inside every
/// cell. Deterministic in `cfg.seed`.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Dataset> {
    cfg.validate()?;
    let noise = Normal::new(0.0, cfg.sigma_db).map_err(|e| Error::InvalidGeometry(e.to_string()))?;
    let extra5 = band5_extra_loss_db();
    let mut radios = vec![(Band::Band24, 0.0)];
    if cfg.dual_band {
        radios.push((Band::Band5, extra5));
    }
    let mut fingerprints = Vec::with_capacity(cfg.cells.len() * cfg.samples_per_location);
    let mut locations = BTreeMap::new();
    let mut ts = 0i64;
    for cell in &cfg.cells {
        locations.insert(cell.id, cell.name.clone());
        let mut rng = seed::child_rng(cfg.seed, u64::from(cell.id.0));
        let (min_x, max_x) = cell.polygon.iter().fold((f64::MAX, f64::MIN), |(a, b), p| (a.min(p.0), b.max(p.0)));
        let (min_y, max_y) = cell.polygon.iter().fold((f64::MAX, f64::MIN), |(a, b), p| (a.min(p.1), b.max(p.1)));
        for _ in 0..cfg.samples_per_location {
            let mut attempts = 0;
            let fp = loop {
                attempts += 1;
                if attempts > MAX_ATTEMPTS {
                    return Err(Error::InvalidGeometry(format!("cell {} hears no access point", cell.id)));
                }
                let point = (rng.random_range(min_x..=max_x), rng.random_range(min_y..=max_y));
                if !contains(&cell.polygon, point) {
                    continue;
                }
                let mut signals = Vec::new();
                for (k, ap) in cfg.aps.iter().enumerate() {
                    let d = ((ap.x - point.0).powi(2) + (ap.y - point.1).powi(2)).sqrt();
                    let mean = path_loss_rssi(cfg.ref_power_dbm, cfg.path_loss_exponent, d);
                    for &(band, extra) in &radios {
                        let rssi = (mean - extra + noise.sample(&mut rng)).clamp(-100.0, SYNTHETIC_MAX_DBM);
                        if rssi >= SYNTHETIC_VISIBLE_DBM {
                            signals.push((synthetic_mac(k, band), rssi));
                        }
                    }
                }
                if !signals.is_empty() {
                    break Fingerprint::new("synthetic", ts, Some(cell.id), signals)?;
                }
            };
            ts += 1000;
            fingerprints.push(fp);
        }
    }
    Dataset::new(fingerprints, locations, cfg.registry())
}
