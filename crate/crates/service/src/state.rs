use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock, Weak};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use wifiloc_core::ensemble::{train_bundle, EnsembleConfig, LocalizerBundle, LocationScores, ModelAccuracy};
use wifiloc_core::fingerprint::io::{read_locations, read_registry, ScanRecord, STORE_FINGERPRINTS, STORE_LOCATIONS, STORE_RADIOS};
use wifiloc_core::evaluation::dataset_for_band;
use wifiloc_core::fingerprint::{BandProfile, Dataset, Fingerprint, LocationId, RadioRegistry};
use wifiloc_core::tracker::TrackerState;
use wifiloc_core::ErrorClass;

use crate::config::ServiceConfig;
use crate::persist::{bundle_path, read_log, LogFile, LogWriter, ModelRegistry, ModelVersion};
use crate::ServiceError;

const PREDICTIONS_FILE: &str = "predictions.jsonl";
const REGISTRY_FILE: &str = "registry.json";
const MODELS_DIR: &str = "models";

fn now_ms() -> i64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as i64)
}

/// One answered `/track` call, as stored in the history log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    /// Position in the history log.
    pub seq: u64,
    pub device_id: String,
    /// Scan time reported by the device, or receipt time if it sent none.
    pub timestamp_ms: i64,
    pub received_ms: i64,
    /// Raw estimate before smoothing.
    pub location: LocationId,
    pub scores: LocationScores,
    pub band: BandProfile,
    pub smoothed_area: Option<LocationId>,
    pub changed: bool,
    pub first_visit: bool,
    pub model_version: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackResponse {
    pub location: LocationId,
    pub scores: LocationScores,
    pub band: BandProfile,
    pub smoothed_area: Option<LocationId>,
    pub changed: bool,
    pub first_visit: bool,
    pub model_version: u64,
    /// Readings from radios the model does not know.
    pub ignored_readings: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnResponse {
    pub accepted: bool,
    pub total_for_location: usize,
    /// Readings dropped because their radio is not registered.
    pub ignored_readings: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRequest {
    pub seed: Option<u64>,
    /// Partial ensemble configuration merged over the service's.
    pub config: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandAccuracy {
    pub validation: f64,
    pub test: f64,
    pub models: Vec<ModelAccuracy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainResponse {
    pub version: u64,
    pub seed: u64,
    pub accuracies: BTreeMap<BandProfile, BandAccuracy>,
    pub duration_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub version: u64,
    pub feature_space: BTreeMap<BandProfile, usize>,
    pub locations: Vec<LocationId>,
    pub clamp_negative_youden: bool,
    pub training: ModelVersion,
    pub validation_accuracy: BTreeMap<BandProfile, f64>,
    pub archived_versions: Vec<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HistoryQuery {
    pub device_id: Option<String>,
    /// Inclusive bounds on `timestamp_ms`.
    pub from: Option<i64>,
    pub to: Option<i64>,
    pub offset: usize,
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryPage {
    pub records: Vec<PredictionRecord>,
    pub total: usize,
    pub next_offset: Option<usize>,
}

/// A bundle that is fully written and may serve requests.
struct Installed {
    version: u64,
    bundle: LocalizerBundle,
    meta: ModelVersion,
}

struct Store {
    fingerprints: Vec<Fingerprint>,
    counts: BTreeMap<LocationId, usize>,
    locations: BTreeMap<LocationId, String>,
    registry: RadioRegistry,
}

#[derive(Default)]
struct History {
    next_seq: u64,
    by_device: HashMap<String, Vec<PredictionRecord>>,
}

#[derive(Debug, Clone, Default)]
struct Session {
    state: TrackerState,
    last_ms: i64,
}

struct TrainingFlag<'a>(&'a AtomicBool);

impl Drop for TrainingFlag<'_> {
    fn drop(&mut self) {
        self.0.store(false, Ordering::SeqCst);
    }
}

/// Shared service state. Cheap to share behind an `Arc`.
pub struct AppState {
    config: ServiceConfig,
    models_dir: PathBuf,
    registry_path: PathBuf,
    store: RwLock<Store>,
    history: Mutex<History>,
    sessions: Mutex<HashMap<String, Arc<tokio::sync::Mutex<Session>>>>,
    installed: RwLock<Option<Arc<Installed>>>,
    models: Mutex<ModelRegistry>,
    training: AtomicBool,
    log: LogWriter,
}

fn core_error(e: wifiloc_core::Error) -> ServiceError {
    match e.class() {
        ErrorClass::Io => ServiceError::Core(e),
        ErrorClass::Data | ErrorClass::Training => ServiceError::Unprocessable(e.to_string()),
    }
}

fn merge(base: &mut serde_json::Value, patch: serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(serde_json::Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

impl AppState {
    /// Loads the data directory, reinstalls the current model and
    /// replays the prediction history into the tracker sessions.
    pub fn open(config: ServiceConfig) -> Result<Arc<Self>, ServiceError> {
        config.validate()?;
        let dir = config.data_dir.clone();
        let models_dir = dir.join(MODELS_DIR);
        std::fs::create_dir_all(&models_dir)?;

        let radios = dir.join(STORE_RADIOS);
        let registry = if radios.exists() {
            read_registry(File::open(&radios)?)?
        } else {
            log::warn!("{} missing; every reading will be ignored until radios are registered", radios.display());
            RadioRegistry::new()
        };
        let locations_path = dir.join(STORE_LOCATIONS);
        let locations = if locations_path.exists() {
            read_locations(File::open(&locations_path)?)?
        } else {
            BTreeMap::new()
        };
        let fingerprints_path = dir.join(STORE_FINGERPRINTS);
        let fingerprints: Vec<Fingerprint> = read_log::<ScanRecord>(&fingerprints_path)?
            .into_iter()
            .map(|r| r.into_fingerprint().map_err(|e| ServiceError::Corrupt(format!("fingerprint store: {e}"))))
            .collect::<Result<_, _>>()?;
        let mut counts = BTreeMap::new();
        for fp in &fingerprints {
            if let Some(l) = fp.location {
                *counts.entry(l).or_insert(0) += 1;
            }
        }

        let registry_path = dir.join(REGISTRY_FILE);
        let models = ModelRegistry::load(&registry_path)?;
        let installed = match models.current() {
            Some(meta) => {
                let bundle = LocalizerBundle::load(&bundle_path(&models_dir, meta.version))?;
                log::info!("reinstalled model version {}", meta.version);
                Some(Arc::new(Installed {
                    version: meta.version,
                    bundle,
                    meta: meta.clone(),
                }))
            }
            None => None,
        };

        let predictions_path = dir.join(PREDICTIONS_FILE);
        let records: Vec<PredictionRecord> = read_log(&predictions_path)?;
        let idle_ms = (config.session_idle_secs as i64).saturating_mul(1000);
        let mut history = History::default();
        let mut sessions: HashMap<String, Session> = HashMap::new();
        for r in records {
            history.next_seq = history.next_seq.max(r.seq + 1);
            let s = sessions.entry(r.device_id.clone()).or_default();
            if s.last_ms != 0 && r.received_ms - s.last_ms > idle_ms {
                s.state = s.state.reset();
            }
            s.state = s.state.update(&config.tracker, r.location).0;
            s.last_ms = r.received_ms;
            history.by_device.entry(r.device_id.clone()).or_default().push(r);
        }
        let log = LogWriter::open(&fingerprints_path, &predictions_path)?;
        Ok(Arc::new(AppState {
            models_dir,
            registry_path,
            store: RwLock::new(Store {
                fingerprints,
                counts,
                locations,
                registry,
            }),
            history: Mutex::new(history),
            sessions: Mutex::new(
                sessions
                    .into_iter()
                    .map(|(k, v)| (k, Arc::new(tokio::sync::Mutex::new(v))))
                    .collect(),
            ),
            installed: RwLock::new(installed),
            models: Mutex::new(models),
            training: AtomicBool::new(false),
            log,
            config,
        }))
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    fn installed(&self) -> Option<Arc<Installed>> {
        self.installed.read().expect("model lock").clone()
    }

    pub fn model_version(&self) -> Option<u64> {
        self.installed().map(|i| i.version)
    }

    pub fn is_training(&self) -> bool {
        self.training.load(Ordering::SeqCst)
    }

    fn session(&self, device: &str) -> Arc<tokio::sync::Mutex<Session>> {
        self.sessions
            .lock()
            .expect("session lock")
            .entry(device.to_string())
            .or_default()
            .clone()
    }

    /// Current tracker state of `device`, if it has a session.
    pub async fn tracker_state(&self, device: &str) -> Option<TrackerState> {
        let s = self.sessions.lock().expect("session lock").get(device).cloned()?;
        let state = s.lock().await.state.clone();
        Some(state)
    }

    /// Localizes a scan, advances the device's tracker and records the
    /// prediction durably before answering.
    pub async fn track(&self, record: ScanRecord) -> Result<TrackResponse, ServiceError> {
        let installed = self.installed().ok_or(ServiceError::NoModel)?;
        let fp = record
            .into_fingerprint()
            .map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        if fp.device_id.trim().is_empty() {
            return Err(ServiceError::BadRequest("device_id is required".into()));
        }
        let loc = installed.bundle.localize(&fp).map_err(|e| match e {
            wifiloc_core::Error::UnrecognizedScan => ServiceError::Unprocessable(e.to_string()),
            other => ServiceError::BadRequest(other.to_string()),
        })?;

        let session = self.session(&fp.device_id);
        let mut s = session.lock().await;
        let received_ms = now_ms();
        let idle_ms = (self.config.session_idle_secs as i64).saturating_mul(1000);
        if s.last_ms != 0 && received_ms - s.last_ms > idle_ms {
            log::debug!("session of {} expired", fp.device_id);
            s.state = s.state.reset();
        }
        let (next, t) = s.state.update(&self.config.tracker, loc.location);
        let mut record = PredictionRecord {
            seq: 0,
            device_id: fp.device_id.clone(),
            timestamp_ms: if fp.ts_ms > 0 { fp.ts_ms } else { received_ms },
            received_ms,
            location: loc.location,
            scores: loc.scores,
            band: loc.profile,
            smoothed_area: next.current,
            changed: t.changed,
            first_visit: t.first_visit,
            model_version: installed.version,
        };
        let ack = {
            let mut h = self.history.lock().expect("history lock");
            record.seq = h.next_seq;
            let ack = self.log.append(LogFile::Predictions, serde_json::to_string(&record)?);
            h.next_seq += 1;
            h.by_device.entry(record.device_id.clone()).or_default().push(record.clone());
            ack
        };
        s.state = next;
        s.last_ms = received_ms;
        ack.await
            .map_err(|_| ServiceError::Internal("log writer stopped".into()))??;
        Ok(TrackResponse {
            location: record.location,
            scores: record.scores,
            band: record.band,
            smoothed_area: record.smoothed_area,
            changed: record.changed,
            first_visit: record.first_visit,
            model_version: record.model_version,
            ignored_readings: loc.ignored_readings,
        })
    }

    /// Appends a labeled scan to the store. Does not retrain.
    pub async fn learn(&self, record: ScanRecord) -> Result<LearnResponse, ServiceError> {
        let fp = record
            .into_fingerprint()
            .map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        let location = fp
            .location
            .ok_or_else(|| ServiceError::BadRequest("location label is required".into()))?;
        let (ack, total, ignored) = {
            let mut store = self.store.write().expect("store lock");
            if !store.locations.contains_key(&location) {
                return Err(ServiceError::NotFound(format!("unknown location {location}")));
            }
            let before = fp.signals().len();
            let kept = fp
                .retain_signals(|m| store.registry.contains(m))
                .ok_or_else(|| ServiceError::BadRequest("scan contains no registered radios".into()))?;
            let ignored = before - kept.signals().len();
            let line = serde_json::to_string(&ScanRecord::from_fingerprint(&kept))?;
            let ack = self.log.append(LogFile::Fingerprints, line);
            store.fingerprints.push(kept);
            let total = store.counts.entry(location).or_insert(0);
            *total += 1;
            (ack, *total, ignored)
        };
        ack.await
            .map_err(|_| ServiceError::Internal("log writer stopped".into()))??;
        Ok(LearnResponse {
            accepted: true,
            total_for_location: total,
            ignored_readings: ignored,
        })
    }

    /// Snapshot of the fingerprint store as a dataset.
    pub fn dataset(&self) -> Result<Dataset, ServiceError> {
        let store = self.store.read().expect("store lock");
        Dataset::new(store.fingerprints.clone(), store.locations.clone(), store.registry.clone()).map_err(core_error)
    }

    pub fn fingerprint_count(&self) -> usize {
        self.store.read().expect("store lock").fingerprints.len()
    }

    /// Trains a new bundle off the request path and swaps it in. Requests
    /// already holding the old bundle finish on it.
    pub async fn train(self: &Arc<Self>, request: TrainRequest) -> Result<TrainResponse, ServiceError> {
        if self
            .training
            .compare_exchange(false, true, Ordering::SeqCst, Ordering::SeqCst)
            .is_err()
        {
            return Err(ServiceError::Conflict("a training run is already active".into()));
        }
        let _flag = TrainingFlag(&self.training);
        let seed = request.seed.unwrap_or(self.config.default_seed);
        let config = match request.config {
            None => self.config.ensemble.clone(),
            Some(patch) => {
                let mut base = serde_json::to_value(&self.config.ensemble)?;
                merge(&mut base, patch);
                let cfg: EnsembleConfig = serde_json::from_value(base)
                    .map_err(|e| ServiceError::BadRequest(format!("config: {e}")))?;
                cfg.validate().map_err(|e| ServiceError::BadRequest(e.to_string()))?;
                cfg
            }
        };
        let ds = self.dataset()?;
        let started = Instant::now();
        let (bundle, accuracies) = tokio::task::spawn_blocking(move || {
            let bundle = train_bundle(&ds, &config, seed)?;
            let mut acc = BTreeMap::new();
            for profile in [BandProfile::DualBand, BandProfile::Band24Only] {
                let meta = bundle.meta(profile);
                let data = dataset_for_band(&ds, profile)?;
                let report = meta.report();
                acc.insert(
                    profile,
                    BandAccuracy {
                        validation: report.meta_validation_accuracy,
                        test: meta.accuracy_on(&data, &report.split.test)?,
                        models: report.validation_accuracy.clone(),
                    },
                );
            }
            Ok::<_, wifiloc_core::Error>((bundle, acc))
        })
        .await
        .map_err(|e| ServiceError::Internal(format!("training task failed: {e}")))?
        .map_err(core_error)?;
        let duration_ms = started.elapsed().as_millis() as u64;

        let version = self.models.lock().expect("registry lock").next_version();
        let meta = ModelVersion {
            version,
            seed,
            dataset_digest: bundle.dual.report().dataset_digest.clone(),
            fingerprints: bundle.dual.report().split.train.len()
                + bundle.dual.report().split.validation.len()
                + bundle.dual.report().split.test.len(),
            trained_at_ms: now_ms(),
            duration_ms,
        };
        let path = bundle_path(&self.models_dir, version);
        let bundle = tokio::task::spawn_blocking(move || -> Result<LocalizerBundle, ServiceError> {
            let bytes = serde_json::to_vec(&bundle)?;
            crate::persist::atomic_write(&path, &bytes)?;
            Ok(bundle)
        })
        .await
        .map_err(|e| ServiceError::Internal(format!("saving model failed: {e}")))??;
        {
            let mut models = self.models.lock().expect("registry lock");
            let mut next = models.clone();
            next.versions.push(meta.clone());
            next.current = Some(version);
            next.save(&self.registry_path)?;
            *models = next;
        }
        *self.installed.write().expect("model lock") = Some(Arc::new(Installed { version, bundle, meta }));
        log::info!("installed model version {version} (seed {seed}, {duration_ms} ms)");
        Ok(TrainResponse {
            version,
            seed,
            accuracies,
            duration_ms,
        })
    }

    pub fn model_info(&self) -> Result<ModelInfo, ServiceError> {
        let inst = self.installed().ok_or(ServiceError::NoModel)?;
        let archived = self
            .models
            .lock()
            .expect("registry lock")
            .archived()
            .map(|v| v.version)
            .collect();
        let profiles = [BandProfile::DualBand, BandProfile::Band24Only];
        Ok(ModelInfo {
            version: inst.version,
            feature_space: profiles
                .iter()
                .map(|p| (*p, inst.bundle.meta(*p).feature_space().len()))
                .collect(),
            locations: inst.bundle.locations().to_vec(),
            clamp_negative_youden: inst.bundle.dual.clamps_negative_youden(),
            training: inst.meta.clone(),
            validation_accuracy: profiles
                .iter()
                .map(|p| (*p, inst.bundle.meta(*p).report().meta_validation_accuracy))
                .collect(),
            archived_versions: archived,
        })
    }

    /// Records in ascending timestamp order (log order among equals).
    pub fn history(&self, q: &HistoryQuery) -> Result<HistoryPage, ServiceError> {
        if let (Some(from), Some(to)) = (q.from, q.to) {
            if from > to {
                return Err(ServiceError::BadRequest(format!("from {from} is after to {to}")));
            }
        }
        let limit = q.limit.unwrap_or(self.config.max_page);
        if limit == 0 || limit > self.config.max_page {
            return Err(ServiceError::BadRequest(format!(
                "limit must lie in 1..={}",
                self.config.max_page
            )));
        }
        let in_range =
            |r: &&PredictionRecord| q.from.is_none_or(|f| r.timestamp_ms >= f) && q.to.is_none_or(|t| r.timestamp_ms <= t);
        let h = self.history.lock().expect("history lock");
        let mut matches: Vec<&PredictionRecord> = match &q.device_id {
            Some(d) => h.by_device.get(d).map(|v| v.iter().filter(in_range).collect()).unwrap_or_default(),
            None => h.by_device.values().flatten().filter(in_range).collect(),
        };
        matches.sort_by_key(|r| (r.timestamp_ms, r.seq));
        let total = matches.len();
        let records: Vec<PredictionRecord> = matches.into_iter().skip(q.offset).take(limit).cloned().collect();
        let end = q.offset + records.len();
        Ok(HistoryPage {
            records,
            total,
            next_offset: (end < total).then_some(end),
        })
    }

    /// Drops sessions idle longer than the configured limit.
    pub fn expire_sessions(&self) -> usize {
        let idle_ms = (self.config.session_idle_secs as i64).saturating_mul(1000);
        let now = now_ms();
        let mut sessions = self.sessions.lock().expect("session lock");
        let before = sessions.len();
        sessions.retain(|_, s| match s.try_lock() {
            Ok(s) => now - s.last_ms <= idle_ms,
            Err(_) => true,
        });
        before - sessions.len()
    }
}

/// Periodically expires idle sessions while the state is alive.
pub fn spawn_session_sweeper(state: Weak<AppState>) -> tokio::task::JoinHandle<()> {
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(Duration::from_secs(60));
        loop {
            tick.tick().await;
            let Some(s) = state.upgrade() else { break };
            let n = s.expire_sessions();
            if n > 0 {
                log::debug!("expired {n} idle sessions");
            }
        }
    })
}
