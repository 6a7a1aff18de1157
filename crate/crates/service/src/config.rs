use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use wifiloc_core::ensemble::EnsembleConfig;
use wifiloc_core::tracker::TrackerConfig;

use crate::ServiceError;

/// Prefix of environment variables that override file settings.
pub const ENV_PREFIX: &str = "WIFILOC_";

/// Service settings. Every key is optional in the TOML file.
///
/// ```toml
/// listen = "127.0.0.1:8080"
/// data_dir = "data"
/// token = "secret"
/// session_idle_secs = 1800
/// default_seed = 42
///
/// [tracker]
/// streak = 3
///
/// [ensemble]
/// sentinel = -100.0
/// clamp_negative_youden = true
///
/// [ensemble.classifiers.knn]
/// k = 5
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen: String,
    pub data_dir: PathBuf,
    /// Bearer token required on `/api/v1/*`; no auth when unset.
    pub token: Option<String>,
    pub session_idle_secs: u64,
    /// Seed used by `/train` when the request names none.
    pub default_seed: u64,
    /// Largest page `/history` returns.
    pub max_page: usize,
    pub tracker: TrackerConfig,
    pub ensemble: EnsembleConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            listen: "127.0.0.1:8080".into(),
            data_dir: PathBuf::from("wifiloc-data"),
            token: None,
            session_idle_secs: 30 * 60,
            default_seed: 42,
            max_page: 10_000,
            tracker: TrackerConfig::default(),
            ensemble: EnsembleConfig::default(),
        }
    }
}

fn env_parse<T: FromStr>(vars: &dyn Fn(&str) -> Option<String>, key: &str) -> Result<Option<T>, ServiceError> {
    match vars(&format!("{ENV_PREFIX}{key}")) {
        None => Ok(None),
        Some(raw) => raw
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| ServiceError::Config(format!("{ENV_PREFIX}{key}: cannot parse {raw:?}"))),
    }
}

impl ServiceConfig {
    pub fn from_toml(text: &str) -> Result<Self, ServiceError> {
        toml::from_str(text).map_err(|e| ServiceError::Config(e.to_string()))
    }

    /// Reads `path` (if given), then applies `WIFILOC_*` overrides.
    pub fn load(path: Option<&Path>) -> Result<Self, ServiceError> {
        let mut cfg = match path {
            Some(p) => Self::from_toml(&std::fs::read_to_string(p)?)?,
            None => ServiceConfig::default(),
        };
        cfg.apply_env(&|k| std::env::var(k).ok())?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Overrides: LISTEN, DATA_DIR, TOKEN, SESSION_IDLE_SECS, DEFAULT_SEED,
    /// MAX_PAGE, STREAK, SENTINEL_DBM, CLAMP_NEGATIVE_YOUDEN.
    pub fn apply_env(&mut self, vars: &dyn Fn(&str) -> Option<String>) -> Result<(), ServiceError> {
        if let Some(v) = env_parse(vars, "LISTEN")? {
            self.listen = v;
        }
        if let Some(v) = env_parse::<String>(vars, "DATA_DIR")? {
            self.data_dir = PathBuf::from(v);
        }
        if let Some(v) = env_parse::<String>(vars, "TOKEN")? {
            self.token = (!v.is_empty()).then_some(v);
        }
        if let Some(v) = env_parse(vars, "SESSION_IDLE_SECS")? {
            self.session_idle_secs = v;
        }
        if let Some(v) = env_parse(vars, "DEFAULT_SEED")? {
            self.default_seed = v;
        }
        if let Some(v) = env_parse(vars, "MAX_PAGE")? {
            self.max_page = v;
        }
        if let Some(v) = env_parse(vars, "STREAK")? {
            self.tracker.streak = v;
        }
        if let Some(v) = env_parse(vars, "SENTINEL_DBM")? {
            self.ensemble.sentinel = v;
        }
        if let Some(v) = env_parse(vars, "CLAMP_NEGATIVE_YOUDEN")? {
            self.ensemble.clamp_negative_youden = v;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ServiceError> {
        if self.tracker.streak == 0 {
            return Err(ServiceError::Config("tracker streak must be at least 1".into()));
        }
        if self.max_page == 0 {
            return Err(ServiceError::Config("max_page must be positive".into()));
        }
        self.ensemble.validate().map_err(|e| ServiceError::Config(e.to_string()))
    }
}
