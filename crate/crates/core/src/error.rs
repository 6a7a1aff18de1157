use std::io;

use thiserror::Error;

use crate::fingerprint::{ApId, LocationId, Mac};

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad class of an error, used by front ends to pick exit codes and
/// HTTP statuses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Malformed or insufficient input data.
    Data,
    /// A model could not be fitted or applied.
    Training,
    /// Filesystem or encoding failure.
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid MAC address {0:?}")]
    InvalidMac(String),
    #[error("invalid band {0:?} (expected 2.4 or 5)")]
    InvalidBand(String),
    #[error("invalid location label {0:?}")]
    InvalidLocation(String),
    #[error("fingerprint has no signals")]
    EmptySignals,
    #[error("radio {0} appears more than once in a fingerprint")]
    DuplicateRadio(Mac),
    #[error("RSSI {0} is not a finite number")]
    NonFiniteRssi(f64),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("fingerprint {index} is labeled with unregistered location {location}")]
    UnregisteredLocation { index: usize, location: LocationId },
    #[error("fingerprint {index} has no location label")]
    MissingLabel { index: usize },
    #[error("radio {0} is not in the radio registry")]
    UnregisteredRadio(Mac),
    #[error("scan contains no known radios")]
    UnrecognizedScan,
    #[error("unknown access point {0}")]
    UnknownAp(ApId),
    #[error("location {location} has {count} fingerprints, at least {required} are required")]
    InsufficientFingerprints {
        location: LocationId,
        count: usize,
        required: usize,
    },
    #[error("split ratios must be positive and sum to 1, got {0:?}")]
    InvalidRatios((f64, f64, f64)),
    #[error("fraction must lie in (0, 1], got {0}")]
    InvalidFraction(f64),
    #[error("subsampling fraction {fraction} keeps no fingerprints at location {location}")]
    EmptySubsample { location: LocationId, fraction: f64 },
    #[error("operation leaves no fingerprints")]
    EmptyResult,
    #[error("dataset must contain both 2.4 GHz and 5 GHz radios")]
    SingleBand,
    #[error("dataset for a 2.4 GHz-only model still contains 5 GHz radios")]
    NotBandFiltered,
    #[error("{metric} is undefined for location {location}")]
    UndefinedMetric {
        metric: &'static str,
        location: LocationId,
    },
    #[error("training data needs at least two distinct labels")]
    SingleClass,
    #[error("feature vectors have inconsistent lengths ({expected} vs {found})")]
    LengthMismatch { expected: usize, found: usize },
    #[error("feature value at row {row}, column {column} is not finite")]
    NonFiniteFeature { row: usize, column: usize },
    #[error("model was trained on feature space {expected}, got {found}")]
    FeatureSpaceMismatch { expected: String, found: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid synthetic geometry: {0}")]
    InvalidGeometry(String),
    #[error("{0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::SingleClass
            | Error::LengthMismatch { .. }
            | Error::NonFiniteFeature { .. }
            | Error::FeatureSpaceMismatch { .. }
            | Error::InvalidConfig(_) => ErrorClass::Training,
            Error::Io(_) => ErrorClass::Io,
            _ => ErrorClass::Data,
        }
    }
}
