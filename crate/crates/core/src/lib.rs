//! Wi-Fi RSSI fingerprint localization.
//!
//! Scans are encoded against a canonical radio list, six probabilistic
//! classifiers are trained on them, and their per-location probabilities
//! are combined with per-class Youden informedness weights. Devices that
//! only hear 2.4 GHz radios are served by a second model trained on the
//! 2.4 GHz features alone.

pub mod classifiers;
pub mod ensemble;
pub mod error;
pub mod evaluation;
pub mod fingerprint;
pub mod seed;
pub mod tracker;

pub use error::{Error, ErrorClass, Result};
