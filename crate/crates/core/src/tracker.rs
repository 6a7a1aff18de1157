//! Area-change smoothing for a stream of location estimates.
//!
//! The reported area only changes after the same new estimate arrives
//! `streak` times in a row. Each session also remembers which areas it
//! has already entered so content can play once per visit.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::fingerprint::LocationId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    /// Consecutive identical estimates needed to change area.
    pub streak: u32,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig { streak: 3 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackerState {
    pub current: Option<LocationId>,
    pub candidate: Option<LocationId>,
    pub streak: u32,
    pub visited: BTreeSet<LocationId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub changed: bool,
    pub first_visit: bool,
}

impl TrackerState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Feeds one estimate. Pure: the same state and estimate always give
    /// the same result.
    pub fn update(&self, config: &TrackerConfig, estimate: LocationId) -> (TrackerState, Transition) {
        let mut next = self.clone();
        let mut t = Transition {
            changed: false,
            first_visit: false,
        };
        if self.current == Some(estimate) {
            next.candidate = None;
            next.streak = 0;
        } else if self.candidate == Some(estimate) {
            next.streak += 1;
        } else {
            next.candidate = Some(estimate);
            next.streak = 1;
        }
        if next.candidate.is_some() && next.streak >= config.streak.max(1) {
            next.current = next.candidate.take();
            next.streak = 0;
            t.changed = true;
            t.first_visit = next.visited.insert(estimate);
        }
        (next, t)
    }

    /// Starts a fresh session.
    pub fn reset(&self) -> TrackerState {
        TrackerState::default()
    }
}
