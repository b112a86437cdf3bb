//! Versioned shared state with copy-on-write snapshots.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::grid::{ContentHash, Minutes};
use crate::learning_audit::calibration::CalibrationMap;
use crate::perception::harmonize::AnalysisGrid;
use crate::perception::initiation::InitiationCandidate;
use crate::prediction::nowcast::EnsembleForecast;
use crate::response::routing::RoutePlan;
use crate::response::triage::AlertDecision;

use super::message::{DepthForecast, ProbabilitySet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateKey {
    Analysis,
    Initiation,
    ForecastCoarse,
    ForecastFine,
    Probability,
    Depth,
    Alerts,
    Routes,
    Calibration,
    PStar,
    SpreadInflation,
    Governance,
}

impl StateKey {
    pub const ALL: [StateKey; 12] = [
        StateKey::Analysis,
        StateKey::Initiation,
        StateKey::ForecastCoarse,
        StateKey::ForecastFine,
        StateKey::Probability,
        StateKey::Depth,
        StateKey::Alerts,
        StateKey::Routes,
        StateKey::Calibration,
        StateKey::PStar,
        StateKey::SpreadInflation,
        StateKey::Governance,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum StateValue {
    Analysis(Arc<AnalysisGrid>),
    Candidates(Arc<Vec<InitiationCandidate>>),
    Ensemble(Arc<EnsembleForecast>),
    Probability(Arc<ProbabilitySet>),
    Depth(Arc<DepthForecast>),
    Alerts(Arc<Vec<AlertDecision>>),
    Routes(Arc<Vec<RoutePlan>>),
    Calibration(Arc<CalibrationMap>),
    Scalar(f64),
    Flags(Arc<BTreeMap<String, bool>>),
}

impl StateValue {
    pub fn hash_into(&self, h: &mut Sha256) {
        match self {
            StateValue::Analysis(a) => a.hash_into(h),
            StateValue::Ensemble(e) => e.hash_into(h),
            other => h.update(serde_json::to_vec(other).expect("state value serializes")),
        }
    }

    pub fn as_scalar(&self) -> Option<f64> {
        match self {
            StateValue::Scalar(v) => Some(*v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versioned {
    pub value: StateValue,
    pub version: u64,
    pub written_at: Minutes,
    pub writer: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StateError {
    #[error("clock cannot move back from {from} to {to}")]
    ClockBackwards { from: Minutes, to: Minutes },
}

/// Immutable view at one version.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSnapshot {
    pub version: u64,
    pub clock: Minutes,
    entries: Arc<BTreeMap<StateKey, Versioned>>,
}

impl StateSnapshot {
    pub fn get(&self, key: StateKey) -> Option<&Versioned> {
        self.entries.get(&key)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&StateKey, &Versioned)> {
        self.entries.iter()
    }

    pub fn content_hash(&self) -> ContentHash {
        let mut h = Sha256::new();
        h.update(self.version.to_le_bytes());
        h.update(self.clock.to_le_bytes());
        for (k, v) in self.entries.iter() {
            h.update(serde_json::to_vec(k).expect("key serializes"));
            h.update(v.version.to_le_bytes());
            h.update(v.written_at.to_le_bytes());
            h.update(v.writer.as_bytes());
            v.value.hash_into(&mut h);
        }
        ContentHash::from_hasher(h)
    }
}

#[derive(Debug, Clone, Default)]
pub struct SharedState {
    version: u64,
    clock: Minutes,
    entries: Arc<BTreeMap<StateKey, Versioned>>,
}

impl SharedState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn clock(&self) -> Minutes {
        self.clock
    }

    pub fn advance_clock(&mut self, to: Minutes) -> Result<(), StateError> {
        if to < self.clock {
            return Err(StateError::ClockBackwards { from: self.clock, to });
        }
        self.clock = to;
        Ok(())
    }

    /// Every write bumps the version; snapshots taken earlier keep their
    /// entries.
    pub fn write(&mut self, key: StateKey, value: StateValue, writer: &str) -> u64 {
        self.version += 1;
        let v = Versioned {
            value,
            version: self.version,
            written_at: self.clock,
            writer: writer.to_string(),
        };
        Arc::make_mut(&mut self.entries).insert(key, v);
        self.version
    }

    pub fn get(&self, key: StateKey) -> Option<&Versioned> {
        self.entries.get(&key)
    }

    pub fn snapshot(&self) -> StateSnapshot {
        StateSnapshot {
            version: self.version,
            clock: self.clock,
            entries: Arc::clone(&self.entries),
        }
    }

    pub fn content_hash(&self) -> ContentHash {
        self.snapshot().content_hash()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_is_isolated_from_later_writes() {
        let mut s = SharedState::new();
        s.write(StateKey::PStar, StateValue::Scalar(0.1), "t");
        let snap = s.snapshot();
        let h = snap.content_hash();
        s.write(StateKey::PStar, StateValue::Scalar(0.2), "t");
        assert_eq!(snap.get(StateKey::PStar).unwrap().value, StateValue::Scalar(0.1));
        assert_eq!(snap.content_hash(), h);
        assert_eq!(s.version(), 2);
    }

    #[test]
    fn clock_never_decreases() {
        let mut s = SharedState::new();
        s.advance_clock(10).unwrap();
        assert!(s.advance_clock(5).is_err());
        assert_eq!(s.clock(), 10);
    }
}
