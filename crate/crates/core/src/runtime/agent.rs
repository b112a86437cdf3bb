//! Agent registry types and the policy contract.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Minutes;
use crate::learning_audit::audit::AuditEntry;
use crate::response::triage::AlertDecision;

use super::message::{Message, Payload};
use super::state::{StateKey, StateSnapshot, StateValue, Versioned};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    Perceptual,
    Operational,
    Strategic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentDescriptor {
    pub id: String,
    pub layer: Layer,
    pub subscriptions: Vec<String>,
}

impl AgentDescriptor {
    pub fn new(id: &str, layer: Layer, subscriptions: &[&str]) -> Self {
        AgentDescriptor {
            id: id.to_string(),
            layer,
            subscriptions: subscriptions.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Which state entries an agent may read.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationBinding {
    pub agent: String,
    pub keys: BTreeSet<StateKey>,
}

impl ObservationBinding {
    pub fn new(agent: &str, keys: &[StateKey]) -> Self {
        ObservationBinding {
            agent: agent.to_string(),
            keys: keys.iter().copied().collect(),
        }
    }
}

/// The projection `h_i(S_t)` handed to a policy.
pub struct Observation {
    pub clock: Minutes,
    pub version: u64,
    snapshot: StateSnapshot,
    keys: Arc<BTreeSet<StateKey>>,
}

impl Observation {
    pub fn new(snapshot: StateSnapshot, keys: Arc<BTreeSet<StateKey>>) -> Self {
        Observation {
            clock: snapshot.clock,
            version: snapshot.version,
            snapshot,
            keys,
        }
    }

    pub fn get(&self, key: StateKey) -> Result<Option<&Versioned>, PolicyError> {
        if !self.keys.contains(&key) {
            return Err(PolicyError::Unbound(key));
        }
        Ok(self.snapshot.get(key))
    }

    pub fn value(&self, key: StateKey) -> Result<Option<&StateValue>, PolicyError> {
        Ok(self.get(key)?.map(|v| &v.value))
    }

    pub fn scalar(&self, key: StateKey) -> Result<Option<f64>, PolicyError> {
        Ok(self.value(key)?.and_then(StateValue::as_scalar))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("state key {0:?} is outside the agent's binding")]
    Unbound(StateKey),
    #[error("unexpected payload {0} on this agent")]
    UnexpectedPayload(&'static str),
    #[error("{0}")]
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Write(StateKey, StateValue),
    Publish { topic: String, payload: Payload },
    ProposeAlert(AlertDecision),
    Audit(AuditEntry),
}

#[derive(Debug, Default)]
pub struct Actions {
    pub items: Vec<Action>,
}

impl Actions {
    pub fn write(&mut self, key: StateKey, value: StateValue) {
        self.items.push(Action::Write(key, value));
    }

    pub fn publish(&mut self, topic: &str, payload: Payload) {
        self.items.push(Action::Publish {
            topic: topic.to_string(),
            payload,
        });
    }

    pub fn propose(&mut self, alert: AlertDecision) {
        self.items.push(Action::ProposeAlert(alert));
    }

    pub fn audit(&mut self, entry: AuditEntry) {
        self.items.push(Action::Audit(entry));
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// An agent's decision function.
pub trait Policy: Send {
    fn act(&mut self, obs: &Observation, msg: &Message, out: &mut Actions) -> Result<(), PolicyError>;
}

/// Passive observer of every delivered message.
pub trait Tap: Send {
    fn on_deliver(&mut self, msg: &Message);
}
