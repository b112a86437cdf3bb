//! What a run did, for verification and streaming.

use serde::{Deserialize, Serialize};

use crate::grid::Minutes;
use crate::response::triage::AlertDecision;

use super::governance::HitlItem;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryRecord {
    pub topic: String,
    pub sender: String,
    pub seq: u64,
    pub issued_at: Minutes,
    pub deliver_at: Minutes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertPublication {
    pub alert: AlertDecision,
    pub published_at: Minutes,
    pub ingested_at: Minutes,
    /// Agent, "governance" or "operator".
    pub issuer: String,
}

impl AlertPublication {
    pub fn latency(&self) -> Minutes {
        self.published_at - self.ingested_at
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegradedSpan {
    pub agent: String,
    pub cause: String,
    pub start: Minutes,
    pub end: Option<Minutes>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StreamEvent {
    Tick {
        t: Minutes,
        version: u64,
        pending_hitl: usize,
        active_alerts: usize,
        degraded: bool,
    },
    Alert {
        alert: AlertDecision,
        published_at: Minutes,
    },
    HitlCreated {
        item: HitlItem,
    },
    HitlResolved {
        item: HitlItem,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub deliveries: Vec<DeliveryRecord>,
    pub alerts: Vec<AlertPublication>,
    pub degraded: Vec<DegradedSpan>,
    pub stream: Vec<StreamEvent>,
}

impl RunTrace {
    pub fn degraded_any(&self) -> bool {
        !self.degraded.is_empty()
    }

    pub fn open_degraded(&mut self, agent: &str, cause: &str, t: Minutes) -> bool {
        if self.degraded.iter().any(|d| d.agent == agent && d.end.is_none()) {
            return false;
        }
        self.degraded.push(DegradedSpan {
            agent: agent.to_string(),
            cause: cause.to_string(),
            start: t,
            end: None,
        });
        true
    }

    pub fn close_degraded(&mut self, agent: &str, t: Minutes) -> bool {
        match self.degraded.iter_mut().find(|d| d.agent == agent && d.end.is_none()) {
            Some(d) => {
                d.end = Some(t);
                true
            }
            None => false,
        }
    }

    pub fn is_degraded(&self, agent: &str) -> bool {
        self.degraded.iter().any(|d| d.agent == agent && d.end.is_none())
    }

    /// Stream frames as newline-delimited JSON.
    pub fn stream_ndjson(&self) -> String {
        let mut out = String::new();
        for e in &self.stream {
            out.push_str(&serde_json::to_string(e).expect("event serializes"));
            out.push('\n');
        }
        out
    }
}
