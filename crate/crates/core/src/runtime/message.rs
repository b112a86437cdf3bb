//! Bus envelopes and payloads.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::grid::Minutes;
use crate::perception::harmonize::AnalysisGrid;
use crate::perception::initiation::InitiationCandidate;
use crate::prediction::nowcast::EnsembleForecast;
use crate::response::dissemination::ReachReport;
use crate::response::hydrology::DepthGrid;
use crate::response::routing::RoutePlan;
use crate::response::triage::AlertDecision;
use crate::world::ObservationSet;

pub const TOPIC_OBS: &str = "obs";
pub const TOPIC_ANALYSIS: &str = "analysis";
pub const TOPIC_INITIATION: &str = "initiation";
pub const TOPIC_FORECAST_COARSE: &str = "forecast.coarse";
pub const TOPIC_FORECAST_FINE: &str = "forecast.fine";
pub const TOPIC_PROBABILITY: &str = "probability";
pub const TOPIC_DEPTH: &str = "hydro.depth";
pub const TOPIC_ALERTS: &str = "alerts";
pub const TOPIC_REACH: &str = "reach";
pub const TOPIC_ROUTES: &str = "routes";
pub const TOPIC_OPERATOR: &str = "operator";
pub const TOPIC_BOUNDARY: &str = "event.boundary";
pub const TOPIC_LEARNING: &str = "learning";

pub const TOPICS: &[&str] = &[
    TOPIC_OBS,
    TOPIC_ANALYSIS,
    TOPIC_INITIATION,
    TOPIC_FORECAST_COARSE,
    TOPIC_FORECAST_FINE,
    TOPIC_PROBABILITY,
    TOPIC_DEPTH,
    TOPIC_ALERTS,
    TOPIC_REACH,
    TOPIC_ROUTES,
    TOPIC_OPERATOR,
    TOPIC_BOUNDARY,
    TOPIC_LEARNING,
];

/// Exceedance probabilities at one threshold for several leads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilitySet {
    pub issued_at: Minutes,
    pub threshold: f64,
    pub leads: Vec<Minutes>,
    pub raw: Vec<crate::grid::GridField>,
    /// Calibrated probabilities; equal to `raw` when no map is in use.
    pub calibrated: Vec<crate::grid::GridField>,
    pub calibration_version: Option<u64>,
}

/// Forecast depths over the horizon, with the run's current depth first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthForecast {
    pub issued_at: Minutes,
    pub grids: Vec<DepthGrid>,
    /// Relative mass-balance error of the reservoirs behind the forecast.
    pub mass_balance_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorDecision {
    Approve,
    Override,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "body", rename_all = "snake_case")]
pub enum Payload {
    Observations(Arc<ObservationSet>),
    Analysis(Arc<AnalysisGrid>),
    Initiation(Arc<Vec<InitiationCandidate>>),
    Forecast(Arc<EnsembleForecast>),
    Probability(Arc<ProbabilitySet>),
    Depth(Arc<DepthForecast>),
    Alert(Arc<AlertDecision>),
    Reach(Arc<ReachReport>),
    Routes(Arc<Vec<RoutePlan>>),
    Operator {
        item: u64,
        decision: OperatorDecision,
        district: u32,
    },
    EventBoundary { event: u64 },
    Note(String),
}

impl Payload {
    pub fn kind(&self) -> &'static str {
        match self {
            Payload::Observations(_) => "observations",
            Payload::Analysis(_) => "analysis",
            Payload::Initiation(_) => "initiation",
            Payload::Forecast(_) => "forecast",
            Payload::Probability(_) => "probability",
            Payload::Depth(_) => "depth",
            Payload::Alert(_) => "alert",
            Payload::Reach(_) => "reach",
            Payload::Routes(_) => "routes",
            Payload::Operator { .. } => "operator",
            Payload::EventBoundary { .. } => "event_boundary",
            Payload::Note(_) => "note",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub topic: String,
    pub sender: String,
    pub observation: Payload,
    pub action: Option<Payload>,
    pub issued_at: Minutes,
    pub deliver_at: Minutes,
    pub seq: u64,
    /// Time the observation set at the root of this message's causal chain
    /// was ingested.
    pub ingested_at: Minutes,
}

impl Message {
    pub fn new(topic: &str, sender: &str, observation: Payload, issued_at: Minutes, ingested_at: Minutes) -> Self {
        Message {
            topic: topic.to_string(),
            sender: sender.to_string(),
            observation,
            action: None,
            issued_at,
            deliver_at: issued_at,
            seq: 0,
            ingested_at,
        }
    }

    /// Canonical wire form.
    pub fn to_wire(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("message serializes")
    }

    pub fn from_wire(bytes: &[u8]) -> Result<Message, serde_json::Error> {
        serde_json::from_slice(bytes)
    }

    pub fn order_key(&self) -> (Minutes, &str, u64) {
        (self.deliver_at, self.sender.as_str(), self.seq)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryReceipt {
    pub topic: String,
    pub sender: String,
    pub seq: u64,
    pub delivery: Minutes,
    pub dropped: bool,
}
