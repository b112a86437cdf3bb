//! Single-event runs: drive the world through the runtime and score the
//! result.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Minutes;
use crate::learning_audit::audit::{AuditHeader, AuditLog};
use crate::response::routing::{replay_route, static_route, RoutePlan};
use crate::response::triage::Tier;
use crate::runtime::message::{OperatorDecision, TOPIC_BOUNDARY, TOPIC_OBS};
use crate::runtime::scheduler::{SENDER_RUNNER, SENDER_SENSING};
use crate::runtime::trace::RunTrace;
use crate::runtime::governance::HitlItem;
use crate::runtime::{FaultSpec, Payload, Runtime, RuntimeError};
use crate::world::{Community, EventLabel, Scenario, ScenarioError};

use super::metrics::{
    coordination_latency, event_lead, summarize_leads, ContingencyTable, EventLead, IssuedAlert, LeadCategory,
    ReliabilityBins, LEAD_LOOKBACK,
};
use super::pipeline::{build_runtime, ConfigError, LearnedState, Mode, PipelineConfig};
use super::probe::{Probe, ProbeData, Truth, TruthError};

/// Extra steps allowed after the event boundary for in-flight messages and
/// pending HITL items.
const DRAIN_STEPS: usize = 48;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Truth(#[from] TruthError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error("seed {seed}: {source}")]
    Seed { seed: u64, source: Box<RunError> },
    #[error("empty batch")]
    EmptyBatch,
}

/// An operator decision applied when the clock reaches `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduledDecision {
    pub t: Minutes,
    pub item: u64,
    pub decision: OperatorDecision,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub faults: Vec<FaultSpec>,
    pub operator: Vec<ScheduledDecision>,
}

/// Mergeable metric sums.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricAccumulator {
    pub events: usize,
    pub crps_sum: f64,
    pub crps_n: u64,
    pub cont20: ContingencyTable,
    pub cont40: ContingencyTable,
    pub reliability: ReliabilityBins,
    pub leads: Vec<EventLead>,
    pub reach_sum: f64,
    pub reach_n: usize,
    pub routes_viable: usize,
    pub routes_total: usize,
    pub latencies: Vec<Minutes>,
}

impl MetricAccumulator {
    pub fn new(bins: usize) -> Self {
        MetricAccumulator {
            events: 0,
            crps_sum: 0.0,
            crps_n: 0,
            cont20: ContingencyTable::default(),
            cont40: ContingencyTable::default(),
            reliability: ReliabilityBins::new(bins),
            leads: Vec::new(),
            reach_sum: 0.0,
            reach_n: 0,
            routes_viable: 0,
            routes_total: 0,
            latencies: Vec::new(),
        }
    }

    pub fn merge(&mut self, o: &MetricAccumulator) {
        self.events += o.events;
        self.crps_sum += o.crps_sum;
        self.crps_n += o.crps_n;
        self.cont20.merge(&o.cont20);
        self.cont40.merge(&o.cont40);
        self.reliability.merge(&o.reliability);
        self.leads.extend(o.leads.iter().cloned());
        self.reach_sum += o.reach_sum;
        self.reach_n += o.reach_n;
        self.routes_viable += o.routes_viable;
        self.routes_total += o.routes_total;
        self.latencies.extend(&o.latencies);
    }

    pub fn table(&self, label: &str) -> MetricTable {
        let leads = summarize_leads(self.leads.clone());
        let lat = coordination_latency(&self.latencies);
        MetricTable {
            label: label.to_string(),
            events: self.events,
            labelled_events: self.leads.len(),
            crps: (self.crps_n > 0).then(|| self.crps_sum / self.crps_n as f64),
            csi20: self.cont20.csi(),
            csi40: self.cont40.csi(),
            pod: self.cont20.pod(),
            far: self.cont20.far(),
            reliability: self.reliability.index(),
            median_lead_min: leads.median,
            warned: leads.warned,
            late: leads.late,
            missed: leads.missed,
            reach_10min: (self.reach_n > 0).then(|| self.reach_sum / self.reach_n as f64),
            routes_viable_frac: (self.routes_total > 0).then(|| self.routes_viable as f64 / self.routes_total as f64),
            coordination_latency_min: lat.median,
            coordination_latency_p95: lat.p95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub label: String,
    pub events: usize,
    pub labelled_events: usize,
    pub crps: Option<f64>,
    pub csi20: Option<f64>,
    pub csi40: Option<f64>,
    pub pod: Option<f64>,
    pub far: Option<f64>,
    pub reliability: Option<f64>,
    pub median_lead_min: Option<f64>,
    pub warned: usize,
    pub late: usize,
    pub missed: usize,
    pub reach_10min: Option<f64>,
    pub routes_viable_frac: Option<f64>,
    pub coordination_latency_min: Option<f64>,
    pub coordination_latency_p95: Option<f64>,
}

pub struct RunOutput {
    pub mode: Mode,
    pub seed: u64,
    pub metrics: MetricAccumulator,
    pub table: MetricTable,
    pub input_hash: String,
    pub learned: LearnedState,
    /// Largest relative mass-balance error of the truth and forecast
    /// reservoirs.
    pub mass_balance_error: f64,
    pub labels: Vec<EventLabel>,
    pub runtime: Runtime,
}

impl RunOutput {
    pub fn audit(&self) -> &AuditLog {
        self.runtime.audit()
    }

    pub fn trace(&self) -> &RunTrace {
        self.runtime.trace()
    }
}

pub fn run_header(mode: Mode, seed: u64, config: &PipelineConfig) -> AuditHeader {
    AuditHeader {
        run_id: format!("{mode}-{seed}"),
        mode: mode.to_string(),
        seed,
        flags: mode.flags().as_map(),
        params: serde_json::to_value(config).expect("config serializes"),
    }
}

/// What the next tick publishes before stepping.
enum Pending {
    Nothing,
    Observations(Minutes),
    Boundary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Sensing(Minutes),
    Closing,
    Draining(usize),
    Done,
}

/// One scenario advanced a tick at a time. Live operator decisions submitted
/// between ticks land where a recorded decision at the same clock would, so
/// replaying the operator timeline reproduces the run.
pub struct EventRun {
    scenario: Arc<Scenario>,
    config: PipelineConfig,
    mode: Mode,
    learned: LearnedState,
    operator: Vec<ScheduledDecision>,
    truth: Arc<Truth>,
    data: Arc<Mutex<ProbeData>>,
    rt: Runtime,
    pending: Pending,
    stage: Stage,
}

impl EventRun {
    pub fn new(
        scenario: Arc<Scenario>,
        config: &PipelineConfig,
        mode: Mode,
        learned: &LearnedState,
        options: &RunOptions,
    ) -> Result<Self, RunError> {
        let flags = mode.flags();
        let seed = scenario.seed;
        let truth = Arc::new(Truth::new(&scenario, config)?);
        let mut rt = build_runtime(&scenario, config, flags, learned, run_header(mode, seed, config))?;
        let (probe, data) = Probe::new(Arc::clone(&truth), config.eval.clone());
        rt.add_tap(Box::new(probe));
        for f in &options.faults {
            rt.inject_fault(f.clone())?;
        }
        Ok(EventRun {
            scenario,
            config: config.clone(),
            mode,
            learned: learned.clone(),
            operator: options.operator.clone(),
            truth,
            data,
            rt,
            pending: Pending::Nothing,
            stage: Stage::Sensing(0),
        })
    }

    pub fn runtime(&self) -> &Runtime {
        &self.rt
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_done(&self) -> bool {
        self.stage == Stage::Done
    }

    /// Resolves a HITL item at the current clock.
    pub fn decide(&mut self, item: u64, decision: OperatorDecision) -> Result<HitlItem, RuntimeError> {
        self.rt.submit_operator_decision(item, decision)
    }

    fn apply_operator(&mut self) {
        let now = self.rt.clock();
        for d in self.operator.iter().filter(|d| d.t == now) {
            // Conflicts with already-resolved items are part of the recorded
            // timeline's semantics and leave the run unchanged.
            let _ = self.rt.submit_operator_decision(d.item, d.decision);
        }
    }

    /// Advances one cadence. Returns false once the run has finished.
    pub fn tick(&mut self) -> Result<bool, RunError> {
        let cadence = self.config.runtime.cadence;
        let now = self.rt.clock();
        match std::mem::replace(&mut self.pending, Pending::Nothing) {
            Pending::Nothing => {}
            // Observations sensed at `t` reach the bus at the next tick.
            Pending::Observations(t) => {
                let obs = self.scenario.sense(t)?;
                self.rt.publish_external(TOPIC_OBS, SENDER_SENSING, Payload::Observations(Arc::new(obs)), t)?;
            }
            Pending::Boundary => {
                let event = self.scenario.seed;
                self.rt.publish_external(TOPIC_BOUNDARY, SENDER_RUNNER, Payload::EventBoundary { event }, now)?;
            }
        }
        match self.stage {
            Stage::Sensing(t) => {
                self.rt.step(cadence)?;
                self.apply_operator();
                if t <= self.scenario.duration() {
                    self.pending = Pending::Observations(t);
                    self.stage = Stage::Sensing(t + cadence);
                } else {
                    self.pending = Pending::Boundary;
                    self.stage = Stage::Closing;
                }
            }
            Stage::Closing => {
                self.rt.step(cadence)?;
                self.stage = Stage::Draining(0);
            }
            Stage::Draining(k) => {
                if k >= DRAIN_STEPS || (self.rt.pending_messages() == 0 && self.rt.hitl().unresolved() == 0) {
                    self.stage = Stage::Done;
                } else {
                    self.apply_operator();
                    self.rt.step(cadence)?;
                    self.stage = Stage::Draining(k + 1);
                }
            }
            Stage::Done => {}
        }
        Ok(!self.is_done())
    }

    /// Scores the run. Ticks to completion first if needed.
    pub fn finish(mut self) -> Result<RunOutput, RunError> {
        while self.tick()? {}
        let data = self.data.lock().expect("probe lock").clone();
        let metrics = score(&self.truth, &data, self.rt.trace(), &self.scenario.community, &self.config);
        let learned = if self.mode.flags().learning {
            LearnedState::from_runtime(&self.rt, &self.learned)
        } else {
            self.learned
        };
        Ok(RunOutput {
            mode: self.mode,
            seed: self.scenario.seed,
            table: metrics.table(&self.mode.to_string()),
            metrics,
            input_hash: data.input_hash(),
            learned,
            mass_balance_error: self.truth.mass_balance_error.max(data.forecast_mass_balance),
            labels: self.truth.labels.clone(),
            runtime: self.rt,
        })
    }
}

/// Runs one scenario end to end under `mode`, starting from `learned`.
pub fn run_event(
    scenario: &Scenario,
    config: &PipelineConfig,
    mode: Mode,
    learned: &LearnedState,
    options: &RunOptions,
) -> Result<RunOutput, RunError> {
    EventRun::new(Arc::new(scenario.clone()), config, mode, learned, options)?.finish()
}

fn issued(trace: &RunTrace) -> Vec<IssuedAlert> {
    trace
        .alerts
        .iter()
        .map(|a| IssuedAlert {
            district: a.alert.district,
            tier: a.alert.tier,
            issued_at: a.published_at,
        })
        .collect()
}

/// First warning-or-higher alert per district in the event's lead window.
fn first_warnings(event: &EventLabel, trace: &RunTrace, districts: &[u32]) -> BTreeMap<u32, (Minutes, String)> {
    let from = event.onset.saturating_sub(LEAD_LOOKBACK);
    let mut out = BTreeMap::new();
    for a in &trace.alerts {
        let d = a.alert.district;
        if a.alert.tier >= Tier::Warning
            && districts.contains(&d)
            && a.published_at >= from
            && a.published_at <= event.end
            && !out.contains_key(&d)
        {
            out.insert(d, (a.published_at, a.alert.id()));
        }
    }
    out
}

/// The plan for `zone` in force at `t`: the latest delivered route set
/// holding one, else the dry-network route.
fn plan_in_force(data: &ProbeData, community: &Community, zone: u32, t: Minutes, config: &PipelineConfig) -> Option<RoutePlan> {
    data.routes
        .iter()
        .rev()
        .filter(|(at, _)| *at <= t)
        .find_map(|(_, plans)| plans.iter().find(|p| p.zone == zone).cloned())
        .or_else(|| static_route(community, zone, &config.routing))
}

fn score(truth: &Truth, data: &ProbeData, trace: &RunTrace, community: &Community, config: &PipelineConfig) -> MetricAccumulator {
    let mut m = MetricAccumulator::new(config.eval.reliability_bins);
    m.events = 1;
    m.crps_sum = data.crps_sum;
    m.crps_n = data.crps_n;
    m.cont20 = data.cont20;
    m.cont40 = data.cont40;
    m.reliability = data.reliability.clone();
    m.latencies = trace.alerts.iter().map(|a| a.latency()).collect();
    let alerts = issued(trace);
    for e in &truth.labels {
        let lead = event_lead(e, &alerts, community);
        let districts = lead.districts.clone();
        m.leads.push(lead);
        let warnings = first_warnings(e, trace, &districts);

        let (mut reached, mut pop) = (0.0, 0.0);
        for &d in &districts {
            let p = community.districts.iter().find(|x| x.id == d).map_or(0.0, |x| x.population);
            pop += p;
            if let Some((_, id)) = warnings.get(&d) {
                if let Some(r) = data.reach.iter().find(|r| &r.alert_id == id) {
                    reached += r.reach * p;
                }
            }
        }
        if pop > 0.0 {
            m.reach_sum += reached / pop;
            m.reach_n += 1;
        }

        for &d in &districts {
            let t0 = warnings.get(&d).map_or(e.onset, |w| w.0);
            for z in community.zones.iter().filter(|z| z.district == d) {
                let viable = config.eval.route_offsets.iter().all(|&off| {
                    let dep = t0 + off;
                    plan_in_force(data, community, z.id, dep, config).is_some_and(|p| {
                        replay_route(
                            &community.roads,
                            &community.shelters,
                            &truth.schedule,
                            &p.nodes,
                            dep,
                            config.routing.window,
                        )
                        .is_ok()
                    })
                });
                m.routes_total += 1;
                m.routes_viable += viable as usize;
            }
        }
    }
    m
}

/// Warned, late and missed counts; always sums to the number of labels.
pub fn lead_counts(m: &MetricAccumulator) -> (usize, usize, usize) {
    let c = |k| m.leads.iter().filter(|e| e.category == k).count();
    (c(LeadCategory::Warned), c(LeadCategory::Late), c(LeadCategory::Missed))
}
