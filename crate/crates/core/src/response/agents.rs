//! Operational response agents: hydrology, triage, dissemination and
//! evacuation routing.

use std::sync::Arc;

use crate::grid::{GridField, Minutes};
use crate::prediction::nowcast::EnsembleForecast;
use crate::prediction::probability::ProbabilityGrid;
use crate::runtime::message::{DepthForecast, TOPIC_DEPTH, TOPIC_REACH, TOPIC_ROUTES};
use crate::runtime::{Actions, Message, Observation, Payload, Policy, PolicyError, StateKey, StateValue};
use crate::seed::stream;
use crate::world::{Community, Terrain};

use super::dissemination::{disseminate, Channel};
use super::hydrology::{depth_from_runoff, runoff_step, DepthGrid, HydroParams, RunoffState};
use super::routing::{plan_routes, static_route, NodeDepthSchedule, RoutePlan, RoutingParams};
use super::triage::{triage, AlertDecision, TriageContext, TriageParams};

pub const HYDROLOGIST: &str = "hydrologist";
pub const TRIAGE: &str = "triage";
pub const COMMUNICATOR: &str = "communicator";
pub const ROUTER: &str = "router";

/// Tracks runoff from each analysis and, on every fine forecast, runs the
/// reservoirs ahead under the ensemble-mean rain.
pub struct HydrologyAgent {
    terrain: Arc<Terrain>,
    params: HydroParams,
    step: Minutes,
    initial: RunoffState,
    runoff: RunoffState,
}

impl HydrologyAgent {
    pub fn new(terrain: Arc<Terrain>, params: HydroParams, step: Minutes, t0: Minutes) -> Self {
        let initial = RunoffState::dry(&terrain, &params, t0);
        HydrologyAgent {
            runoff: initial.clone(),
            initial,
            terrain,
            params,
            step: step.max(1),
        }
    }

    fn advance(&mut self, rain: &GridField, t: Minutes) -> Result<(), PolicyError> {
        while self.runoff.t < t {
            let dt = (t - self.runoff.t).min(self.step);
            self.runoff = runoff_step(&self.runoff, rain, &self.terrain, dt).map_err(|e| PolicyError::Failed(e.to_string()))?;
        }
        Ok(())
    }

    fn forecast(&self, ens: &EnsembleForecast) -> Result<DepthForecast, PolicyError> {
        let means: Vec<GridField> = (0..ens.members[0].len()).map(|k| ens.mean_at(k)).collect();
        let source = format!("forecast/{}", ens.issued_at);
        let mut grids = vec![DepthGrid {
            t: self.runoff.t,
            depth: depth_from_runoff(&self.runoff, &self.terrain, &self.params),
            source: source.clone(),
        }];
        let mut s = self.runoff.clone();
        let mut worst = s.mass_balance_error(&self.initial);
        let end = ens.issued_at + ens.horizon;
        while s.t < end {
            let dt = self.step.min(end - s.t);
            let elapsed = s.t + dt - ens.issued_at;
            let k = (elapsed.div_ceil(ens.cadence) as usize).saturating_sub(1).min(means.len() - 1);
            s = runoff_step(&s, &means[k], &self.terrain, dt).map_err(|e| PolicyError::Failed(e.to_string()))?;
            worst = worst.max(s.mass_balance_error(&self.initial));
            grids.push(DepthGrid {
                t: s.t,
                depth: depth_from_runoff(&s, &self.terrain, &self.params),
                source: source.clone(),
            });
        }
        Ok(DepthForecast {
            issued_at: ens.issued_at,
            grids,
            mass_balance_error: worst,
        })
    }
}

impl Policy for HydrologyAgent {
    fn act(&mut self, _obs: &Observation, msg: &Message, out: &mut Actions) -> Result<(), PolicyError> {
        match &msg.observation {
            Payload::Analysis(a) => self.advance(&a.rain, a.t),
            Payload::Forecast(ens) => {
                if ens.coarse || ens.members.is_empty() || ens.members[0].is_empty() {
                    return Err(PolicyError::Failed("hydrology needs a fine forecast".into()));
                }
                let depth = Arc::new(self.forecast(ens)?);
                out.write(StateKey::Depth, StateValue::Depth(Arc::clone(&depth)));
                out.publish(TOPIC_DEPTH, Payload::Depth(depth));
                Ok(())
            }
            other => Err(PolicyError::UnexpectedPayload(other.kind())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriageAgentConfig {
    pub params: TriageParams,
    /// Used when shared state carries no adapted threshold.
    pub p_star: f64,
    pub delta: f64,
    pub degraded_delta: f64,
    /// Longest lead folded into the district probability.
    pub max_lead: Minutes,
    pub calibration_required: bool,
    /// Analysis stale fraction above which inputs count as stale.
    pub stale_limit: f64,
}

/// Turns the latest probabilities and forecast depths into alert proposals
/// for districts that are unalerted, need a higher tier, or whose alert has
/// lapsed.
pub struct TriageAgent {
    community: Arc<Community>,
    config: TriageAgentConfig,
}

impl TriageAgent {
    pub fn new(community: Arc<Community>, config: TriageAgentConfig) -> Self {
        TriageAgent { community, config }
    }
}

/// Per-cell maximum over grids.
fn cell_max<'a>(grids: impl Iterator<Item = &'a GridField>) -> Option<GridField> {
    let mut acc: Option<GridField> = None;
    for g in grids {
        match &mut acc {
            None => acc = Some(g.clone()),
            Some(a) => a.data.iter_mut().zip(&g.data).for_each(|(x, &y)| *x = x.max(y)),
        }
    }
    acc
}

impl Policy for TriageAgent {
    fn act(&mut self, obs: &Observation, msg: &Message, out: &mut Actions) -> Result<(), PolicyError> {
        let Payload::Depth(depth) = &msg.observation else {
            return Err(PolicyError::UnexpectedPayload(msg.observation.kind()));
        };
        let Some(StateValue::Probability(probs)) = obs.value(StateKey::Probability)? else {
            return Ok(());
        };
        let c = &self.config;
        let now = obs.clock;
        let Some(p) = cell_max(
            probs
                .leads
                .iter()
                .zip(&probs.calibrated)
                .filter(|(l, _)| **l <= c.max_lead)
                .map(|(_, g)| g),
        ) else {
            return Ok(());
        };
        let prob = ProbabilityGrid {
            threshold: probs.threshold,
            lead: c.max_lead,
            p,
            calibrated: probs.calibration_version.is_some(),
        };
        let dmax = cell_max(depth.grids.iter().map(|g| &g.depth)).map(|depth| DepthGrid {
            t: now,
            depth,
            source: "max".into(),
        });
        let stale = match obs.value(StateKey::Analysis)? {
            Some(StateValue::Analysis(a)) => a.stale_fraction() > c.stale_limit,
            _ => true,
        };
        let degraded = match obs.value(StateKey::Governance)? {
            Some(StateValue::Flags(f)) => f.get("degraded").copied().unwrap_or(false),
            _ => false,
        };
        let ctx = TriageContext {
            p_star: obs.scalar(StateKey::PStar)?.unwrap_or(c.p_star),
            delta: c.delta,
            degraded_delta: c.degraded_delta,
            now,
            calibration_required: c.calibration_required,
            stale_inputs: stale || degraded,
        };
        let active: Vec<AlertDecision> = match obs.value(StateKey::Alerts)? {
            Some(StateValue::Alerts(a)) => a.iter().filter(|x| x.expiry > now).cloned().collect(),
            _ => Vec::new(),
        };
        for d in triage(&prob, dmax.as_ref(), &self.community, &ctx, &c.params) {
            let current = active.iter().find(|a| a.district == d.district);
            if current.is_none_or(|a| d.tier > a.tier) {
                out.propose(d);
            }
        }
        Ok(())
    }
}

/// Sends each issued alert over the configured channels.
pub struct CommsAgent {
    community: Arc<Community>,
    channels: Vec<Channel>,
    seed: u64,
    sent: u64,
}

impl CommsAgent {
    pub fn new(community: Arc<Community>, channels: Vec<Channel>, seed: u64) -> Self {
        CommsAgent {
            community,
            channels,
            seed,
            sent: 0,
        }
    }
}

impl Policy for CommsAgent {
    fn act(&mut self, _obs: &Observation, msg: &Message, out: &mut Actions) -> Result<(), PolicyError> {
        let Payload::Alert(alert) = &msg.observation else {
            return Err(PolicyError::UnexpectedPayload(msg.observation.kind()));
        };
        let mut rng = stream(self.seed, "reach", self.sent);
        self.sent += 1;
        let report = disseminate(alert, &self.channels, &self.community, &mut rng);
        out.publish(TOPIC_REACH, Payload::Reach(Arc::new(report)));
        Ok(())
    }
}

/// Keeps one evacuation route per zone. In dynamic mode every depth
/// forecast triggers a replan, falling back to the dry-network route when
/// no forecast-safe path exists; otherwise the dry-network routes are
/// published once.
pub struct RoutingAgent {
    community: Arc<Community>,
    params: RoutingParams,
    dynamic: bool,
    published: bool,
}

impl RoutingAgent {
    pub fn new(community: Arc<Community>, params: RoutingParams, dynamic: bool) -> Self {
        RoutingAgent {
            community,
            params,
            dynamic,
            published: false,
        }
    }

    fn static_plans(&self) -> Vec<RoutePlan> {
        self.community
            .zones
            .iter()
            .filter_map(|z| static_route(&self.community, z.id, &self.params))
            .collect()
    }
}

impl Policy for RoutingAgent {
    fn act(&mut self, obs: &Observation, msg: &Message, out: &mut Actions) -> Result<(), PolicyError> {
        let Payload::Depth(depth) = &msg.observation else {
            return Err(PolicyError::UnexpectedPayload(msg.observation.kind()));
        };
        let plans = if self.dynamic {
            let schedule = NodeDepthSchedule::from_grids(&self.community.roads, &depth.grids);
            let zones: Vec<u32> = self.community.zones.iter().map(|z| z.id).collect();
            let now = obs.clock;
            plan_routes(&self.community, &schedule, &zones, now, &self.params)
                .into_iter()
                .map(|p| {
                    if p.viable {
                        return p;
                    }
                    match static_route(&self.community, p.zone, &self.params) {
                        Some(s) => RoutePlan {
                            departure: now,
                            times: s.times.iter().map(|t| t + now).collect(),
                            arrival: s.arrival.map(|a| a + now),
                            viable: false,
                            ..s
                        },
                        None => p,
                    }
                })
                .collect()
        } else if !self.published {
            self.static_plans()
        } else {
            return Ok(());
        };
        self.published = true;
        let plans = Arc::new(plans);
        out.write(StateKey::Routes, StateValue::Routes(Arc::clone(&plans)));
        out.publish(TOPIC_ROUTES, Payload::Routes(plans));
        Ok(())
    }
}
