//! The strategic learning agent: gathers verification evidence during an
//! event and adapts calibration, threshold and spread at its boundary.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde_json::json;

use crate::grid::{GridField, Minutes};
use crate::runtime::message::ProbabilitySet;
use crate::runtime::{Actions, Message, Observation, OperatorDecision, Payload, Policy, PolicyError, StateKey, StateValue};
use crate::response::triage::CostModel;
use crate::world::Community;

use super::adaptation::{adapt_spread, adapt_threshold, AdaptationPolicy};
use super::audit::{AuditEntry, AuditKind};
use super::calibration::{recalibrate, CalibrationMap};

pub const LEARNER: &str = "learner";

#[derive(Debug, Clone, PartialEq)]
pub struct LearningConfig {
    pub policy: AdaptationPolicy,
    pub costs: CostModel,
    pub threshold: f64,
    /// Leads whose probabilities are verified.
    pub leads: Vec<Minutes>,
    /// Window after issue over which a district outcome is judged.
    pub outcome_window: Minutes,
    pub calibration_bins: usize,
    pub p_star: f64,
    pub sigma_infl: f64,
    /// Rain rate marking a cell as wet for spread verification.
    pub wet: f64,
}

struct PendingProbability {
    issued_at: Minutes,
    set: Arc<ProbabilitySet>,
    /// District probability and whether the event has been seen yet.
    districts: Vec<(u32, f64, bool)>,
}

struct PendingSpread {
    valid_at: Minutes,
    mean: GridField,
    var: GridField,
    members: usize,
}

pub struct LearningAgent {
    community: Arc<Community>,
    config: LearningConfig,
    probs: Vec<PendingProbability>,
    spreads: Vec<PendingSpread>,
    pairs: Vec<(f64, bool)>,
    records: Vec<(f64, bool)>,
    var_sum: f64,
    err_sum: f64,
    overrides: Vec<(u32, Minutes)>,
}

impl LearningAgent {
    pub fn new(community: Arc<Community>, config: LearningConfig) -> Self {
        LearningAgent {
            community,
            config,
            probs: Vec::new(),
            spreads: Vec::new(),
            pairs: Vec::new(),
            records: Vec::new(),
            var_sum: 0.0,
            err_sum: 0.0,
            overrides: Vec::new(),
        }
    }

    /// Districts whose decision at `issued_at` an operator overrode.
    fn overridden(&self, issued_at: Minutes) -> BTreeSet<u32> {
        self.overrides
            .iter()
            .filter(|&&(_, t)| t >= issued_at && t <= issued_at + self.config.outcome_window)
            .map(|&(d, _)| d)
            .collect()
    }

    fn verify(&mut self, rain: &GridField, t: Minutes) {
        let thr = self.config.threshold;
        let mut done = Vec::new();
        for (pi, p) in self.probs.iter_mut().enumerate() {
            if t <= p.issued_at {
                continue;
            }
            for ((_, _, seen), district) in p.districts.iter_mut().zip(&self.community.districts) {
                if district.cells.iter().any(|&c| rain.data[c] >= thr) {
                    *seen = true;
                }
            }
            if t >= p.issued_at + self.config.outcome_window {
                done.push(pi);
            }
        }
        let excluded_cells = |skip: &BTreeSet<u32>, c: usize| {
            self.community.district_of[c].is_some_and(|d| skip.contains(&d))
        };
        for p in &self.probs {
            for (k, &lead) in p.set.leads.iter().enumerate() {
                if p.issued_at + lead != t || !self.config.leads.contains(&lead) {
                    continue;
                }
                let skip = self.overridden(p.issued_at);
                for (c, (&raw, &obs)) in p.set.raw[k].data.iter().zip(&rain.data).enumerate() {
                    if !excluded_cells(&skip, c) {
                        self.pairs.push((raw, obs >= thr));
                    }
                }
            }
        }
        for &pi in done.iter().rev() {
            let p = self.probs.remove(pi);
            let skip = self.overridden(p.issued_at);
            self.records.extend(
                p.districts
                    .iter()
                    .filter(|(d, _, _)| !skip.contains(d))
                    .map(|&(_, prob, seen)| (prob, seen)),
            );
        }
        let wet = self.config.wet;
        self.spreads.retain(|s| {
            if s.valid_at != t {
                return s.valid_at > t;
            }
            let m = s.members as f64;
            for ((&mu, &v), &o) in s.mean.data.iter().zip(&s.var.data).zip(&rain.data) {
                if mu >= wet || o >= wet {
                    self.var_sum += v * (m + 1.0) / m;
                    self.err_sum += (mu - o).powi(2);
                }
            }
            false
        });
    }

    fn boundary(&mut self, obs: &Observation, out: &mut Actions, event: u64) -> Result<(), PolicyError> {
        let now = obs.clock;
        let c = self.config.clone();
        let map = match obs.value(StateKey::Calibration)? {
            Some(StateValue::Calibration(m)) => (**m).clone(),
            _ => CalibrationMap::identity(c.calibration_bins),
        };
        let outcome = recalibrate(&map, &self.pairs, c.policy.eta);
        if outcome.changed {
            out.audit(
                AuditEntry::new(now, LEARNER, AuditKind::ParamChange, "calibration")
                    .values(json!(map.values), json!(outcome.map.values))
                    .evidence(json!({
                        "event": event,
                        "pairs": outcome.pairs,
                        "observed": outcome.observed,
                        "version": outcome.map.version,
                    }))
                    .rationale("recalibration"),
            );
            out.write(StateKey::Calibration, StateValue::Calibration(Arc::new(outcome.map)));
        }

        let p_star = obs.scalar(StateKey::PStar)?.unwrap_or(c.p_star);
        let th = adapt_threshold(p_star, &self.records, &c.costs, &c.policy);
        out.audit(
            AuditEntry::new(now, LEARNER, AuditKind::ParamChange, "p_star")
                .values(json!(th.old), json!(th.new))
                .evidence(json!({
                    "event": event,
                    "positives": th.positives,
                    "negatives": th.negatives,
                    "costs": th.costs,
                }))
                .rationale(th.rationale.code()),
        );
        if th.new != th.old {
            out.write(StateKey::PStar, StateValue::Scalar(th.new));
        }

        let sigma = obs.scalar(StateKey::SpreadInflation)?.unwrap_or(c.sigma_infl);
        let sp = adapt_spread(sigma, self.var_sum.sqrt(), self.err_sum.sqrt(), &c.policy);
        if sp.new != sp.old {
            out.audit(
                AuditEntry::new(now, LEARNER, AuditKind::ParamChange, "sigma_infl")
                    .values(json!(sp.old), json!(sp.new))
                    .evidence(json!({"event": event, "ratio": sp.ratio}))
                    .rationale("spread/error ratio"),
            );
            out.write(StateKey::SpreadInflation, StateValue::Scalar(sp.new));
        }

        self.probs.clear();
        self.spreads.clear();
        self.pairs.clear();
        self.records.clear();
        self.overrides.clear();
        self.var_sum = 0.0;
        self.err_sum = 0.0;
        Ok(())
    }
}

impl Policy for LearningAgent {
    fn act(&mut self, obs: &Observation, msg: &Message, out: &mut Actions) -> Result<(), PolicyError> {
        match &msg.observation {
            Payload::Probability(set) => {
                let grids: Vec<&GridField> = set
                    .leads
                    .iter()
                    .zip(&set.calibrated)
                    .filter(|(l, _)| **l <= self.config.outcome_window)
                    .map(|(_, g)| g)
                    .collect();
                let districts = self
                    .community
                    .districts
                    .iter()
                    .map(|d| {
                        let p = grids
                            .iter()
                            .flat_map(|g| d.cells.iter().map(|&c| g.data[c]))
                            .fold(0.0, f64::max);
                        (d.id, p, false)
                    })
                    .collect();
                self.probs.push(PendingProbability {
                    issued_at: set.issued_at,
                    set: Arc::clone(set),
                    districts,
                });
                Ok(())
            }
            Payload::Forecast(ens) => {
                if ens.coarse {
                    return Ok(());
                }
                for (k, lead) in ens.leads().into_iter().enumerate() {
                    if !self.config.leads.contains(&lead) {
                        continue;
                    }
                    let mean = ens.mean_at(k);
                    let m = ens.m();
                    let mut var = GridField::zeros(mean.nx, mean.ny, mean.cell_km, mean.t);
                    for member in &ens.members {
                        for ((v, &x), &mu) in var.data.iter_mut().zip(&member[k].data).zip(&mean.data) {
                            *v += (x - mu).powi(2) / m as f64;
                        }
                    }
                    self.spreads.push(PendingSpread {
                        valid_at: ens.issued_at + lead,
                        mean,
                        var,
                        members: m,
                    });
                }
                Ok(())
            }
            Payload::Analysis(a) => {
                self.verify(&a.rain, a.t);
                Ok(())
            }
            Payload::Operator {
                decision: OperatorDecision::Override,
                district,
                ..
            } => {
                self.overrides.push((*district, obs.clock));
                Ok(())
            }
            Payload::Operator { .. } => Ok(()),
            Payload::EventBoundary { event } => self.boundary(obs, out, *event),
            other => Err(PolicyError::UnexpectedPayload(other.kind())),
        }
    }
}
