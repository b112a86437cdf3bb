//! Ground truth for a scenario and the tap that scores forecasts as they
//! are delivered.

use std::sync::{Arc, Mutex};

use sha2::{Digest, Sha256};

use crate::grid::{GridField, Minutes};
use crate::prediction::nowcast::EnsembleForecast;
use crate::response::dissemination::ReachReport;
use crate::response::hydrology::{inundation_map, simulate_runoff, DepthGrid, HydroError, RunoffState};
use crate::response::routing::{NodeDepthSchedule, RoutePlan};
use crate::runtime::message::{TOPIC_DEPTH, TOPIC_FORECAST_FINE, TOPIC_OBS, TOPIC_PROBABILITY, TOPIC_REACH, TOPIC_ROUTES};
use crate::runtime::{Message, Payload, Tap};
use crate::world::{label_events, EventLabel, Scenario, ScenarioError};

use super::metrics::{contingency, crps, ContingencyTable, ReliabilityBins};
use super::pipeline::{EvalConfig, PipelineConfig};

#[derive(Debug, thiserror::Error)]
pub enum TruthError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Hydro(#[from] HydroError),
}

/// Truth rain at the run cadence, labels, truth flood depths and the
/// evaluation masks.
pub struct Truth {
    pub cadence: Minutes,
    pub frames: Vec<GridField>,
    pub labels: Vec<EventLabel>,
    pub depth: Vec<DepthGrid>,
    pub schedule: NodeDepthSchedule,
    pub mass_balance_error: f64,
    masks: Vec<Option<Vec<bool>>>,
}

impl Truth {
    pub fn new(scenario: &Scenario, config: &PipelineConfig) -> Result<Self, TruthError> {
        let cadence = scenario.config.cadence;
        let frames: Vec<GridField> = (0..=scenario.duration() / cadence)
            .map(|k| scenario.truth_step(k * cadence).map(|f| f.rain))
            .collect::<Result<_, _>>()?;
        let labels = label_events(scenario);
        let s0 = RunoffState::dry(&scenario.terrain, &config.hydro, 0);
        let runoff = simulate_runoff(&frames[1..], &scenario.terrain, &s0, cadence)?;
        let mass_balance_error = runoff
            .iter()
            .map(|s| s.mass_balance_error(&s0))
            .fold(0.0, f64::max);
        let mut depth = inundation_map(std::slice::from_ref(&s0), &scenario.terrain, &config.hydro, "truth");
        depth.extend(inundation_map(&runoff, &scenario.terrain, &config.hydro, "truth"));
        let schedule = NodeDepthSchedule::from_grids(&scenario.community.roads, &depth);
        let masks = frames
            .iter()
            .map(|f| eval_mask(&labels, f.t, scenario.nx(), scenario.ny(), &config.eval))
            .collect();
        Ok(Truth {
            cadence,
            frames,
            labels,
            depth,
            schedule,
            mass_balance_error,
            masks,
        })
    }

    pub fn frame(&self, t: Minutes) -> Option<&GridField> {
        if t % self.cadence != 0 {
            return None;
        }
        self.frames.get((t / self.cadence) as usize)
    }

    /// Cells scored at valid time `t`, if any.
    pub fn mask(&self, t: Minutes) -> Option<&[bool]> {
        if t % self.cadence != 0 {
            return None;
        }
        self.masks.get((t / self.cadence) as usize)?.as_deref()
    }
}

/// Union of event bounding boxes (plus buffer) for events whose window
/// `[onset − before, end + after]` contains `t`.
fn eval_mask(labels: &[EventLabel], t: Minutes, nx: usize, ny: usize, eval: &EvalConfig) -> Option<Vec<bool>> {
    let mut mask: Option<Vec<bool>> = None;
    for e in labels {
        if t + eval.before_onset < e.onset || t > e.end + eval.after_end {
            continue;
        }
        let (x0, y0, x1, y1) = e.bbox(nx);
        let m = mask.get_or_insert_with(|| vec![false; nx * ny]);
        for y in y0.saturating_sub(eval.buffer)..=(y1 + eval.buffer).min(ny - 1) {
            for x in x0.saturating_sub(eval.buffer)..=(x1 + eval.buffer).min(nx - 1) {
                m[y * nx + x] = true;
            }
        }
    }
    mask
}

/// Per cell, the `ceil(m/2)`-th largest member value: a threshold is
/// reached here exactly when at least half of the members reach it.
pub fn upper_median(ens: &EnsembleForecast, k: usize) -> GridField {
    let first = &ens.members[0][k];
    let mut out = GridField::zeros(first.nx, first.ny, first.cell_km, first.t);
    let rank = ens.m().div_ceil(2);
    let mut v = Vec::with_capacity(ens.m());
    for c in 0..first.len() {
        v.clear();
        v.extend(ens.members.iter().map(|m| m[k].data[c]));
        v.sort_by(|a, b| b.total_cmp(a));
        out.data[c] = v[rank - 1];
    }
    out
}

/// What the probe has seen so far.
#[derive(Debug, Clone)]
pub struct ProbeData {
    pub crps_sum: f64,
    pub crps_n: u64,
    pub cont20: ContingencyTable,
    pub cont40: ContingencyTable,
    pub reliability: ReliabilityBins,
    pub obs_hash: Sha256,
    pub observations: usize,
    pub reach: Vec<ReachReport>,
    /// Route sets with the time they were delivered.
    pub routes: Vec<(Minutes, Arc<Vec<RoutePlan>>)>,
    pub forecast_mass_balance: f64,
    pub forecasts: usize,
}

impl ProbeData {
    fn new(bins: usize) -> Self {
        ProbeData {
            crps_sum: 0.0,
            crps_n: 0,
            cont20: ContingencyTable::default(),
            cont40: ContingencyTable::default(),
            reliability: ReliabilityBins::new(bins),
            obs_hash: Sha256::new(),
            observations: 0,
            reach: Vec::new(),
            routes: Vec::new(),
            forecast_mass_balance: 0.0,
            forecasts: 0,
        }
    }

    pub fn input_hash(&self) -> String {
        hex::encode(self.obs_hash.clone().finalize())
    }
}

pub struct Probe {
    truth: Arc<Truth>,
    eval: EvalConfig,
    data: Arc<Mutex<ProbeData>>,
}

impl Probe {
    pub fn new(truth: Arc<Truth>, eval: EvalConfig) -> (Self, Arc<Mutex<ProbeData>>) {
        let data = Arc::new(Mutex::new(ProbeData::new(eval.reliability_bins)));
        (
            Probe {
                truth,
                eval,
                data: Arc::clone(&data),
            },
            data,
        )
    }
}

impl Tap for Probe {
    fn on_deliver(&mut self, msg: &Message) {
        let mut d = self.data.lock().expect("probe lock");
        match (&msg.topic[..], &msg.observation) {
            (TOPIC_OBS, Payload::Observations(o)) => {
                o.hash_into(&mut d.obs_hash);
                d.observations += 1;
            }
            (TOPIC_FORECAST_FINE, Payload::Forecast(ens)) => {
                d.forecasts += 1;
                let (t20, t40) = self.eval.thresholds;
                for (k, lead) in ens.leads().into_iter().enumerate() {
                    if !self.eval.leads.contains(&lead) {
                        continue;
                    }
                    let valid = ens.issued_at + lead;
                    let (Some(mask), Some(truth)) = (self.truth.mask(valid), self.truth.frame(valid)) else {
                        continue;
                    };
                    for (c, &on) in mask.iter().enumerate() {
                        if on {
                            if let Ok(v) = crps(&ens.values_at(k, c), truth.data[c]) {
                                d.crps_sum += v;
                                d.crps_n += 1;
                            }
                        }
                    }
                    let event_field = upper_median(ens, k);
                    if let Ok(t) = contingency(&event_field, truth, t20, Some(mask)) {
                        d.cont20.merge(&t);
                    }
                    if let Ok(t) = contingency(&event_field, truth, t40, Some(mask)) {
                        d.cont40.merge(&t);
                    }
                }
            }
            (TOPIC_PROBABILITY, Payload::Probability(p)) => {
                for (lead, grid) in p.leads.iter().zip(&p.calibrated) {
                    if !self.eval.leads.contains(lead) {
                        continue;
                    }
                    let valid = p.issued_at + lead;
                    let (Some(mask), Some(truth)) = (self.truth.mask(valid), self.truth.frame(valid)) else {
                        continue;
                    };
                    for (c, &on) in mask.iter().enumerate() {
                        if on {
                            d.reliability.add(grid.data[c], truth.data[c] >= p.threshold);
                        }
                    }
                }
            }
            (TOPIC_REACH, Payload::Reach(r)) => d.reach.push((**r).clone()),
            (TOPIC_ROUTES, Payload::Routes(r)) => d.routes.push((msg.deliver_at, Arc::clone(r))),
            (TOPIC_DEPTH, Payload::Depth(f)) => {
                d.forecast_mass_balance = d.forecast_mass_balance.max(f.mass_balance_error);
            }
            _ => {}
        }
    }
}
