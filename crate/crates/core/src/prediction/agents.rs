//! Operational forecasting agents: coarse nowcast and downscaled
//! probabilities.

use std::sync::Arc;

use crate::grid::{GridField, Minutes};
use crate::learning_audit::calibration::CalibrationMap;
use crate::perception::harmonize::AnalysisGrid;
use crate::runtime::message::{ProbabilitySet, TOPIC_FORECAST_COARSE, TOPIC_FORECAST_FINE, TOPIC_PROBABILITY};
use crate::runtime::{Actions, Message, Observation, Payload, Policy, PolicyError, StateKey, StateValue};
use crate::seed::derive_seed;
use crate::world::Terrain;

use super::downscale::{downscale, DownscaleParams};
use super::motion::{estimate_motion, MotionParams};
use super::nowcast::{nowcast_deterministic, nowcast_ensemble, EnsembleForecast, NowcastParams};

pub const NOWCASTER: &str = "nowcaster";
pub const DOWNSCALER: &str = "downscaler";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NowcastAgentConfig {
    pub params: NowcastParams,
    pub motion: MotionParams,
    /// Coarsening of the analysis before extrapolation.
    pub factor: usize,
    /// Issue a forecast every this many minutes of analysis time.
    pub issue_every: Minutes,
    /// Probabilistic ensemble (otherwise one deterministic member).
    pub ensemble: bool,
    /// Inject initiation candidates from shared state.
    pub initiation: bool,
}

pub struct NowcastAgent {
    config: NowcastAgentConfig,
    seed: u64,
    prev: Option<Arc<AnalysisGrid>>,
}

impl NowcastAgent {
    pub fn new(config: NowcastAgentConfig, seed: u64) -> Self {
        NowcastAgent { config, seed, prev: None }
    }
}

impl Policy for NowcastAgent {
    fn act(&mut self, obs: &Observation, msg: &Message, out: &mut Actions) -> Result<(), PolicyError> {
        let Payload::Analysis(a) = &msg.observation else {
            return Err(PolicyError::UnexpectedPayload(msg.observation.kind()));
        };
        let Some(prev) = self.prev.replace(Arc::clone(a)) else {
            return Ok(());
        };
        if prev.t >= a.t || a.t % self.config.issue_every.max(1) != 0 {
            return Ok(());
        }
        let c = &self.config;
        let motion = estimate_motion(&prev.rain, &a.rain, a.t - prev.t, &c.motion);
        let coarse = a
            .rain
            .block_mean(c.factor)
            .map_err(|e| PolicyError::Failed(e.to_string()))?;
        let mut params = c.params;
        if let Some(s) = obs.scalar(StateKey::SpreadInflation)? {
            params.sigma_infl = s;
        }
        let seed = derive_seed(self.seed, "nowcast", a.t as u64);
        let forecast = if c.ensemble {
            let candidates = if c.initiation {
                match obs.value(StateKey::Initiation)? {
                    Some(StateValue::Candidates(list)) => {
                        list.iter().filter(|k| k.expires_at > a.t).cloned().collect()
                    }
                    _ => Vec::new(),
                }
            } else {
                Vec::new()
            };
            nowcast_ensemble(&coarse, &motion, &candidates, c.factor, &params, seed)
        } else {
            nowcast_deterministic(&coarse, &motion, c.factor, &params, seed)
        }
        .map_err(|e| PolicyError::Failed(e.to_string()))?;
        let forecast = Arc::new(forecast);
        out.write(StateKey::ForecastCoarse, StateValue::Ensemble(Arc::clone(&forecast)));
        out.publish(TOPIC_FORECAST_COARSE, Payload::Forecast(forecast));
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DownscaleAgentConfig {
    pub params: DownscaleParams,
    /// Terrain-aware redistribution (otherwise block replication).
    pub downscaling: bool,
    /// Apply the shared calibration map to probabilities.
    pub calibrate: bool,
    pub threshold: f64,
    pub leads: Vec<Minutes>,
}

pub struct DownscaleAgent {
    config: DownscaleAgentConfig,
    uplift: Arc<GridField>,
}

impl DownscaleAgent {
    pub fn new(terrain: &Terrain, config: DownscaleAgentConfig) -> Self {
        DownscaleAgent {
            config,
            uplift: Arc::new(terrain.uplift.clone()),
        }
    }

    fn refine(&self, coarse: &EnsembleForecast) -> Result<EnsembleForecast, PolicyError> {
        let s = coarse.factor;
        let mut members = Vec::with_capacity(coarse.m());
        for (seq, &mseed) in coarse.members.iter().zip(&coarse.member_seeds) {
            let mut fine = Vec::with_capacity(seq.len());
            for g in seq {
                let f = if !coarse.coarse {
                    g.clone()
                } else if self.config.downscaling {
                    downscale(g, s, &self.uplift, &self.config.params, mseed)
                        .map_err(|e| PolicyError::Failed(e.to_string()))?
                } else {
                    let mut r = g.replicate(s);
                    r.cell_km = self.uplift.cell_km;
                    r
                };
                fine.push(f);
            }
            members.push(fine);
        }
        Ok(EnsembleForecast {
            factor: 1,
            coarse: false,
            members,
            ..coarse.clone()
        })
    }
}

/// Member fraction at or above `threshold` at lead index `k`.
pub fn member_fraction(ens: &EnsembleForecast, k: usize, threshold: f64) -> GridField {
    let first = &ens.members[0][k];
    let mut p = GridField::zeros(first.nx, first.ny, first.cell_km, first.t);
    let m = ens.m() as f64;
    for member in &ens.members {
        for (o, &v) in p.data.iter_mut().zip(&member[k].data) {
            if v >= threshold {
                *o += 1.0;
            }
        }
    }
    p.data.iter_mut().for_each(|v| *v /= m);
    p
}

pub fn probability_set(
    ens: &EnsembleForecast,
    threshold: f64,
    leads: &[Minutes],
    map: Option<&CalibrationMap>,
) -> Result<ProbabilitySet, PolicyError> {
    let mut raw = Vec::with_capacity(leads.len());
    let mut calibrated = Vec::with_capacity(leads.len());
    for &lead in leads {
        let k = ens.lead_index(lead).map_err(|e| PolicyError::Failed(e.to_string()))?;
        let r = member_fraction(ens, k, threshold);
        calibrated.push(match map {
            Some(m) => r.map(|p| m.apply(p)),
            None => r.clone(),
        });
        raw.push(r);
    }
    Ok(ProbabilitySet {
        issued_at: ens.issued_at,
        threshold,
        leads: leads.to_vec(),
        raw,
        calibrated,
        calibration_version: map.map(|m| m.version),
    })
}

impl Policy for DownscaleAgent {
    fn act(&mut self, obs: &Observation, msg: &Message, out: &mut Actions) -> Result<(), PolicyError> {
        let Payload::Forecast(coarse) = &msg.observation else {
            return Err(PolicyError::UnexpectedPayload(msg.observation.kind()));
        };
        let fine = Arc::new(self.refine(coarse)?);
        let map = if self.config.calibrate {
            match obs.value(StateKey::Calibration)? {
                Some(StateValue::Calibration(m)) => Some(Arc::clone(m)),
                _ => None,
            }
        } else {
            None
        };
        let probs = Arc::new(probability_set(&fine, self.config.threshold, &self.config.leads, map.as_deref())?);
        out.write(StateKey::ForecastFine, StateValue::Ensemble(Arc::clone(&fine)));
        out.write(StateKey::Probability, StateValue::Probability(Arc::clone(&probs)));
        out.publish(TOPIC_FORECAST_FINE, Payload::Forecast(fine));
        out.publish(TOPIC_PROBABILITY, Payload::Probability(probs));
        Ok(())
    }
}
