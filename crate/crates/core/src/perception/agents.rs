//! Perceptual-layer agents: sensor harmonization and initiation watch.

use std::collections::VecDeque;
use std::sync::Arc;

use crate::grid::GridField;
use crate::runtime::message::{TOPIC_ANALYSIS, TOPIC_INITIATION};
use crate::runtime::{Actions, Observation, Message, Payload, Policy, PolicyError, StateKey, StateValue};
use crate::world::Terrain;

use super::harmonize::{harmonize, AnalysisGrid, HarmonizeParams};
use super::initiation::{detect_initiation, InitiationCandidate, InitiationParams};

pub const HARMONIZER: &str = "harmonizer";
pub const INITIATION: &str = "initiation";

/// Fuses each observation set into the shared analysis.
pub struct HarmonizeAgent {
    nx: usize,
    ny: usize,
    cell_km: f64,
    params: HarmonizeParams,
}

impl HarmonizeAgent {
    pub fn new(terrain: &Terrain, params: HarmonizeParams) -> Self {
        HarmonizeAgent {
            nx: terrain.nx(),
            ny: terrain.ny(),
            cell_km: terrain.elevation.cell_km,
            params,
        }
    }
}

impl Policy for HarmonizeAgent {
    fn act(&mut self, obs: &Observation, msg: &Message, out: &mut Actions) -> Result<(), PolicyError> {
        let Payload::Observations(set) = &msg.observation else {
            return Err(PolicyError::UnexpectedPayload(msg.observation.kind()));
        };
        let prev = match obs.value(StateKey::Analysis)? {
            Some(StateValue::Analysis(a)) => Some(Arc::clone(a)),
            _ => None,
        };
        let analysis = Arc::new(harmonize(
            set,
            prev.as_deref(),
            self.nx,
            self.ny,
            self.cell_km,
            &self.params,
            msg.deliver_at,
        ));
        out.write(StateKey::Analysis, StateValue::Analysis(Arc::clone(&analysis)));
        out.publish(TOPIC_ANALYSIS, Payload::Analysis(analysis));
        Ok(())
    }
}

/// Watches the last three analyses for convective precursors. Unexpired
/// candidates are kept until a newer one lands within the separation
/// distance.
pub struct InitiationAgent {
    uplift: Arc<GridField>,
    params: InitiationParams,
    history: VecDeque<Arc<AnalysisGrid>>,
    active: Vec<InitiationCandidate>,
}

impl InitiationAgent {
    pub fn new(terrain: &Terrain, params: InitiationParams) -> Self {
        InitiationAgent {
            uplift: Arc::new(terrain.uplift.clone()),
            params,
            history: VecDeque::new(),
            active: Vec::new(),
        }
    }
}

impl Policy for InitiationAgent {
    fn act(&mut self, _obs: &Observation, msg: &Message, out: &mut Actions) -> Result<(), PolicyError> {
        let Payload::Analysis(a) = &msg.observation else {
            return Err(PolicyError::UnexpectedPayload(msg.observation.kind()));
        };
        if self.history.back().is_some_and(|h| h.t >= a.t) {
            return Ok(());
        }
        self.history.push_back(Arc::clone(a));
        while self.history.len() > 3 {
            self.history.pop_front();
        }
        let now = a.t;
        let frames: Vec<&GridField> = self.history.iter().map(|h| &h.rain).collect();
        let dt = if frames.len() >= 2 {
            (frames[frames.len() - 1].t - frames[frames.len() - 2].t).max(1)
        } else {
            self.params.persistence.max(1)
        };
        let fresh = detect_initiation(&frames, dt, &self.uplift, &self.params, now);
        let sep2 = self.params.separation * self.params.separation;
        self.active.retain(|c| {
            c.expires_at > now
                && fresh.iter().all(|f| {
                    let d2 = (c.x as f64 - f.x as f64).powi(2) + (c.y as f64 - f.y as f64).powi(2);
                    d2 >= sep2
                })
        });
        self.active.extend(fresh);
        self.active.sort_by_key(|c| (c.detected_at, c.y, c.x));
        let list = Arc::new(self.active.clone());
        out.write(StateKey::Initiation, StateValue::Candidates(Arc::clone(&list)));
        out.publish(TOPIC_INITIATION, Payload::Initiation(list));
        Ok(())
    }
}
