//! Pipeline configuration and agent wiring for the MAS, the feed-forward
//! baseline and the ablations.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Minutes;
use crate::learning_audit::adaptation::AdaptationPolicy;
use crate::learning_audit::agent::{LearningAgent, LearningConfig, LEARNER};
use crate::learning_audit::audit::AuditHeader;
use crate::learning_audit::calibration::CalibrationMap;
use crate::perception::agents::{HarmonizeAgent, InitiationAgent, HARMONIZER, INITIATION};
use crate::perception::harmonize::HarmonizeParams;
use crate::perception::initiation::InitiationParams;
use crate::prediction::agents::{DownscaleAgent, DownscaleAgentConfig, NowcastAgent, NowcastAgentConfig, DOWNSCALER, NOWCASTER};
use crate::prediction::downscale::DownscaleParams;
use crate::prediction::motion::MotionParams;
use crate::prediction::nowcast::NowcastParams;
use crate::response::agents::{
    CommsAgent, HydrologyAgent, RoutingAgent, TriageAgent, TriageAgentConfig, COMMUNICATOR, HYDROLOGIST, ROUTER, TRIAGE,
};
use crate::response::dissemination::{multi_channel, single_channel};
use crate::response::hydrology::HydroParams;
use crate::response::routing::RoutingParams;
use crate::response::triage::{CostModel, TriageParams};
use crate::runtime::message::{
    TOPIC_ALERTS, TOPIC_ANALYSIS, TOPIC_BOUNDARY, TOPIC_DEPTH, TOPIC_FORECAST_COARSE, TOPIC_FORECAST_FINE, TOPIC_OBS,
    TOPIC_OPERATOR, TOPIC_PROBABILITY,
};
use crate::runtime::{AgentDescriptor, Layer, ObservationBinding, Runtime, RuntimeConfig, RuntimeError, StateKey, StateValue};
use crate::seed::derive_seed;
use crate::world::{Scenario, ScenarioConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineFlags {
    pub ensemble: bool,
    pub initiation: bool,
    pub downscaling: bool,
    pub learning: bool,
    pub multi_channel: bool,
    pub dynamic_routes: bool,
}

impl PipelineFlags {
    pub fn mas() -> Self {
        PipelineFlags {
            ensemble: true,
            initiation: true,
            downscaling: true,
            learning: true,
            multi_channel: true,
            dynamic_routes: true,
        }
    }

    pub fn baseline() -> Self {
        PipelineFlags {
            ensemble: false,
            initiation: false,
            downscaling: false,
            learning: false,
            multi_channel: false,
            dynamic_routes: false,
        }
    }

    pub fn as_map(&self) -> BTreeMap<String, bool> {
        [
            ("ensemble", self.ensemble),
            ("initiation", self.initiation),
            ("downscaling", self.downscaling),
            ("learning", self.learning),
            ("multi_channel", self.multi_channel),
            ("dynamic_routes", self.dynamic_routes),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Initiation,
    Downscaling,
    Learning,
}

impl Component {
    pub const ALL: [Component; 3] = [Component::Initiation, Component::Downscaling, Component::Learning];

    pub fn as_str(&self) -> &'static str {
        match self {
            Component::Initiation => "initiation",
            Component::Downscaling => "downscaling",
            Component::Learning => "learning",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModeError {
    #[error("unknown component {0:?} (expected initiation, downscaling or learning)")]
    Component(String),
    #[error("unknown mode {0:?} (expected mas, baseline or ablation:<component>)")]
    Mode(String),
}

impl FromStr for Component {
    type Err = ModeError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "initiation" => Ok(Component::Initiation),
            "downscaling" => Ok(Component::Downscaling),
            "learning" => Ok(Component::Learning),
            other => Err(ModeError::Component(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Mas,
    Baseline,
    Ablation(Component),
}

impl Mode {
    pub fn flags(&self) -> PipelineFlags {
        match self {
            Mode::Mas => PipelineFlags::mas(),
            Mode::Baseline => PipelineFlags::baseline(),
            Mode::Ablation(c) => {
                let mut f = PipelineFlags::mas();
                match c {
                    Component::Initiation => f.initiation = false,
                    Component::Downscaling => f.downscaling = false,
                    Component::Learning => f.learning = false,
                }
                f
            }
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Mas => write!(f, "mas"),
            Mode::Baseline => write!(f, "baseline"),
            Mode::Ablation(c) => write!(f, "ablation:{}", c.as_str()),
        }
    }
}

impl FromStr for Mode {
    type Err = ModeError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mas" => Ok(Mode::Mas),
            "baseline" => Ok(Mode::Baseline),
            other => match other.strip_prefix("ablation:") {
                Some(c) => Ok(Mode::Ablation(c.parse()?)),
                None => Err(ModeError::Mode(other.to_string())),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub leads: Vec<Minutes>,
    /// Cells added around each event bounding box.
    pub buffer: usize,
    /// Minutes before onset and after end included in the window.
    pub before_onset: Minutes,
    pub after_end: Minutes,
    pub thresholds: (f64, f64),
    pub reliability_bins: usize,
    /// Departure offsets after the first warning at which routes are
    /// replayed.
    pub route_offsets: Vec<Minutes>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            leads: vec![10, 20, 30],
            buffer: 8,
            before_onset: 30,
            after_end: 15,
            thresholds: (20.0, 40.0),
            reliability_bins: 10,
            route_offsets: vec![0, 10, 20, 30],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub scenario: ScenarioConfig,
    pub runtime: RuntimeConfig,
    pub harmonize: HarmonizeParams,
    pub initiation: InitiationParams,
    pub motion: MotionParams,
    pub nowcast: NowcastParams,
    pub downscale: DownscaleParams,
    pub hydro: HydroParams,
    pub triage: TriageParams,
    pub routing: RoutingParams,
    pub costs: CostModel,
    pub adaptation: AdaptationPolicy,
    /// Coarsening factor of the nowcast grid.
    pub coarse_factor: usize,
    pub forecast_every: Minutes,
    /// Alerting threshold for exceedance probabilities, mm/h.
    pub alert_threshold: f64,
    pub probability_leads: Vec<Minutes>,
    pub alert_max_lead: Minutes,
    pub calibration_bins: usize,
    /// Spread inflation before any learning.
    pub initial_sigma_infl: f64,
    pub stale_limit: f64,
    pub wet_threshold: f64,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            scenario: ScenarioConfig::default(),
            runtime: RuntimeConfig::default(),
            harmonize: HarmonizeParams::default(),
            initiation: InitiationParams::default(),
            motion: MotionParams::default(),
            nowcast: NowcastParams::default(),
            downscale: DownscaleParams::default(),
            hydro: HydroParams::default(),
            triage: TriageParams::default(),
            routing: RoutingParams::default(),
            costs: CostModel::default(),
            adaptation: AdaptationPolicy::default(),
            coarse_factor: 8,
            forecast_every: 10,
            alert_threshold: 20.0,
            probability_leads: vec![10, 20, 30],
            alert_max_lead: 30,
            calibration_bins: 10,
            initial_sigma_infl: 1.0,
            stale_limit: 0.5,
            wet_threshold: 1.0,
            eval: EvalConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid config: {0}")]
pub struct ConfigError(pub String);

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let e = |m: String| Err(ConfigError(m));
        self.scenario.validate().map_err(|x| ConfigError(x.to_string()))?;
        self.runtime
            .governance
            .validate()
            .map_err(|x| ConfigError(x.to_string()))?;
        self.costs.validate().map_err(|x| ConfigError(x.to_string()))?;
        let s = self.coarse_factor;
        if s == 0 || self.scenario.nx % s != 0 || self.scenario.ny % s != 0 {
            return e(format!("coarse_factor {s} must divide the {}x{} grid", self.scenario.nx, self.scenario.ny));
        }
        if self.runtime.cadence != self.scenario.cadence {
            return e("runtime and scenario cadence differ".into());
        }
        if self.forecast_every == 0 || self.forecast_every % self.runtime.cadence != 0 {
            return e("forecast_every must be a positive multiple of the cadence".into());
        }
        let n = &self.nowcast;
        if n.cadence == 0 || n.horizon % n.cadence != 0 || n.m < 2 {
            return e("nowcast needs m >= 2 and a horizon that is a multiple of its cadence".into());
        }
        for &l in self.probability_leads.iter().chain(&self.eval.leads) {
            if l == 0 || l > n.horizon || l % n.cadence != 0 {
                return e(format!("lead {l} is not a forecast lead"));
            }
        }
        if self.calibration_bins == 0 || self.eval.reliability_bins == 0 {
            return e("bin counts must be positive".into());
        }
        if !(self.initial_sigma_infl > 0.0) {
            return e("initial_sigma_infl must be positive".into());
        }
        Ok(())
    }
}

/// Strategic parameters carried from one event to the next.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnedState {
    pub calibration: CalibrationMap,
    pub p_star: f64,
    pub sigma_infl: f64,
}

impl LearnedState {
    pub fn initial(config: &PipelineConfig) -> Self {
        LearnedState {
            calibration: CalibrationMap::identity(config.calibration_bins),
            p_star: config.costs.p_star(),
            sigma_infl: config.initial_sigma_infl,
        }
    }

    /// Reads the strategic entries back out of a finished run.
    pub fn from_runtime(rt: &Runtime, fallback: &LearnedState) -> Self {
        let state = rt.state();
        let calibration = match state.get(StateKey::Calibration).map(|v| &v.value) {
            Some(StateValue::Calibration(m)) => (**m).clone(),
            _ => fallback.calibration.clone(),
        };
        let scalar = |k| state.get(k).and_then(|v| v.value.as_scalar());
        LearnedState {
            calibration,
            p_star: scalar(StateKey::PStar).unwrap_or(fallback.p_star),
            sigma_infl: scalar(StateKey::SpreadInflation).unwrap_or(fallback.sigma_infl),
        }
    }
}

/// Registers the agents `flags` call for on a fresh runtime.
pub fn build_runtime(
    scenario: &Scenario,
    config: &PipelineConfig,
    flags: PipelineFlags,
    learned: &LearnedState,
    header: AuditHeader,
) -> Result<Runtime, RuntimeError> {
    let seed = header.seed;
    let mut rt = Runtime::new(config.runtime.clone(), seed, header)?;
    let terrain = Arc::new(scenario.terrain.clone());
    let community = Arc::new(scenario.community.clone());
    let gov = config.runtime.governance;

    rt.register(
        AgentDescriptor::new(HARMONIZER, Layer::Perceptual, &[TOPIC_OBS]),
        ObservationBinding::new(HARMONIZER, &[StateKey::Analysis]),
        Box::new(HarmonizeAgent::new(&terrain, config.harmonize)),
    )?;
    if flags.initiation {
        rt.register(
            AgentDescriptor::new(INITIATION, Layer::Perceptual, &[TOPIC_ANALYSIS]),
            ObservationBinding::new(INITIATION, &[]),
            Box::new(InitiationAgent::new(&terrain, config.initiation)),
        )?;
    }
    let mut nowcast = config.nowcast;
    nowcast.sigma_infl = learned.sigma_infl;
    rt.register(
        AgentDescriptor::new(NOWCASTER, Layer::Operational, &[TOPIC_ANALYSIS]),
        ObservationBinding::new(NOWCASTER, &[StateKey::Initiation, StateKey::SpreadInflation]),
        Box::new(NowcastAgent::new(
            NowcastAgentConfig {
                params: nowcast,
                motion: config.motion,
                factor: config.coarse_factor,
                issue_every: config.forecast_every,
                ensemble: flags.ensemble,
                initiation: flags.initiation,
            },
            derive_seed(seed, NOWCASTER, 0),
        )),
    )?;
    rt.register(
        AgentDescriptor::new(DOWNSCALER, Layer::Operational, &[TOPIC_FORECAST_COARSE]),
        ObservationBinding::new(DOWNSCALER, &[StateKey::Calibration]),
        Box::new(DownscaleAgent::new(
            &terrain,
            DownscaleAgentConfig {
                params: config.downscale,
                downscaling: flags.downscaling,
                calibrate: flags.learning,
                threshold: config.alert_threshold,
                leads: config.probability_leads.clone(),
            },
        )),
    )?;
    rt.register(
        AgentDescriptor::new(HYDROLOGIST, Layer::Operational, &[TOPIC_ANALYSIS, TOPIC_FORECAST_FINE]),
        ObservationBinding::new(HYDROLOGIST, &[]),
        Box::new(HydrologyAgent::new(Arc::clone(&terrain), config.hydro, config.runtime.cadence, 0)),
    )?;
    rt.register(
        AgentDescriptor::new(TRIAGE, Layer::Operational, &[TOPIC_DEPTH]),
        ObservationBinding::new(
            TRIAGE,
            &[
                StateKey::Probability,
                StateKey::Alerts,
                StateKey::PStar,
                StateKey::Analysis,
                StateKey::Governance,
            ],
        ),
        Box::new(TriageAgent::new(
            Arc::clone(&community),
            TriageAgentConfig {
                params: config.triage,
                p_star: learned.p_star,
                delta: gov.band(false),
                degraded_delta: gov.band(true),
                max_lead: config.alert_max_lead,
                calibration_required: flags.learning,
                stale_limit: config.stale_limit,
            },
        )),
    )?;
    let channels = if flags.multi_channel { multi_channel() } else { single_channel() };
    rt.register(
        AgentDescriptor::new(COMMUNICATOR, Layer::Operational, &[TOPIC_ALERTS]),
        ObservationBinding::new(COMMUNICATOR, &[]),
        Box::new(CommsAgent::new(Arc::clone(&community), channels, derive_seed(seed, COMMUNICATOR, 0))),
    )?;
    rt.register(
        AgentDescriptor::new(ROUTER, Layer::Operational, &[TOPIC_DEPTH]),
        ObservationBinding::new(ROUTER, &[]),
        Box::new(RoutingAgent::new(Arc::clone(&community), config.routing, flags.dynamic_routes)),
    )?;
    if flags.learning {
        rt.register(
            AgentDescriptor::new(
                LEARNER,
                Layer::Strategic,
                &[TOPIC_ANALYSIS, TOPIC_FORECAST_FINE, TOPIC_PROBABILITY, TOPIC_OPERATOR, TOPIC_BOUNDARY],
            ),
            ObservationBinding::new(LEARNER, &[StateKey::Calibration, StateKey::PStar, StateKey::SpreadInflation]),
            Box::new(LearningAgent::new(
                Arc::clone(&community),
                LearningConfig {
                    policy: config.adaptation,
                    costs: config.costs,
                    threshold: config.alert_threshold,
                    leads: config.probability_leads.clone(),
                    outcome_window: config.alert_max_lead,
                    calibration_bins: config.calibration_bins,
                    p_star: learned.p_star,
                    sigma_infl: learned.sigma_infl,
                    wet: config.wet_threshold,
                },
            )),
        )?;
        rt.seed_state(StateKey::Calibration, StateValue::Calibration(Arc::new(learned.calibration.clone())));
        rt.seed_state(StateKey::PStar, StateValue::Scalar(learned.p_star));
        rt.seed_state(StateKey::SpreadInflation, StateValue::Scalar(learned.sigma_infl));
    }
    Ok(rt)
}
