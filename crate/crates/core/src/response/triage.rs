//! Cost-loss alert triage per district.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Minutes;
use crate::prediction::probability::ProbabilityGrid;
use crate::world::Community;

use super::hydrology::DepthGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Watch,
    Warning,
    Evacuate,
}

impl Tier {
    pub fn as_str(&self) -> &'static str {
        match self {
            Tier::Watch => "watch",
            Tier::Warning => "warning",
            Tier::Evacuate => "evacuate",
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CostError {
    #[error("losses must be positive (miss {l_miss}, false {l_false})")]
    NonPositive { l_miss: f64, l_false: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostModel {
    pub l_miss: f64,
    pub l_false: f64,
    /// Loss multipliers for watch, warning and evacuate.
    pub tier_multipliers: [f64; 3],
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            l_miss: 9.0,
            l_false: 1.0,
            tier_multipliers: [0.25, 1.0, 2.0],
        }
    }
}

impl CostModel {
    pub fn new(l_miss: f64, l_false: f64) -> Result<Self, CostError> {
        let c = CostModel {
            l_miss,
            l_false,
            ..CostModel::default()
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), CostError> {
        if !(self.l_miss > 0.0 && self.l_false > 0.0) {
            return Err(CostError::NonPositive {
                l_miss: self.l_miss,
                l_false: self.l_false,
            });
        }
        Ok(())
    }

    /// Expected-loss minimizing probability threshold.
    pub fn p_star(&self) -> f64 {
        self.l_false / (self.l_false + self.l_miss)
    }

    /// Expected loss of alerting (or not) when the event probability is `p`.
    pub fn expected_loss(&self, p: f64, alert: bool) -> f64 {
        if alert {
            (1.0 - p) * self.l_false
        } else {
            p * self.l_miss
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Max,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TriageParams {
    /// District forecast depth that upgrades a warning to evacuate, metres.
    pub depth_evac: f64,
    /// Alert lifetime, minutes.
    pub expiry: Minutes,
    pub aggregation: Aggregation,
}

impl Default for TriageParams {
    fn default() -> Self {
        TriageParams {
            depth_evac: 0.3,
            expiry: 30,
            aggregation: Aggregation::Max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertDecision {
    pub district: u32,
    pub tier: Tier,
    pub probability: f64,
    pub p_star: f64,
    pub low_confidence: bool,
    /// Inputs were stale or a required calibration was missing.
    pub degraded: bool,
    pub issued_at: Minutes,
    pub expiry: Minutes,
    /// Forecast lead the probability refers to.
    pub lead: Minutes,
    pub zones: Vec<u32>,
}

impl AlertDecision {
    pub fn id(&self) -> String {
        format!("d{}-t{}-{}", self.district, self.issued_at, self.tier.as_str())
    }
}

/// Per-call inputs that vary over a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriageContext {
    pub p_star: f64,
    /// Confidence band half-width for normal and degraded inputs.
    pub delta: f64,
    pub degraded_delta: f64,
    pub now: Minutes,
    /// Calibration is expected for this configuration.
    pub calibration_required: bool,
    /// Upstream analysis is stale.
    pub stale_inputs: bool,
}

pub fn tier_for(p: f64, p_star: f64, depth: f64, params: &TriageParams) -> Option<Tier> {
    if p >= p_star {
        if depth >= params.depth_evac {
            Some(Tier::Evacuate)
        } else {
            Some(Tier::Warning)
        }
    } else if p >= p_star / 2.0 {
        Some(Tier::Watch)
    } else {
        None
    }
}

pub fn district_probability(prob: &ProbabilityGrid, cells: &[usize], aggregation: Aggregation) -> f64 {
    if cells.is_empty() {
        return 0.0;
    }
    match aggregation {
        Aggregation::Max => cells.iter().map(|&c| prob.p.data[c]).fold(0.0, f64::max),
        Aggregation::Mean => cells.iter().map(|&c| prob.p.data[c]).sum::<f64>() / cells.len() as f64,
    }
}

/// One decision per district at or above watch, in district order.
pub fn triage(
    prob: &ProbabilityGrid,
    depth: Option<&DepthGrid>,
    community: &Community,
    ctx: &TriageContext,
    params: &TriageParams,
) -> Vec<AlertDecision> {
    let degraded = ctx.stale_inputs || (ctx.calibration_required && !prob.calibrated);
    let delta = if degraded { ctx.degraded_delta } else { ctx.delta };
    let mut out = Vec::new();
    for d in &community.districts {
        let p = district_probability(prob, &d.cells, params.aggregation).clamp(0.0, 1.0);
        let dmax = depth
            .map(|g| d.cells.iter().map(|&c| g.depth.data[c]).fold(0.0, f64::max))
            .unwrap_or(0.0);
        let Some(tier) = tier_for(p, ctx.p_star, dmax, params) else {
            continue;
        };
        let zones = community
            .zones
            .iter()
            .filter(|z| z.district == d.id)
            .map(|z| z.id)
            .collect();
        out.push(AlertDecision {
            district: d.id,
            tier,
            probability: p,
            p_star: ctx.p_star,
            low_confidence: (p - ctx.p_star).abs() <= delta,
            degraded,
            issued_at: ctx.now,
            expiry: ctx.now + params.expiry,
            lead: prob.lead,
            zones,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_costs_give_one_tenth() {
        let c = CostModel::new(9.0, 1.0).unwrap();
        assert!((c.p_star() - 0.1).abs() < 1e-15);
        assert!(CostModel::new(0.0, 1.0).is_err());
    }

    #[test]
    fn tier_rules() {
        let p = TriageParams::default();
        assert_eq!(tier_for(0.2, 0.1, 0.0, &p), Some(Tier::Warning));
        assert_eq!(tier_for(0.05, 0.1, 0.0, &p), Some(Tier::Watch));
        assert_eq!(tier_for(0.95, 0.1, 0.0, &p), Some(Tier::Warning));
        assert_eq!(tier_for(0.95, 0.1, 0.5, &p), Some(Tier::Evacuate));
        assert_eq!(tier_for(0.01, 0.1, 0.5, &p), None);
    }

    #[test]
    fn raising_probability_never_lowers_tier() {
        let params = TriageParams::default();
        for depth in [0.0, 0.5] {
            let mut last = None;
            for i in 0..=100 {
                let t = tier_for(i as f64 / 100.0, 0.1, depth, &params);
                assert!(t >= last);
                last = t;
            }
        }
    }
}
