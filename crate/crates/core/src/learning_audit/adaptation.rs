//! Between-event adaptation of the alert threshold and ensemble spread.

use serde::{Deserialize, Serialize};

use crate::response::triage::CostModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptationPolicy {
    /// Calibration learning rate.
    pub eta: f64,
    /// Distance p* moves per update.
    pub threshold_eta: f64,
    /// Probe offset used to compare realized costs around p*.
    pub probe: f64,
    pub p_min: f64,
    pub p_max: f64,
    /// Relative step for spread inflation updates.
    pub spread_eta: f64,
    pub spread_min: f64,
    pub spread_max: f64,
}

impl Default for AdaptationPolicy {
    fn default() -> Self {
        AdaptationPolicy {
            eta: 0.1,
            threshold_eta: 0.02,
            probe: 0.05,
            p_min: 0.05,
            p_max: 0.5,
            spread_eta: 0.5,
            spread_min: 0.25,
            spread_max: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdRationale {
    CostDecreasesUp,
    CostDecreasesDown,
    AtOptimum,
    InsufficientEvidence,
}

impl ThresholdRationale {
    pub fn code(&self) -> &'static str {
        match self {
            ThresholdRationale::CostDecreasesUp => "cost decreases upward",
            ThresholdRationale::CostDecreasesDown => "cost decreases downward",
            ThresholdRationale::AtOptimum => "local cost minimum",
            ThresholdRationale::InsufficientEvidence => "insufficient evidence",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdUpdate {
    pub old: f64,
    pub new: f64,
    pub rationale: ThresholdRationale,
    /// Realized cost at (p* − probe, p*, p* + probe).
    pub costs: Option<(f64, f64, f64)>,
    pub positives: usize,
    pub negatives: usize,
}

/// Realized cost of alerting iff `p ≥ q` over recorded decisions.
pub fn realized_cost(records: &[(f64, bool)], q: f64, costs: &CostModel) -> f64 {
    records
        .iter()
        .map(|&(p, o)| match (p >= q, o) {
            (true, false) => costs.l_false,
            (false, true) => costs.l_miss,
            _ => 0.0,
        })
        .sum()
}

/// Moves p* by `threshold_eta` toward lower realized cost, clamped to the
/// policy bounds.
pub fn adapt_threshold(
    p_star: f64,
    records: &[(f64, bool)],
    costs: &CostModel,
    policy: &AdaptationPolicy,
) -> ThresholdUpdate {
    let positives = records.iter().filter(|r| r.1).count();
    let negatives = records.len() - positives;
    if positives == 0 || negatives == 0 {
        return ThresholdUpdate {
            old: p_star,
            new: p_star,
            rationale: ThresholdRationale::InsufficientEvidence,
            costs: None,
            positives,
            negatives,
        };
    }
    let down = realized_cost(records, p_star - policy.probe, costs);
    let here = realized_cost(records, p_star, costs);
    let up = realized_cost(records, p_star + policy.probe, costs);
    let (target, rationale) = if down < here && down <= up {
        (p_star - policy.threshold_eta, ThresholdRationale::CostDecreasesDown)
    } else if up < here {
        (p_star + policy.threshold_eta, ThresholdRationale::CostDecreasesUp)
    } else {
        (p_star, ThresholdRationale::AtOptimum)
    };
    ThresholdUpdate {
        old: p_star,
        new: target.clamp(policy.p_min, policy.p_max),
        rationale,
        costs: Some((down, here, up)),
        positives,
        negatives,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpreadUpdate {
    pub old: f64,
    pub new: f64,
    /// Ensemble spread divided by ensemble-mean error.
    pub ratio: Option<f64>,
}

/// Nudges the spread inflation so the spread/error ratio approaches one.
pub fn adapt_spread(sigma: f64, spread: f64, error: f64, policy: &AdaptationPolicy) -> SpreadUpdate {
    if !(error > 0.0) || !(spread >= 0.0) {
        return SpreadUpdate {
            old: sigma,
            new: sigma,
            ratio: None,
        };
    }
    let ratio = spread / error;
    let factor = (1.0 / ratio.max(1e-3)).powf(policy.spread_eta).clamp(0.5, 2.0);
    SpreadUpdate {
        old: sigma,
        new: (sigma * factor).clamp(policy.spread_min, policy.spread_max),
        ratio: Some(ratio),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn costs() -> CostModel {
        CostModel::default()
    }

    #[test]
    fn false_alarms_raise_threshold() {
        let records = [(0.12, false), (0.14, false), (0.13, false), (0.01, true)];
        let u = adapt_threshold(0.1, &records, &costs(), &AdaptationPolicy::default());
        assert!(u.new > 0.1, "{u:?}");
    }

    #[test]
    fn misses_lower_threshold() {
        let records = [(0.08, true), (0.09, true), (0.07, true), (0.9, false)];
        let u = adapt_threshold(0.1, &records, &costs(), &AdaptationPolicy::default());
        assert!(u.new < 0.1, "{u:?}");
    }

    #[test]
    fn upper_bound_clamps() {
        let p = AdaptationPolicy::default();
        let records = [(0.52, false), (0.53, false), (0.01, true)];
        let u = adapt_threshold(p.p_max, &records, &costs(), &p);
        assert_eq!(u.new, p.p_max);
    }

    #[test]
    fn one_sided_evidence_is_insufficient() {
        let u = adapt_threshold(0.1, &[(0.3, false), (0.5, false)], &costs(), &AdaptationPolicy::default());
        assert_eq!(u.new, 0.1);
        assert_eq!(u.rationale, ThresholdRationale::InsufficientEvidence);
        assert_eq!(u.rationale.code(), "insufficient evidence");
    }

    #[test]
    fn underdispersed_ensembles_widen() {
        let u = adapt_spread(0.5, 1.0, 2.0, &AdaptationPolicy::default());
        assert!(u.new > 0.5);
        let u = adapt_spread(1.0, 3.0, 1.0, &AdaptationPolicy::default());
        assert!(u.new < 1.0);
    }
}
