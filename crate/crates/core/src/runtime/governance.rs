//! Governance filter over proposed alerts and the HITL queue.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Minutes;
use crate::response::triage::AlertDecision;

use super::message::OperatorDecision;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HitlDefault {
    Escalate,
    Suppress,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GovernancePolicy {
    /// Alerts per simulated hour per district.
    pub max_alert_rate: f64,
    pub delta: f64,
    /// Band multiplier applied when the decision is flagged degraded.
    pub degraded_band_factor: f64,
    pub hitl_timeout: Minutes,
    pub hitl_default: HitlDefault,
    /// Alerts allowed per step across all districts; districts below
    /// `fairness_min_per_hour` are exempt. `None` disables the rule.
    pub fairness_step_budget: Option<usize>,
    pub fairness_min_per_hour: usize,
}

impl Default for GovernancePolicy {
    fn default() -> Self {
        GovernancePolicy {
            max_alert_rate: 6.0,
            delta: 0.025,
            degraded_band_factor: 2.0,
            hitl_timeout: 5,
            hitl_default: HitlDefault::Escalate,
            fairness_step_budget: None,
            fairness_min_per_hour: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyInvalid {
    #[error("delta {0} outside [0, 0.5]")]
    Delta(f64),
    #[error("hitl_timeout must be positive")]
    Timeout,
    #[error("max_alert_rate must be positive")]
    Rate,
}

impl GovernancePolicy {
    pub fn validate(&self) -> Result<(), PolicyInvalid> {
        if !(0.0..=0.5).contains(&self.delta) {
            return Err(PolicyInvalid::Delta(self.delta));
        }
        if self.hitl_timeout == 0 {
            return Err(PolicyInvalid::Timeout);
        }
        if !(self.max_alert_rate > 0.0) {
            return Err(PolicyInvalid::Rate);
        }
        Ok(())
    }

    pub fn band(&self, degraded: bool) -> f64 {
        if degraded {
            (self.delta * self.degraded_band_factor).min(0.5)
        } else {
            self.delta
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VetoReason {
    RateCap,
    Fairness,
}

impl VetoReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            VetoReason::RateCap => "rate_cap",
            VetoReason::Fairness => "fairness",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", content = "reason", rename_all = "snake_case")]
pub enum GovernanceOutcome {
    Allow,
    Veto(VetoReason),
    RouteToHitl,
}

/// Issuance history used by the rate and fairness rules.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IssuanceLedger {
    issued: Vec<(u32, Minutes)>,
    step_start: Minutes,
    step_count: usize,
}

impl IssuanceLedger {
    pub fn issued_within_hour(&self, district: u32, now: Minutes) -> usize {
        self.issued
            .iter()
            .filter(|&&(d, t)| d == district && t + 60 > now && t <= now)
            .count()
    }

    pub fn record(&mut self, district: u32, now: Minutes) {
        if now != self.step_start {
            self.step_start = now;
            self.step_count = 0;
        }
        self.step_count += 1;
        self.issued.push((district, now));
    }

    fn step_count(&self, now: Minutes) -> usize {
        if now == self.step_start {
            self.step_count
        } else {
            0
        }
    }

    pub fn all(&self) -> &[(u32, Minutes)] {
        &self.issued
    }

    /// Largest number of alerts one district received in any 60-minute
    /// window.
    pub fn peak_hourly(&self) -> usize {
        self.issued
            .iter()
            .map(|&(d, t)| {
                self.issued
                    .iter()
                    .filter(|&&(d2, t2)| d2 == d && t2 >= t && t2 < t + 60)
                    .count()
            })
            .max()
            .unwrap_or(0)
    }
}

/// Low-confidence proposals go to HITL; others are checked against the
/// rate cap and then the fairness budget.
pub fn apply_governance(
    ledger: &IssuanceLedger,
    proposed: &AlertDecision,
    policy: &GovernancePolicy,
    now: Minutes,
) -> GovernanceOutcome {
    if (proposed.probability - proposed.p_star).abs() <= policy.band(proposed.degraded) {
        return GovernanceOutcome::RouteToHitl;
    }
    issue_check(ledger, proposed.district, policy, now)
}

/// The checks an alert must pass at the moment it is issued.
pub fn issue_check(ledger: &IssuanceLedger, district: u32, policy: &GovernancePolicy, now: Minutes) -> GovernanceOutcome {
    let recent = ledger.issued_within_hour(district, now);
    if recent as f64 + 1.0 > policy.max_alert_rate {
        return GovernanceOutcome::Veto(VetoReason::RateCap);
    }
    if let Some(budget) = policy.fairness_step_budget {
        if ledger.step_count(now) >= budget && recent >= policy.fairness_min_per_hour {
            return GovernanceOutcome::Veto(VetoReason::Fairness);
        }
    }
    GovernanceOutcome::Allow
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HitlStatus {
    Pending,
    Approved,
    Overridden,
    TimedOut,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitlItem {
    pub id: u64,
    pub alert: AlertDecision,
    pub created_at: Minutes,
    pub deadline: Minutes,
    pub status: HitlStatus,
    pub resolved_at: Option<Minutes>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HitlError {
    #[error("no HITL item {0}")]
    NotFound(u64),
    #[error("HITL item {id} is already {status:?}")]
    Conflict { id: u64, status: HitlStatus },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HitlQueue {
    items: BTreeMap<u64, HitlItem>,
    next: u64,
}

impl HitlQueue {
    pub fn push(&mut self, alert: AlertDecision, now: Minutes, timeout: Minutes) -> u64 {
        let id = self.next;
        self.next += 1;
        self.items.insert(
            id,
            HitlItem {
                id,
                alert,
                created_at: now,
                deadline: now + timeout,
                status: HitlStatus::Pending,
                resolved_at: None,
            },
        );
        id
    }

    pub fn get(&self, id: u64) -> Option<&HitlItem> {
        self.items.get(&id)
    }

    /// Items past their deadline can no longer be resolved by an operator.
    pub fn resolve(&mut self, id: u64, decision: OperatorDecision, now: Minutes) -> Result<&HitlItem, HitlError> {
        let item = self.items.get_mut(&id).ok_or(HitlError::NotFound(id))?;
        if item.status != HitlStatus::Pending {
            return Err(HitlError::Conflict { id, status: item.status });
        }
        if now >= item.deadline {
            return Err(HitlError::Conflict {
                id,
                status: HitlStatus::TimedOut,
            });
        }
        item.status = match decision {
            OperatorDecision::Approve => HitlStatus::Approved,
            OperatorDecision::Override => HitlStatus::Overridden,
        };
        item.resolved_at = Some(now);
        Ok(item)
    }

    /// Times out every pending item whose deadline has passed, in id order.
    pub fn expire(&mut self, now: Minutes) -> Vec<HitlItem> {
        let mut out = Vec::new();
        for item in self.items.values_mut() {
            if item.status == HitlStatus::Pending && item.deadline <= now {
                item.status = HitlStatus::TimedOut;
                item.resolved_at = Some(item.deadline);
                out.push(item.clone());
            }
        }
        out
    }

    pub fn pending(&self) -> Vec<&HitlItem> {
        self.items.values().filter(|i| i.status == HitlStatus::Pending).collect()
    }

    pub fn items(&self) -> impl Iterator<Item = &HitlItem> {
        self.items.values()
    }

    pub fn unresolved(&self) -> usize {
        self.pending().len()
    }
}
