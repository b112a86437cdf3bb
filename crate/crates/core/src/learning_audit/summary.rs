//! Human-readable digest of an audit log.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::audit::{AuditKind, AuditLog};
use crate::grid::Minutes;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub t: Minutes,
    pub old: Value,
    pub new: Value,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitlSummary {
    pub t: Minutes,
    pub item: String,
    pub actor: String,
    pub decision: Value,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradedInterval {
    pub agent: String,
    pub start: Minutes,
    /// None when the agent had not recovered by the end of the window.
    pub end: Option<Minutes>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChangeSummary {
    pub window: Option<(Minutes, Minutes)>,
    pub records: usize,
    pub trajectories: BTreeMap<String, Vec<TrajectoryPoint>>,
    pub vetoes: BTreeMap<String, usize>,
    pub hitl: Vec<HitlSummary>,
    pub alerts_issued: usize,
    pub degraded: Vec<DegradedInterval>,
}

/// Collects the records with `t` in the inclusive `window` (all records when
/// `None`).
pub fn summarize_audit(log: &AuditLog, window: Option<(Minutes, Minutes)>) -> ChangeSummary {
    let mut s = ChangeSummary {
        window,
        ..ChangeSummary::default()
    };
    let mut open: BTreeMap<String, Minutes> = BTreeMap::new();
    for r in log.records() {
        if let Some((a, b)) = window {
            if r.t < a || r.t > b {
                continue;
            }
        }
        s.records += 1;
        match r.kind {
            AuditKind::ParamChange => s.trajectories.entry(r.subject.clone()).or_default().push(TrajectoryPoint {
                t: r.t,
                old: r.old_value.clone(),
                new: r.new_value.clone(),
                rationale: r.rationale.clone(),
            }),
            AuditKind::GovernanceVeto => *s.vetoes.entry(r.rationale.clone()).or_default() += 1,
            AuditKind::HitlDecision => s.hitl.push(HitlSummary {
                t: r.t,
                item: r.subject.clone(),
                actor: r.actor.clone(),
                decision: r.new_value.clone(),
                rationale: r.rationale.clone(),
            }),
            AuditKind::AlertIssued => s.alerts_issued += 1,
            AuditKind::AgentFailure => {
                let degraded = r.new_value.get("degraded").and_then(Value::as_bool).unwrap_or(true);
                if degraded {
                    open.entry(r.subject.clone()).or_insert(r.t);
                } else if let Some(start) = open.remove(&r.subject) {
                    s.degraded.push(DegradedInterval {
                        agent: r.subject.clone(),
                        start,
                        end: Some(r.t),
                    });
                }
            }
        }
    }
    for (agent, start) in open {
        s.degraded.push(DegradedInterval { agent, start, end: None });
    }
    s.degraded.sort_by(|a, b| (a.start, &a.agent).cmp(&(b.start, &b.agent)));
    s
}

impl ChangeSummary {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        match self.window {
            Some((a, b)) => writeln!(out, "audit summary, t in [{a}, {b}]").unwrap(),
            None => writeln!(out, "audit summary").unwrap(),
        }
        writeln!(out, "records: {}", self.records).unwrap();
        writeln!(out, "alerts issued: {}", self.alerts_issued).unwrap();
        writeln!(out, "parameter trajectories: {}", self.trajectories.len()).unwrap();
        for (subject, points) in &self.trajectories {
            writeln!(out, "  {subject}:").unwrap();
            for p in points {
                writeln!(out, "    t={} {} -> {} ({})", p.t, p.old, p.new, p.rationale).unwrap();
            }
        }
        let total: usize = self.vetoes.values().sum();
        writeln!(out, "vetoes: {total}").unwrap();
        for (reason, n) in &self.vetoes {
            writeln!(out, "  {reason}: {n}").unwrap();
        }
        writeln!(out, "hitl decisions: {}", self.hitl.len()).unwrap();
        for h in &self.hitl {
            writeln!(out, "  t={} {} by {}: {} ({})", h.t, h.item, h.actor, h.decision, h.rationale).unwrap();
        }
        writeln!(out, "degraded intervals: {}", self.degraded.len()).unwrap();
        for d in &self.degraded {
            match d.end {
                Some(end) => writeln!(out, "  {} [{}, {}]", d.agent, d.start, end).unwrap(),
                None => writeln!(out, "  {} [{}, end of run]", d.agent, d.start).unwrap(),
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learning_audit::audit::{AuditEntry, AuditHeader};
    use serde_json::json;

    fn log() -> AuditLog {
        AuditLog::new(AuditHeader {
            run_id: "r".into(),
            mode: "mas".into(),
            seed: 1,
            flags: BTreeMap::new(),
            params: json!({}),
        })
    }

    #[test]
    fn empty_log_gives_zero_counts() {
        let s = summarize_audit(&log(), None);
        assert_eq!(s.records, 0);
        assert!(s.trajectories.is_empty() && s.vetoes.is_empty() && s.hitl.is_empty());
    }

    #[test]
    fn one_param_change_one_trajectory() {
        let mut l = log();
        l.append(AuditEntry::new(60, "learning", AuditKind::ParamChange, "p_star").values(json!(0.1), json!(0.12)));
        let s = summarize_audit(&l, None);
        assert_eq!(s.trajectories.len(), 1);
        assert_eq!(s.trajectories["p_star"].len(), 1);
    }

    #[test]
    fn text_is_deterministic_and_intervals_pair_up() {
        let mut l = log();
        l.append(AuditEntry::new(10, "runtime", AuditKind::AgentFailure, "routing").values(json!({"degraded": false}), json!({"degraded": true})));
        l.append(AuditEntry::new(40, "runtime", AuditKind::AgentFailure, "routing").values(json!({"degraded": true}), json!({"degraded": false})));
        l.append(AuditEntry::new(45, "governance", AuditKind::GovernanceVeto, "d3").rationale("rate_cap"));
        let a = summarize_audit(&l, None).to_text();
        let b = summarize_audit(&l, None).to_text();
        assert_eq!(a, b);
        let s = summarize_audit(&l, None);
        assert_eq!(s.degraded, vec![DegradedInterval { agent: "routing".into(), start: 10, end: Some(40) }]);
        assert_eq!(s.vetoes["rate_cap"], 1);
        assert_eq!(summarize_audit(&l, Some((0, 20))).records, 1);
    }
}
