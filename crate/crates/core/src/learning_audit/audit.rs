//! Append-only, hash-chained audit ledger.
//!
//! Serialized as newline-delimited JSON: the first line is the run header,
//! every following line one [`AuditRecord`]. Field order is fixed by the
//! struct layout, so identical runs produce byte-identical logs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::grid::Minutes;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditKind {
    ParamChange,
    GovernanceVeto,
    HitlDecision,
    AgentFailure,
    AlertIssued,
}

impl AuditKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            AuditKind::ParamChange => "param_change",
            AuditKind::GovernanceVeto => "governance_veto",
            AuditKind::HitlDecision => "hitl_decision",
            AuditKind::AgentFailure => "agent_failure",
            AuditKind::AlertIssued => "alert_issued",
        }
    }
}

/// A record before it is sequenced and chained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub t: Minutes,
    pub actor: String,
    pub kind: AuditKind,
    pub subject: String,
    pub old_value: Value,
    pub new_value: Value,
    pub evidence: Value,
    pub rationale: String,
}

impl AuditEntry {
    pub fn new(t: Minutes, actor: &str, kind: AuditKind, subject: impl Into<String>) -> Self {
        AuditEntry {
            t,
            actor: actor.to_string(),
            kind,
            subject: subject.into(),
            old_value: Value::Null,
            new_value: Value::Null,
            evidence: Value::Null,
            rationale: String::new(),
        }
    }

    pub fn values(mut self, old: Value, new: Value) -> Self {
        self.old_value = old;
        self.new_value = new;
        self
    }

    pub fn evidence(mut self, evidence: Value) -> Self {
        self.evidence = evidence;
        self
    }

    pub fn rationale(mut self, code: impl Into<String>) -> Self {
        self.rationale = code.into();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub seq: u64,
    pub t: Minutes,
    pub actor: String,
    pub kind: AuditKind,
    pub subject: String,
    pub old_value: Value,
    pub new_value: Value,
    pub evidence: Value,
    pub rationale: String,
    pub prev_hash: String,
    pub hash: String,
}

#[derive(Serialize)]
struct Chained<'a> {
    seq: u64,
    t: Minutes,
    actor: &'a str,
    kind: AuditKind,
    subject: &'a str,
    old_value: &'a Value,
    new_value: &'a Value,
    evidence: &'a Value,
    rationale: &'a str,
    prev_hash: &'a str,
}

impl AuditRecord {
    fn compute_hash(&self) -> String {
        let view = Chained {
            seq: self.seq,
            t: self.t,
            actor: &self.actor,
            kind: self.kind,
            subject: &self.subject,
            old_value: &self.old_value,
            new_value: &self.new_value,
            evidence: &self.evidence,
            rationale: &self.rationale,
            prev_hash: &self.prev_hash,
        };
        let bytes = serde_json::to_vec(&view).expect("audit record serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// First line of every audit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditHeader {
    pub run_id: String,
    pub mode: String,
    pub seed: u64,
    pub flags: BTreeMap<String, bool>,
    pub params: Value,
}

#[derive(Debug, Error, PartialEq)]
pub enum AuditError {
    #[error("record {seq}: sequence gap (expected {expected})")]
    SequenceGap { seq: u64, expected: u64 },
    #[error("record {seq}: chain broken")]
    ChainBroken { seq: u64 },
    #[error("record {seq}: content hash mismatch")]
    HashMismatch { seq: u64 },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditLog {
    header: AuditHeader,
    genesis: String,
    records: Vec<AuditRecord>,
}

impl AuditLog {
    pub fn new(header: AuditHeader) -> Self {
        let genesis = hex::encode(Sha256::digest(
            serde_json::to_vec(&header).expect("header serializes"),
        ));
        AuditLog {
            header,
            genesis,
            records: Vec::new(),
        }
    }

    pub fn header(&self) -> &AuditHeader {
        &self.header
    }

    pub fn records(&self) -> &[AuditRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn append(&mut self, entry: AuditEntry) -> &AuditRecord {
        let prev_hash = self
            .records
            .last()
            .map(|r| r.hash.clone())
            .unwrap_or_else(|| self.genesis.clone());
        let mut rec = AuditRecord {
            seq: self.records.len() as u64,
            t: entry.t,
            actor: entry.actor,
            kind: entry.kind,
            subject: entry.subject,
            old_value: entry.old_value,
            new_value: entry.new_value,
            evidence: entry.evidence,
            rationale: entry.rationale,
            prev_hash,
            hash: String::new(),
        };
        rec.hash = rec.compute_hash();
        self.records.push(rec);
        self.records.last().expect("just pushed")
    }

    /// Chained digest of the whole log (hash of the last record, or the
    /// genesis hash when empty).
    pub fn digest(&self) -> String {
        self.records
            .last()
            .map(|r| r.hash.clone())
            .unwrap_or_else(|| self.genesis.clone())
    }

    pub fn verify(&self) -> Result<(), AuditError> {
        let mut prev = self.genesis.clone();
        for (i, rec) in self.records.iter().enumerate() {
            if rec.seq != i as u64 {
                return Err(AuditError::SequenceGap {
                    seq: rec.seq,
                    expected: i as u64,
                });
            }
            if rec.prev_hash != prev {
                return Err(AuditError::ChainBroken { seq: rec.seq });
            }
            if rec.compute_hash() != rec.hash {
                return Err(AuditError::HashMismatch { seq: rec.seq });
            }
            prev = rec.hash.clone();
        }
        Ok(())
    }

    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        out.push_str(&serde_json::to_string(&self.header).expect("header serializes"));
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    /// Parses a log without re-verifying it; call [`AuditLog::verify`].
    pub fn from_ndjson(text: &str) -> Result<AuditLog, AuditError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or(AuditError::Parse {
            line: 1,
            message: "missing header".into(),
        })?;
        let header: AuditHeader = serde_json::from_str(first).map_err(|e| AuditError::Parse {
            line: 1,
            message: e.to_string(),
        })?;
        let mut log = AuditLog::new(header);
        for (i, line) in lines {
            let rec: AuditRecord = serde_json::from_str(line).map_err(|e| AuditError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            log.records.push(rec);
        }
        Ok(log)
    }

    /// Latest `new_value` recorded for `subject` strictly before `t`.
    pub fn latest_value_before(&self, subject: &str, t: Minutes) -> Option<&Value> {
        self.records
            .iter()
            .rev()
            .find(|r| r.kind == AuditKind::ParamChange && r.subject == subject && r.t < t)
            .map(|r| &r.new_value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn log_with(n: usize) -> AuditLog {
        let mut log = AuditLog::new(AuditHeader {
            run_id: "r".into(),
            mode: "mas".into(),
            seed: 1,
            flags: BTreeMap::new(),
            params: Value::Null,
        });
        for i in 0..n {
            log.append(
                AuditEntry::new(i as Minutes, "learning", AuditKind::ParamChange, "p_star")
                    .values(json!(0.1), json!(0.1 + i as f64 * 0.01)),
            );
        }
        log
    }

    #[test]
    fn chain_verifies_and_detects_tampering() {
        let mut log = log_with(4);
        assert!(log.verify().is_ok());
        log.records[2].new_value = json!(9.0);
        assert_eq!(log.verify(), Err(AuditError::HashMismatch { seq: 2 }));
    }

    #[test]
    fn ndjson_roundtrip_preserves_digest() {
        let log = log_with(3);
        let text = log.to_ndjson();
        let back = AuditLog::from_ndjson(&text).unwrap();
        assert_eq!(back.digest(), log.digest());
        assert!(back.verify().is_ok());
        assert_eq!(back.to_ndjson(), text);
    }

    #[test]
    fn removing_a_record_breaks_the_sequence() {
        let mut log = log_with(3);
        log.records.remove(1);
        assert!(matches!(log.verify(), Err(AuditError::SequenceGap { .. })));
    }

    #[test]
    fn latest_value_before_is_strict() {
        let log = log_with(3);
        assert_eq!(log.latest_value_before("p_star", 2), Some(&json!(0.11)));
        assert_eq!(log.latest_value_before("p_star", 0), None);
    }
}
