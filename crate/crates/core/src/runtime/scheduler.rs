//! The virtual-time event loop.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::grid::Minutes;
use crate::learning_audit::audit::{AuditEntry, AuditHeader, AuditKind, AuditLog};
use crate::response::triage::AlertDecision;

use super::agent::{Action, Actions, AgentDescriptor, Observation, ObservationBinding, Policy, Tap};
use super::blob::BlobStore;
use super::bus::{Bus, BusError};
use super::fault::{FaultHandle, FaultSpec};
use super::governance::{
    apply_governance, issue_check, GovernanceOutcome, GovernancePolicy, HitlDefault, HitlError, HitlItem, HitlQueue,
    HitlStatus, IssuanceLedger,
};
use super::message::{DeliveryReceipt, Message, OperatorDecision, Payload, TOPICS, TOPIC_ALERTS, TOPIC_OPERATOR};
use super::state::{SharedState, StateKey, StateValue};
use super::trace::{AlertPublication, DeliveryRecord, RunTrace, StreamEvent};

pub const SENDER_SENSING: &str = "sensing";
pub const SENDER_GOVERNANCE: &str = "governance";
pub const SENDER_OPERATOR: &str = "operator";
pub const SENDER_RUNNER: &str = "runner";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RuntimeConfig {
    pub cadence: Minutes,
    pub governance: GovernancePolicy,
    /// How long unpinned grid blobs are kept.
    pub blob_window: Minutes,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        RuntimeConfig {
            cadence: 5,
            governance: GovernancePolicy::default(),
            blob_window: 15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RuntimeError {
    #[error("step of {got} min does not match the cadence of {expected} min")]
    Cadence { expected: Minutes, got: Minutes },
    #[error("agent {0:?} is already registered")]
    DuplicateAgent(String),
    #[error("agent {agent:?} subscribes to undeclared topic {topic:?}")]
    UnknownSubscription { agent: String, topic: String },
    #[error("binding names agent {binding:?}, descriptor is {agent:?}")]
    BindingMismatch { agent: String, binding: String },
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error(transparent)]
    Hitl(#[from] HitlError),
    #[error("invalid governance policy: {0}")]
    Policy(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperatorRecord {
    pub t: Minutes,
    pub item: u64,
    pub decision: OperatorDecision,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepReport {
    pub clock: Minutes,
    pub delivered: usize,
    pub version_before: u64,
    pub version_after: u64,
}

struct Registered {
    desc: AgentDescriptor,
    keys: Arc<BTreeSet<StateKey>>,
    policy: Box<dyn Policy>,
}

pub struct Runtime {
    config: RuntimeConfig,
    state: SharedState,
    bus: Bus,
    agents: Vec<Registered>,
    subscribers: BTreeMap<String, Vec<usize>>,
    audit: AuditLog,
    ledger: IssuanceLedger,
    hitl: HitlQueue,
    blobs: BlobStore,
    taps: Vec<Box<dyn Tap>>,
    trace: RunTrace,
    operator_timeline: Vec<OperatorRecord>,
    dropped_out: BTreeSet<String>,
}

impl Runtime {
    pub fn new(config: RuntimeConfig, seed: u64, header: AuditHeader) -> Result<Self, RuntimeError> {
        config
            .governance
            .validate()
            .map_err(|e| RuntimeError::Policy(e.to_string()))?;
        let mut bus = Bus::new(TOPICS, seed);
        for s in [SENDER_SENSING, SENDER_GOVERNANCE, SENDER_OPERATOR, SENDER_RUNNER] {
            bus.register_sender(s);
        }
        Ok(Runtime {
            config,
            state: SharedState::new(),
            bus,
            agents: Vec::new(),
            subscribers: BTreeMap::new(),
            audit: AuditLog::new(header),
            ledger: IssuanceLedger::default(),
            hitl: HitlQueue::default(),
            blobs: BlobStore::new(),
            taps: Vec::new(),
            trace: RunTrace::default(),
            operator_timeline: Vec::new(),
            dropped_out: BTreeSet::new(),
        })
    }

    /// Subscribers of a topic are served in layer order, then registration
    /// order.
    pub fn register(
        &mut self,
        desc: AgentDescriptor,
        binding: ObservationBinding,
        policy: Box<dyn Policy>,
    ) -> Result<(), RuntimeError> {
        if self.agents.iter().any(|a| a.desc.id == desc.id) || self.bus.has_sender(&desc.id) {
            return Err(RuntimeError::DuplicateAgent(desc.id));
        }
        if binding.agent != desc.id {
            return Err(RuntimeError::BindingMismatch {
                agent: desc.id,
                binding: binding.agent,
            });
        }
        for t in &desc.subscriptions {
            if !self.bus.has_topic(t) {
                return Err(RuntimeError::UnknownSubscription {
                    agent: desc.id.clone(),
                    topic: t.clone(),
                });
            }
        }
        self.bus.register_sender(&desc.id);
        let idx = self.agents.len();
        for t in &desc.subscriptions {
            self.subscribers.entry(t.clone()).or_default().push(idx);
        }
        self.agents.push(Registered {
            desc,
            keys: Arc::new(binding.keys),
            policy,
        });
        let agents = &self.agents;
        for subs in self.subscribers.values_mut() {
            subs.sort_by_key(|&i| (agents[i].desc.layer, i));
        }
        Ok(())
    }

    pub fn add_tap(&mut self, tap: Box<dyn Tap>) {
        self.taps.push(tap);
    }

    pub fn clock(&self) -> Minutes {
        self.state.clock()
    }

    pub fn state(&self) -> &SharedState {
        &self.state
    }

    /// Writes an initial value outside any agent (run setup).
    pub fn seed_state(&mut self, key: StateKey, value: StateValue) {
        self.state.write(key, value, SENDER_RUNNER);
    }

    pub fn audit(&self) -> &AuditLog {
        &self.audit
    }

    pub fn trace(&self) -> &RunTrace {
        &self.trace
    }

    pub fn hitl(&self) -> &HitlQueue {
        &self.hitl
    }

    pub fn blobs(&self) -> &BlobStore {
        &self.blobs
    }

    pub fn ledger(&self) -> &IssuanceLedger {
        &self.ledger
    }

    pub fn governance(&self) -> &GovernancePolicy {
        &self.config.governance
    }

    pub fn operator_timeline(&self) -> &[OperatorRecord] {
        &self.operator_timeline
    }

    pub fn agent_ids(&self) -> Vec<&str> {
        self.agents.iter().map(|a| a.desc.id.as_str()).collect()
    }

    pub fn pending_messages(&self) -> usize {
        self.bus.pending()
    }

    pub fn degraded(&self) -> bool {
        self.trace.degraded_any()
    }

    /// Publishes on behalf of a built-in sender at the current clock.
    pub fn publish_external(
        &mut self,
        topic: &str,
        sender: &str,
        payload: Payload,
        ingested_at: Minutes,
    ) -> Result<DeliveryReceipt, RuntimeError> {
        let msg = Message::new(topic, sender, payload, self.clock(), ingested_at);
        Ok(self.bus.publish(msg)?)
    }

    pub fn inject_fault(&mut self, spec: FaultSpec) -> Result<FaultHandle, RuntimeError> {
        Ok(self.bus.inject_fault(spec, self.clock())?)
    }

    pub fn cancel_fault(&mut self, handle: FaultHandle) -> Result<FaultSpec, RuntimeError> {
        Ok(self.bus.cancel_fault(handle)?)
    }

    /// Resolves a pending HITL item now; the resulting alert (if approved)
    /// is issued when the operator message is delivered.
    pub fn submit_operator_decision(&mut self, item: u64, decision: OperatorDecision) -> Result<HitlItem, RuntimeError> {
        let now = self.clock();
        let resolved = self.hitl.resolve(item, decision, now)?.clone();
        self.audit.append(
            AuditEntry::new(now, SENDER_OPERATOR, AuditKind::HitlDecision, format!("hitl/{item}"))
                .values(json!("pending"), json!(resolved.status))
                .evidence(json!({"district": resolved.alert.district, "probability": resolved.alert.probability}))
                .rationale(match decision {
                    OperatorDecision::Approve => "operator_approve",
                    OperatorDecision::Override => "operator_override",
                }),
        );
        self.operator_timeline.push(OperatorRecord { t: now, item, decision });
        self.trace.stream.push(StreamEvent::HitlResolved { item: resolved.clone() });
        self.publish_external(
            TOPIC_OPERATOR,
            SENDER_OPERATOR,
            Payload::Operator {
                item,
                decision,
                district: resolved.alert.district,
            },
            now,
        )?;
        Ok(resolved)
    }

    pub fn step(&mut self, world_tick: Minutes) -> Result<StepReport, RuntimeError> {
        if world_tick != self.config.cadence {
            return Err(RuntimeError::Cadence {
                expected: self.config.cadence,
                got: world_tick,
            });
        }
        let version_before = self.state.version();
        let end = self.clock() + world_tick;
        self.state.advance_clock(end).expect("clock moves forward");
        self.update_dropouts(end - world_tick, end);

        let mut delivered = 0;
        while let Some(msg) = self.bus.next_due(end) {
            self.expire_hitl(msg.deliver_at)?;
            delivered += 1;
            self.trace.deliveries.push(DeliveryRecord {
                topic: msg.topic.clone(),
                sender: msg.sender.clone(),
                seq: msg.seq,
                issued_at: msg.issued_at,
                deliver_at: msg.deliver_at,
            });
            for tap in &mut self.taps {
                tap.on_deliver(&msg);
            }
            if msg.topic == TOPIC_OPERATOR {
                self.handle_operator(&msg)?;
            }
            // Agents act at the message's delivery time, not the step end.
            let subs = self.subscribers.get(&msg.topic).cloned().unwrap_or_default();
            for idx in subs {
                self.dispatch(idx, &msg, msg.deliver_at);
            }
        }

        self.expire_hitl(end)?;
        self.pin_and_retain(end);
        let active = match self.state.get(StateKey::Alerts).map(|v| &v.value) {
            Some(StateValue::Alerts(a)) => a.iter().filter(|x| x.expiry > end).count(),
            _ => 0,
        };
        self.trace.stream.push(StreamEvent::Tick {
            t: end,
            version: self.state.version(),
            pending_hitl: self.hitl.unresolved(),
            active_alerts: active,
            degraded: self.trace.degraded_any(),
        });
        Ok(StepReport {
            clock: end,
            delivered,
            version_before,
            version_after: self.state.version(),
        })
    }

    fn dispatch(&mut self, idx: usize, msg: &Message, now: Minutes) {
        let id = self.agents[idx].desc.id.clone();
        if self.bus.silenced(&id, msg.deliver_at) {
            return;
        }
        let obs = Observation::new(self.state.snapshot(), Arc::clone(&self.agents[idx].keys));
        let mut actions = Actions::default();
        let result = self.agents[idx].policy.act(&obs, msg, &mut actions);
        let result = match result {
            Ok(()) => self.apply_actions(&id, actions, msg.ingested_at, now),
            Err(e) => Err(e.to_string()),
        };
        match result {
            Ok(()) => {
                if !self.dropped_out.contains(&id) && self.trace.close_degraded(&id, now) {
                    self.audit.append(
                        AuditEntry::new(now, "runtime", AuditKind::AgentFailure, id.clone())
                            .values(json!({"degraded": true}), json!({"degraded": false}))
                            .rationale("recovered"),
                    );
                    self.write_flags();
                }
            }
            Err(e) => {
                self.audit.append(
                    AuditEntry::new(now, "runtime", AuditKind::AgentFailure, id.clone())
                        .values(json!({"degraded": false}), json!({"degraded": true}))
                        .evidence(json!({"error": e, "topic": msg.topic}))
                        .rationale("policy_failure"),
                );
                if self.trace.open_degraded(&id, "policy_failure", now) {
                    self.write_flags();
                }
            }
        }
    }

    fn apply_actions(&mut self, agent: &str, actions: Actions, ingested_at: Minutes, now: Minutes) -> Result<(), String> {
        for action in actions.items {
            match action {
                Action::Write(key, value) => {
                    self.state.write(key, value, agent);
                }
                Action::Publish { topic, payload } => {
                    let msg = Message::new(&topic, agent, payload, now, ingested_at);
                    self.bus.publish(msg).map_err(|e| e.to_string())?;
                }
                Action::ProposeAlert(alert) => self.govern(agent, alert, ingested_at, now),
                Action::Audit(entry) => {
                    self.audit.append(entry);
                }
            }
        }
        Ok(())
    }

    fn govern(&mut self, agent: &str, alert: AlertDecision, ingested_at: Minutes, now: Minutes) {
        let policy = self.config.governance;
        match apply_governance(&self.ledger, &alert, &policy, now) {
            GovernanceOutcome::Allow => self.issue(agent, alert, ingested_at, now),
            GovernanceOutcome::Veto(reason) => {
                self.audit.append(
                    AuditEntry::new(now, SENDER_GOVERNANCE, AuditKind::GovernanceVeto, format!("district/{}", alert.district))
                        .values(json!(null), json!(alert.tier))
                        .evidence(json!({"probability": alert.probability, "p_star": alert.p_star, "proposer": agent}))
                        .rationale(reason.as_str()),
                );
            }
            GovernanceOutcome::RouteToHitl => {
                let id = self.hitl.push(alert.clone(), now, policy.hitl_timeout);
                let item = self.hitl.get(id).expect("just pushed").clone();
                self.audit.append(
                    AuditEntry::new(now, SENDER_GOVERNANCE, AuditKind::HitlDecision, format!("hitl/{id}"))
                        .values(json!(null), json!("pending"))
                        .evidence(json!({
                            "district": alert.district,
                            "probability": alert.probability,
                            "p_star": alert.p_star,
                            "ingested_at": ingested_at,
                            "proposer": agent,
                        }))
                        .rationale("route_to_hitl"),
                );
                self.trace.stream.push(StreamEvent::HitlCreated { item });
            }
        }
    }

    /// Final rate check, then publication on the alerts topic.
    fn issue(&mut self, issuer: &str, mut alert: AlertDecision, ingested_at: Minutes, now: Minutes) {
        if let GovernanceOutcome::Veto(reason) = issue_check(&self.ledger, alert.district, &self.config.governance, now) {
            self.audit.append(
                AuditEntry::new(now, SENDER_GOVERNANCE, AuditKind::GovernanceVeto, format!("district/{}", alert.district))
                    .values(json!(null), json!(alert.tier))
                    .evidence(json!({"probability": alert.probability, "p_star": alert.p_star, "proposer": issuer}))
                    .rationale(reason.as_str()),
            );
            return;
        }
        let lifetime = alert.expiry.saturating_sub(alert.issued_at);
        alert.issued_at = now;
        alert.expiry = now + lifetime;
        self.ledger.record(alert.district, now);
        let mut active: Vec<AlertDecision> = match self.state.get(StateKey::Alerts).map(|v| &v.value) {
            Some(StateValue::Alerts(a)) => a.iter().filter(|x| x.expiry > now && x.district != alert.district).cloned().collect(),
            _ => Vec::new(),
        };
        active.push(alert.clone());
        active.sort_by_key(|a| a.district);
        self.state.write(StateKey::Alerts, StateValue::Alerts(Arc::new(active)), issuer);
        self.audit.append(
            AuditEntry::new(now, issuer, AuditKind::AlertIssued, format!("district/{}", alert.district))
                .values(json!(null), json!(alert.tier))
                .evidence(json!({
                    "probability": alert.probability,
                    "p_star": alert.p_star,
                    "low_confidence": alert.low_confidence,
                    "ingested_at": ingested_at,
                }))
                .rationale(alert.id()),
        );
        self.trace.alerts.push(AlertPublication {
            alert: alert.clone(),
            published_at: now,
            ingested_at,
            issuer: issuer.to_string(),
        });
        self.trace.stream.push(StreamEvent::Alert {
            alert: alert.clone(),
            published_at: now,
        });
        let sender = if self.bus.has_sender(issuer) { issuer } else { SENDER_GOVERNANCE };
        let msg = Message::new(TOPIC_ALERTS, sender, Payload::Alert(Arc::new(alert)), now, ingested_at);
        self.bus.publish(msg).expect("alerts topic and sender are registered");
    }

    fn handle_operator(&mut self, msg: &Message) -> Result<(), RuntimeError> {
        let Payload::Operator { item, decision, .. } = &msg.observation else {
            return Ok(());
        };
        let now = msg.deliver_at;
        if *decision == OperatorDecision::Approve {
            if let Some(it) = self.hitl.get(*item).cloned() {
                let ingested = self.item_ingestion(&it);
                self.issue(SENDER_OPERATOR, it.alert, ingested, now);
            }
        }
        Ok(())
    }

    fn item_ingestion(&self, item: &HitlItem) -> Minutes {
        self.audit
            .records()
            .iter()
            .rev()
            .find(|r| r.subject == format!("hitl/{}", item.id) && r.rationale == "route_to_hitl")
            .and_then(|r| r.evidence.get("ingested_at"))
            .and_then(|v| v.as_u64())
            .map(|v| v as Minutes)
            .unwrap_or(item.created_at)
    }

    fn expire_hitl(&mut self, now: Minutes) -> Result<(), RuntimeError> {
        for item in self.hitl.expire(now) {
            // The default takes effect at the deadline itself.
            let at = item.deadline;
            let default = self.config.governance.hitl_default;
            self.audit.append(
                AuditEntry::new(at, SENDER_GOVERNANCE, AuditKind::HitlDecision, format!("hitl/{}", item.id))
                    .values(json!("pending"), json!(HitlStatus::TimedOut))
                    .evidence(json!({"district": item.alert.district, "default": default}))
                    .rationale("timeout_default"),
            );
            self.trace.stream.push(StreamEvent::HitlResolved { item: item.clone() });
            if default == HitlDefault::Escalate {
                let ingested = self.item_ingestion(&item);
                self.issue(SENDER_GOVERNANCE, item.alert, ingested, at);
            }
        }
        Ok(())
    }

    /// A dropout touching `[start, now)` flags the agent even when its
    /// window falls between two step ends.
    fn update_dropouts(&mut self, start: Minutes, now: Minutes) {
        let ids: Vec<String> = self.agents.iter().map(|a| a.desc.id.clone()).collect();
        let mut changed = false;
        for id in ids {
            let was = self.dropped_out.contains(&id);
            let silenced = if was {
                self.bus.silenced(&id, now)
            } else {
                self.bus.silenced_during(&id, start, now)
            };
            if silenced && !was {
                self.dropped_out.insert(id.clone());
                self.trace.open_degraded(&id, "dropout", now);
                self.audit.append(
                    AuditEntry::new(now, "runtime", AuditKind::AgentFailure, id.clone())
                        .values(json!({"degraded": false}), json!({"degraded": true}))
                        .rationale("dropout"),
                );
                changed = true;
            } else if !silenced && was {
                self.dropped_out.remove(&id);
                self.trace.close_degraded(&id, now);
                self.audit.append(
                    AuditEntry::new(now, "runtime", AuditKind::AgentFailure, id.clone())
                        .values(json!({"degraded": true}), json!({"degraded": false}))
                        .rationale("recovered"),
                );
                changed = true;
            }
        }
        if changed {
            self.write_flags();
        }
    }

    fn write_flags(&mut self) {
        let mut flags = BTreeMap::new();
        let open: Vec<&str> = self
            .trace
            .degraded
            .iter()
            .filter(|d| d.end.is_none())
            .map(|d| d.agent.as_str())
            .collect();
        flags.insert("degraded".to_string(), !open.is_empty());
        flags.insert("degraded_ever".to_string(), self.trace.degraded_any());
        for a in open {
            flags.insert(format!("agent/{a}"), true);
        }
        self.state.write(StateKey::Governance, StateValue::Flags(Arc::new(flags)), "runtime");
    }

    fn pin_and_retain(&mut self, now: Minutes) {
        self.blobs.unpin_all();
        let mut grids = Vec::new();
        if let Some(v) = self.state.get(StateKey::Analysis) {
            if let StateValue::Analysis(a) = &v.value {
                grids.push(a.rain.clone());
            }
        }
        if let Some(v) = self.state.get(StateKey::Probability) {
            if let StateValue::Probability(p) = &v.value {
                grids.extend(p.calibrated.iter().cloned());
            }
        }
        if let Some(v) = self.state.get(StateKey::Depth) {
            if let StateValue::Depth(d) = &v.value {
                grids.extend(d.grids.iter().map(|g| g.depth.clone()));
            }
        }
        for g in grids {
            let h = self.blobs.put(g, now);
            self.blobs.pin(&h);
        }
        self.blobs.retain(now, self.config.blob_window);
    }

    /// Blob hashes of the grids currently referenced by state.
    pub fn grid_refs(&self) -> BTreeMap<String, Vec<String>> {
        let mut out = BTreeMap::new();
        if let Some(StateValue::Analysis(a)) = self.state.get(StateKey::Analysis).map(|v| &v.value) {
            out.insert("analysis".to_string(), vec![a.rain.content_hash().0]);
        }
        if let Some(StateValue::Probability(p)) = self.state.get(StateKey::Probability).map(|v| &v.value) {
            out.insert("probability".to_string(), p.calibrated.iter().map(|g| g.content_hash().0).collect());
        }
        if let Some(StateValue::Depth(d)) = self.state.get(StateKey::Depth).map(|v| &v.value) {
            out.insert("depth".to_string(), d.grids.iter().map(|g| g.depth.content_hash().0).collect());
        }
        out
    }
}
