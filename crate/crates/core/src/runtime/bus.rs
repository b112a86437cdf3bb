//! Topic-validated publication with fault application.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::grid::Minutes;

use super::fault::{FaultError, FaultHandle, FaultInjector, FaultKind, FaultSpec};
use super::message::{DeliveryReceipt, Message};
use super::transport::{InProcessTransport, Transport};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BusError {
    #[error("unknown topic {0:?}")]
    UnknownTopic(String),
    #[error("unregistered sender {0:?}")]
    UnknownSender(String),
    #[error("deliver_at {deliver_at} precedes issued_at {issued_at}")]
    Causality { issued_at: Minutes, deliver_at: Minutes },
    #[error(transparent)]
    Fault(#[from] FaultError),
}

pub struct Bus {
    transport: Box<dyn Transport>,
    topics: BTreeSet<String>,
    senders: BTreeSet<String>,
    seq: BTreeMap<String, u64>,
    faults: FaultInjector,
}

impl Bus {
    pub fn new(topics: &[&str], seed: u64) -> Self {
        Self::with_transport(topics, seed, Box::new(InProcessTransport::new()))
    }

    pub fn with_transport(topics: &[&str], seed: u64, transport: Box<dyn Transport>) -> Self {
        Bus {
            transport,
            topics: topics.iter().map(|t| t.to_string()).collect(),
            senders: BTreeSet::new(),
            seq: BTreeMap::new(),
            faults: FaultInjector::new(seed),
        }
    }

    pub fn register_sender(&mut self, id: &str) {
        self.senders.insert(id.to_string());
    }

    pub fn has_topic(&self, topic: &str) -> bool {
        self.topics.contains(topic)
    }

    pub fn has_sender(&self, id: &str) -> bool {
        self.senders.contains(id)
    }

    /// Assigns the sender's next seq, applies faults and enqueues. Messages
    /// from a silenced sender and lost messages are dropped.
    pub fn publish(&mut self, mut msg: Message) -> Result<DeliveryReceipt, BusError> {
        if !self.topics.contains(&msg.topic) {
            return Err(BusError::UnknownTopic(msg.topic));
        }
        if !self.senders.contains(&msg.sender) {
            return Err(BusError::UnknownSender(msg.sender));
        }
        if msg.deliver_at < msg.issued_at {
            return Err(BusError::Causality {
                issued_at: msg.issued_at,
                deliver_at: msg.deliver_at,
            });
        }
        let counter = self.seq.entry(msg.sender.clone()).or_insert(0);
        msg.seq = *counter;
        *counter += 1;
        let silenced = self.faults.silenced(&msg.sender, msg.issued_at);
        let effect = self.faults.apply(&msg.topic, &msg.sender, msg.issued_at);
        msg.deliver_at += effect.delay;
        let dropped = silenced || effect.dropped;
        let receipt = DeliveryReceipt {
            topic: msg.topic.clone(),
            sender: msg.sender.clone(),
            seq: msg.seq,
            delivery: msg.deliver_at,
            dropped,
        };
        if !dropped {
            self.transport.enqueue(msg);
        }
        Ok(receipt)
    }

    pub fn next_due(&mut self, end: Minutes) -> Option<Message> {
        self.transport.next_due(end)
    }

    pub fn pending(&self) -> usize {
        self.transport.pending()
    }

    /// Dropout targets must be registered senders; delay and loss targets
    /// may be a topic, a sender or `"*"`.
    pub fn inject_fault(&mut self, spec: FaultSpec, clock: Minutes) -> Result<FaultHandle, BusError> {
        let known = match spec.kind {
            FaultKind::AgentDropout => self.senders.contains(&spec.target),
            _ => spec.target == "*" || self.topics.contains(&spec.target) || self.senders.contains(&spec.target),
        };
        if !known {
            return Err(FaultError::UnknownTarget(spec.target).into());
        }
        Ok(self.faults.add(spec, clock)?)
    }

    pub fn cancel_fault(&mut self, handle: FaultHandle) -> Result<FaultSpec, BusError> {
        Ok(self.faults.cancel(handle)?)
    }

    pub fn silenced(&self, agent: &str, t: Minutes) -> bool {
        self.faults.silenced(agent, t)
    }

    pub fn silenced_during(&self, agent: &str, from: Minutes, to: Minutes) -> bool {
        self.faults.silenced_during(agent, from, to)
    }

    pub fn faults(&self) -> impl Iterator<Item = &FaultSpec> {
        self.faults.specs()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::message::Payload;

    fn bus() -> Bus {
        let mut b = Bus::new(&["obs", "alerts"], 1);
        b.register_sender("a");
        b.register_sender("b");
        b
    }

    fn msg(topic: &str, sender: &str, t: Minutes) -> Message {
        Message::new(topic, sender, Payload::Note(String::new()), t, t)
    }

    #[test]
    fn identity_scheduling_and_rejections() {
        let mut b = bus();
        let r = b.publish(msg("obs", "a", 10)).unwrap();
        assert_eq!((r.delivery, r.dropped), (10, false));
        assert_eq!(b.publish(msg("nope", "a", 10)), Err(BusError::UnknownTopic("nope".into())));
        assert_eq!(b.publish(msg("obs", "zed", 10)), Err(BusError::UnknownSender("zed".into())));
    }

    #[test]
    fn delay_fault_shifts_delivery() {
        let mut b = bus();
        b.inject_fault(FaultSpec::delay("obs", 5, 0, 100), 0).unwrap();
        assert_eq!(b.publish(msg("obs", "a", 10)).unwrap().delivery, 15);
        assert_eq!(b.publish(msg("alerts", "a", 10)).unwrap().delivery, 10);
    }

    #[test]
    fn same_time_senders_in_lexicographic_order() {
        let mut b = bus();
        b.publish(msg("obs", "b", 10)).unwrap();
        b.publish(msg("obs", "a", 10)).unwrap();
        assert_eq!(b.next_due(11).unwrap().sender, "a");
        assert_eq!(b.next_due(11).unwrap().sender, "b");
    }

    #[test]
    fn unknown_fault_target_rejected() {
        let mut b = bus();
        assert!(b.inject_fault(FaultSpec::dropout("ghost", 5, 10), 0).is_err());
        assert!(b.inject_fault(FaultSpec::dropout("obs", 5, 10), 0).is_err());
        assert!(b.inject_fault(FaultSpec::loss("*", 0.5, 5, 10), 0).is_ok());
    }

    #[test]
    fn dropout_silences_sender() {
        let mut b = bus();
        b.inject_fault(FaultSpec::dropout("b", 100, 200), 0).unwrap();
        assert!(b.publish(msg("alerts", "b", 150)).unwrap().dropped);
        assert!(!b.publish(msg("alerts", "b", 200)).unwrap().dropped);
    }
}
