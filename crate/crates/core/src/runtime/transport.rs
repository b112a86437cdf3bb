//! Message transport contract and the deterministic in-process queue.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::grid::Minutes;

use super::message::Message;

pub trait Transport: Send {
    fn enqueue(&mut self, msg: Message);
    /// Removes the next message in total order if it is due strictly
    /// before `end`.
    fn next_due(&mut self, end: Minutes) -> Option<Message>;
    fn pending(&self) -> usize;
}

struct Queued(Message);

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.0.order_key() == other.0.order_key()
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    // Reversed so the max-heap pops the smallest key.
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.order_key().cmp(&self.0.order_key())
    }
}

#[derive(Default)]
pub struct InProcessTransport {
    heap: BinaryHeap<Queued>,
}

impl InProcessTransport {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Transport for InProcessTransport {
    fn enqueue(&mut self, msg: Message) {
        self.heap.push(Queued(msg));
    }

    fn next_due(&mut self, end: Minutes) -> Option<Message> {
        if self.heap.peek()?.0.deliver_at < end {
            self.heap.pop().map(|q| q.0)
        } else {
            None
        }
    }

    fn pending(&self) -> usize {
        self.heap.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::message::Payload;

    fn msg(sender: &str, deliver_at: Minutes, seq: u64) -> Message {
        let mut m = Message::new("obs", sender, Payload::Note(String::new()), 0, 0);
        m.deliver_at = deliver_at;
        m.seq = seq;
        m
    }

    #[test]
    fn pops_in_total_order_and_respects_due_time() {
        let mut t = InProcessTransport::new();
        t.enqueue(msg("b", 10, 0));
        t.enqueue(msg("a", 10, 1));
        t.enqueue(msg("a", 10, 0));
        t.enqueue(msg("a", 12, 0));
        let order: Vec<_> = std::iter::from_fn(|| t.next_due(11)).map(|m| (m.sender, m.seq)).collect();
        assert_eq!(order, vec![("a".into(), 0), ("a".into(), 1), ("b".into(), 0)]);
        assert_eq!(t.pending(), 1);
        assert!(t.next_due(12).is_none());
    }
}
