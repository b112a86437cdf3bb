//! Fault specifications and their seeded application.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Minutes;
use crate::seed::{stream, SeedRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    AgentDropout,
    MessageDelay,
    MessageLoss,
}

/// `target` names an agent or a topic; `"*"` matches every topic for delay
/// and loss. The window is half-open, `[start, end)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub kind: FaultKind,
    pub target: String,
    pub window: (Minutes, Minutes),
    #[serde(default)]
    pub magnitude: f64,
}

impl FaultSpec {
    pub fn dropout(agent: &str, start: Minutes, end: Minutes) -> Self {
        FaultSpec {
            kind: FaultKind::AgentDropout,
            target: agent.to_string(),
            window: (start, end),
            magnitude: 0.0,
        }
    }

    pub fn delay(target: &str, minutes: Minutes, start: Minutes, end: Minutes) -> Self {
        FaultSpec {
            kind: FaultKind::MessageDelay,
            target: target.to_string(),
            window: (start, end),
            magnitude: minutes as f64,
        }
    }

    pub fn loss(target: &str, p: f64, start: Minutes, end: Minutes) -> Self {
        FaultSpec {
            kind: FaultKind::MessageLoss,
            target: target.to_string(),
            window: (start, end),
            magnitude: p,
        }
    }

    pub fn active(&self, t: Minutes) -> bool {
        self.window.0 <= t && t < self.window.1
    }

    fn matches(&self, topic: &str, sender: &str) -> bool {
        self.target == "*" || self.target == topic || self.target == sender
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FaultError {
    #[error("fault window [{0}, {1}) is empty")]
    EmptyWindow(Minutes, Minutes),
    #[error("fault window starts at {start}, before the clock {clock}")]
    InPast { start: Minutes, clock: Minutes },
    #[error("unknown fault target {0:?}")]
    UnknownTarget(String),
    #[error("invalid magnitude {0}")]
    Magnitude(f64),
    #[error("no such fault handle {0}")]
    UnknownHandle(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FaultHandle(pub u64);

/// What the active faults do to one publication.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaultEffect {
    pub delay: Minutes,
    pub dropped: bool,
}

pub struct FaultInjector {
    faults: Vec<(FaultHandle, FaultSpec)>,
    next: u64,
    rng: SeedRng,
}

impl FaultInjector {
    pub fn new(seed: u64) -> Self {
        FaultInjector {
            faults: Vec::new(),
            next: 0,
            rng: stream(seed, "faults", 0),
        }
    }

    pub fn validate(spec: &FaultSpec, clock: Minutes) -> Result<(), FaultError> {
        let (s, e) = spec.window;
        if s >= e {
            return Err(FaultError::EmptyWindow(s, e));
        }
        if s < clock {
            return Err(FaultError::InPast { start: s, clock });
        }
        let ok = match spec.kind {
            FaultKind::AgentDropout => true,
            FaultKind::MessageDelay => spec.magnitude >= 0.0 && spec.magnitude.fract() == 0.0,
            FaultKind::MessageLoss => (0.0..=1.0).contains(&spec.magnitude),
        };
        if !ok {
            return Err(FaultError::Magnitude(spec.magnitude));
        }
        Ok(())
    }

    /// Target resolution is the caller's job; this only checks the window
    /// and magnitude.
    pub fn add(&mut self, spec: FaultSpec, clock: Minutes) -> Result<FaultHandle, FaultError> {
        Self::validate(&spec, clock)?;
        let h = FaultHandle(self.next);
        self.next += 1;
        self.faults.push((h, spec));
        Ok(h)
    }

    pub fn cancel(&mut self, handle: FaultHandle) -> Result<FaultSpec, FaultError> {
        let pos = self
            .faults
            .iter()
            .position(|(h, _)| *h == handle)
            .ok_or(FaultError::UnknownHandle(handle.0))?;
        Ok(self.faults.remove(pos).1)
    }

    pub fn specs(&self) -> impl Iterator<Item = &FaultSpec> {
        self.faults.iter().map(|(_, s)| s)
    }

    pub fn silenced(&self, agent: &str, t: Minutes) -> bool {
        self.faults
            .iter()
            .any(|(_, f)| f.kind == FaultKind::AgentDropout && f.target == agent && f.active(t))
    }

    /// Whether a dropout of `agent` is active at any time in `[from, to)`.
    pub fn silenced_during(&self, agent: &str, from: Minutes, to: Minutes) -> bool {
        self.faults
            .iter()
            .any(|(_, f)| f.kind == FaultKind::AgentDropout && f.target == agent && f.window.0 < to && from < f.window.1)
    }

    /// Loss draws are consumed only for publications matched by an active
    /// loss fault, in publication order.
    pub fn apply(&mut self, topic: &str, sender: &str, t: Minutes) -> FaultEffect {
        let mut effect = FaultEffect {
            delay: 0,
            dropped: false,
        };
        for (_, f) in &self.faults {
            if !f.active(t) || !f.matches(topic, sender) {
                continue;
            }
            match f.kind {
                FaultKind::MessageDelay => effect.delay += f.magnitude as Minutes,
                FaultKind::MessageLoss => {
                    let u: f64 = self.rng.random();
                    if u < f.magnitude {
                        effect.dropped = true;
                    }
                }
                FaultKind::AgentDropout => {}
            }
        }
        effect
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_rules() {
        let mut f = FaultInjector::new(1);
        assert_eq!(f.add(FaultSpec::dropout("a", 10, 10), 0), Err(FaultError::EmptyWindow(10, 10)));
        assert!(matches!(f.add(FaultSpec::dropout("a", 5, 10), 6), Err(FaultError::InPast { .. })));
        assert!(f.add(FaultSpec::loss("obs", 1.5, 5, 10), 0).is_err());
    }

    #[test]
    fn delays_add_and_cancel_removes() {
        let mut f = FaultInjector::new(1);
        let h = f.add(FaultSpec::delay("alerts", 3, 0, 100), 0).unwrap();
        f.add(FaultSpec::delay("*", 2, 0, 100), 0).unwrap();
        assert_eq!(f.apply("alerts", "x", 50).delay, 5);
        assert_eq!(f.apply("obs", "x", 50).delay, 2);
        assert_eq!(f.apply("obs", "x", 100).delay, 0);
        f.cancel(h).unwrap();
        assert_eq!(f.apply("alerts", "x", 50).delay, 2);
        assert!(f.cancel(h).is_err());
    }

    #[test]
    fn certain_loss_drops_everything() {
        let mut f = FaultInjector::new(3);
        f.add(FaultSpec::loss("routes", 1.0, 0, 50), 0).unwrap();
        assert!((0..50).all(|t| f.apply("routes", "r", t).dropped));
        assert!(!f.apply("alerts", "r", 10).dropped);
    }
}
