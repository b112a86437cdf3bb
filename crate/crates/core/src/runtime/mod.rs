//! Deterministic virtual-time substrate: bus, shared state, governance,
//! faults and the scheduler.

pub mod agent;
pub mod blob;
pub mod bus;
pub mod fault;
pub mod governance;
pub mod message;
pub mod scheduler;
pub mod state;
pub mod trace;
pub mod transport;

pub use agent::{Action, Actions, AgentDescriptor, Layer, Observation, ObservationBinding, Policy, PolicyError, Tap};
pub use bus::{Bus, BusError};
pub use fault::{FaultHandle, FaultKind, FaultSpec};
pub use governance::{GovernanceOutcome, GovernancePolicy, HitlItem, HitlStatus};
pub use message::{Message, OperatorDecision, Payload};
pub use scheduler::{Runtime, RuntimeConfig, RuntimeError};
pub use state::{SharedState, StateKey, StateValue};
