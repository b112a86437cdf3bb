//! Seeded synthetic environment: terrain, rainfall truth, sensors,
//! community and event labels.

pub mod cells;
pub mod community;
pub mod labels;
pub mod scenario;
pub mod sensors;
pub mod terrain;

pub use cells::ConvectiveCell;
pub use community::{Community, CommunityConfig, District, RoadEdge, RoadGraph, RoadNode, Zone};
pub use labels::{label_events, EventLabel, EVENT_THRESHOLD};
pub use scenario::{generate_scenario, Scenario, ScenarioClass, ScenarioConfig, ScenarioError, TruthFrame};
pub use sensors::{GaugeReading, ObservationSet, SensorConfig, SensorSuite};
pub use terrain::Terrain;
