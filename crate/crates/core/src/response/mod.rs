pub mod agents;
pub mod dissemination;
pub mod hydrology;
pub mod routing;
pub mod triage;
