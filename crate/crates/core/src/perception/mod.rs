pub mod agents;
pub mod harmonize;
pub mod initiation;
