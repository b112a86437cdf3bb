pub mod agents;
pub mod downscale;
pub mod motion;
pub mod nowcast;
pub mod probability;
