//! Metrics, the pipeline assembly and batch evaluation.

pub mod metrics;
pub mod pipeline;
pub mod probe;
pub mod run;
pub mod benchmark;
pub mod report;
