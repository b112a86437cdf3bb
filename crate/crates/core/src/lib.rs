pub mod evaluation;
pub mod grid;
pub mod learning_audit;
pub mod perception;
pub mod prediction;
pub mod response;
pub mod runtime;
pub mod seed;
pub mod world;
