pub mod agent;
pub mod adaptation;
pub mod audit;
pub mod calibration;
pub mod summary;
