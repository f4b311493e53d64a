//! Multi-robot travel-time estimation, sharing and planning on topological maps.

pub mod behaviors;
pub mod estimator;
pub mod harness;
pub mod knowledge;
pub mod planner;
pub mod registry;
pub mod sharing;
pub mod topomap;
pub mod worldsim;
