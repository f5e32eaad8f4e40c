//! Learning-based vision-dynamics NMPC workbench.

pub mod baselines;
pub mod geometry;
pub mod lvd;
pub mod memory;
pub mod metrics;
pub mod nmpc;
pub mod plot;
pub mod policy;
pub mod runs;
pub mod sim;
pub mod vehicle;
pub mod vision;
