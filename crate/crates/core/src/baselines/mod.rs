//! Comparison controllers sharing the LVD-NMPC actuator limits.

pub mod direct;
pub mod dwa;

pub use direct::{direct_policy_step, DirectPolicy, DirectPolicyConfig};
pub use dwa::{dwa_plan, obstacle_points, DwaConfig, DwaNmpc, DwaNmpcConfig};
