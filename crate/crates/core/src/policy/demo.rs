//! Scripted demonstrator over the candidate grid, used to warm-start and
//! guide Q-learning. It picks a free lateral lane ahead and steers toward it
//! through the curvature candidate.

use serde::{Deserialize, Serialize};

use super::features::CandidateSet;
use crate::geometry::Polyline;
use crate::vehicle::VehicleState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoConfig {
    /// Clearance kept beyond the vehicle radius, meters.
    pub margin: f64,
    /// Lateral lanes considered across the corridor.
    pub lanes: usize,
    /// Obstacle points this far ahead along the route block a lane, meters.
    pub block_ahead: f64,
    pub block_behind: f64,
    /// Heading offset per meter of lateral error, rad/m.
    pub offset_gain: f64,
    pub heading_max: f64,
    /// Curvature candidate per radian of wanted heading offset.
    pub heading_gain: f64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            margin: 0.15,
            lanes: 13,
            block_ahead: 4.0,
            block_behind: 0.5,
            offset_gain: 0.5,
            heading_max: 0.4,
            heading_gain: 1.4,
        }
    }
}

pub struct DemoInputs<'a> {
    pub state: VehicleState,
    /// Ray hits in world coordinates.
    pub obstacles: &'a [[f64; 2]],
    pub route: &'a Polyline,
    pub half_width: f64,
    pub radius: f64,
}

/// Lateral offset to aim for: the free lane that is cheapest given the
/// distance from the centerline and from the current offset.
pub fn target_lane(inp: &DemoInputs, cfg: &DemoConfig) -> f64 {
    let here = inp.route.project(inp.state.position());
    let reach = (inp.half_width - inp.radius - cfg.margin).max(0.0);
    let near: Vec<f64> = inp
        .obstacles
        .iter()
        .map(|p| inp.route.project(*p))
        .filter(|q| q.arc_length > here.arc_length - cfg.block_behind && q.arc_length < here.arc_length + cfg.block_ahead)
        .map(|q| q.lateral)
        .collect();
    let n = cfg.lanes.max(2);
    (0..n)
        .map(|i| -reach + 2.0 * reach * i as f64 / (n - 1) as f64)
        .filter(|e| near.iter().all(|l| (l - e).abs() >= inp.radius + cfg.margin))
        .map(|e| (e.abs() + 0.5 * (e - here.lateral).abs(), e))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map_or(here.lateral, |(_, e)| e)
}

/// Candidate index whose curvature best matches the wanted heading offset,
/// preferring the largest width.
pub fn demo_action(inp: &DemoInputs, candidates: &CandidateSet, cfg: &DemoConfig) -> usize {
    let e = inp.route.project(inp.state.position()).lateral;
    let heading = (cfg.offset_gain * (target_lane(inp, cfg) - e)).clamp(-cfg.heading_max, cfg.heading_max);
    let want = cfg.heading_gain * heading;
    let scores: Vec<f64> = candidates
        .candidates
        .iter()
        .map(|d| -(d.c - want).abs() + 1e-6 * d.w)
        .collect();
    super::argmax(&scores)
}
