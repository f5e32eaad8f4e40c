//! Direct reactive policy: rays map straight to controls through a fixed
//! steering signal and a quantized, proportional execution law.

use serde::{Deserialize, Serialize};

use crate::memory::Observation;
use crate::nmpc::ActuatorLimits;
use crate::sim::{ControlContext, ControlDecision, Controller, ControllerError, RaySensorConfig, Scenario};
use crate::vehicle::ControlInput;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DirectPolicyConfig {
    /// Steering quantum, degrees.
    pub steer_increment_deg: f64,
    /// Proportional velocity gain.
    pub k_v: f64,
    /// Cruise speed; `None` means the scenario's v_max.
    pub v_target: Option<f64>,
    /// Steering angle per radian of centroid bearing.
    pub steer_gain: f64,
    /// Rays within this fraction of the longest forward ray form the centroid.
    pub far_fraction: f64,
    /// Half-angle of the cone checked for blockage, degrees.
    pub block_cone_deg: f64,
    /// Forward clearance below which the target speed drops to 0, meters.
    pub block_distance: f64,
}

impl Default for DirectPolicyConfig {
    fn default() -> Self {
        Self {
            steer_increment_deg: 0.01,
            k_v: 1.6,
            v_target: None,
            steer_gain: 1.0,
            far_fraction: 0.9,
            block_cone_deg: 15.0,
            block_distance: 0.5,
        }
    }
}

/// Mean bearing of the farthest forward rays, radians; 0 if nothing is
/// forward.
pub fn far_centroid_bearing(obs: &Observation, sensor: &RaySensorConfig, far_fraction: f64) -> f64 {
    let forward: Vec<(f64, f64)> = obs
        .rays
        .iter()
        .enumerate()
        .map(|(i, &r)| (sensor.bearing(i), r))
        .filter(|(b, _)| b.abs() <= std::f64::consts::FRAC_PI_2 + 1e-12)
        .collect();
    let Some(longest) = forward.iter().map(|(_, r)| *r).reduce(f64::max) else {
        return 0.0;
    };
    let far: Vec<f64> = forward
        .iter()
        .filter(|(_, r)| *r >= far_fraction * longest)
        .map(|(b, _)| *b)
        .collect();
    far.iter().sum::<f64>() / far.len() as f64
}

/// Whether any ray within `cone_deg` of straight ahead is shorter than `d`.
pub fn forward_blocked(obs: &Observation, sensor: &RaySensorConfig, cone_deg: f64, d: f64) -> bool {
    obs.rays
        .iter()
        .enumerate()
        .any(|(i, &r)| sensor.bearing(i).abs() <= cone_deg.to_radians() + 1e-12 && r < d)
}

/// One control from the execution law. Steering moves toward
/// `steer_signal` (the desired steering angle) by a whole number of
/// increments, limited by the rate and box bounds; speed follows
/// `prev + k_v (v_target - prev) dt`, clipped the same way.
pub fn direct_policy_step(
    steer_signal: f64,
    v_target: f64,
    prev: &ControlInput,
    cfg: &DirectPolicyConfig,
    lim: &ActuatorLimits,
    dt: f64,
) -> ControlInput {
    let inc = cfg.steer_increment_deg.to_radians();
    let wanted = steer_signal - prev.omega_cmd;
    let mut n = (wanted.abs() / inc).round();
    let up = wanted >= 0.0;
    let rate = if up { lim.du_max.omega_cmd } else { -lim.du_min.omega_cmd } * dt;
    let room = if up {
        lim.u_max.omega_cmd - prev.omega_cmd
    } else {
        prev.omega_cmd - lim.u_min.omega_cmd
    };
    n = n.min((rate.min(room).max(0.0) / inc).floor());
    let mut omega = if up { prev.omega_cmd + n * inc } else { prev.omega_cmd - n * inc };
    // float rounding of prev + n * inc may overshoot a limit by an ulp
    while n > 0.0 && !(lim.within_bounds(&ControlInput::new(lim.u_min.v_cmd, omega)) && lim.rate_admits(prev, &ControlInput::new(prev.v_cmd, omega), dt)) {
        n -= 1.0;
        omega = if up { prev.omega_cmd + n * inc } else { prev.omega_cmd - n * inc };
    }

    let v_raw = prev.v_cmd + cfg.k_v * (v_target - prev.v_cmd) * dt;
    let v_lo = (prev.v_cmd + lim.du_min.v_cmd * dt).max(lim.u_min.v_cmd);
    let v_hi = (prev.v_cmd + lim.du_max.v_cmd * dt).min(lim.u_max.v_cmd);
    let v = v_raw.clamp(v_lo.min(v_hi), v_hi);
    ControlInput::new(v, omega)
}

pub struct DirectPolicy {
    pub cfg: DirectPolicyConfig,
}

impl DirectPolicy {
    pub fn new(cfg: DirectPolicyConfig) -> Self {
        Self { cfg }
    }
}

impl Controller for DirectPolicy {
    fn name(&self) -> &str {
        "direct"
    }

    fn reset(&mut self, _: &Scenario) {}

    fn control(&mut self, ctx: &ControlContext) -> Result<ControlDecision, ControllerError> {
        let s = ctx.scenario;
        let lim = s.limits();
        let bearing = far_centroid_bearing(ctx.observation, &s.sensor, self.cfg.far_fraction);
        let signal = (self.cfg.steer_gain * bearing).clamp(lim.u_min.omega_cmd, lim.u_max.omega_cmd);
        let blocked = forward_blocked(ctx.observation, &s.sensor, self.cfg.block_cone_deg, self.cfg.block_distance);
        let v_target = if blocked {
            0.0
        } else {
            self.cfg.v_target.unwrap_or(s.v_max)
        };
        Ok(ControlDecision::bare(direct_policy_step(
            signal,
            v_target,
            &ctx.last_control,
            &self.cfg,
            &lim,
            s.dt,
        )))
    }
}
