//! Dynamic-window local planning, executed by the NMPC tracker.

use serde::{Deserialize, Serialize};

use crate::geometry::{dist, normalize_angle};
use crate::lvd::{LvdConfig, NmpcTracker};
use crate::memory::Observation;
use crate::nmpc::ActuatorLimits;
use crate::sim::world::reference_slice;
use crate::sim::{ControlContext, ControlDecision, Controller, ControllerError, RaySensorConfig, Scenario};
use crate::vehicle::{step_nominal, ControlInput, ModelParams, StateIncrement, VehicleState};
use crate::vision::{gain_schedule, DesiredTrajectory, SceneDynamics};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DwaConfig {
    pub v_samples: usize,
    pub omega_samples: usize,
    /// Rollout length used for collision checks and scoring, seconds.
    pub sim_horizon: f64,
    pub weight_heading: f64,
    pub weight_clearance: f64,
    pub weight_velocity: f64,
    /// Clearances at or above this count as fully free, meters.
    pub clearance_cap: f64,
    /// Extra inflation on top of the vehicle radius, meters.
    pub margin: f64,
}

impl Default for DwaConfig {
    fn default() -> Self {
        Self {
            v_samples: 11,
            omega_samples: 21,
            sim_horizon: 1.5,
            weight_heading: 0.8,
            weight_clearance: 0.2,
            weight_velocity: 0.3,
            clearance_cap: 1.0,
            margin: 0.05,
        }
    }
}

impl DwaConfig {
    pub fn validate(&self) -> Result<(), &'static str> {
        if self.v_samples < 2 || self.omega_samples < 2 {
            return Err("sample counts must be at least 2");
        }
        let w = [self.weight_heading, self.weight_clearance, self.weight_velocity];
        if w.iter().any(|x| !(*x >= 0.0)) || w.iter().all(|x| *x == 0.0) {
            return Err("weights must be non-negative and not all zero");
        }
        if !(self.sim_horizon > 0.0) || !(self.clearance_cap > 0.0) {
            return Err("sim_horizon and clearance_cap must be positive");
        }
        Ok(())
    }
}

/// Inputs reachable within one step from `current`, intersected with the
/// actuator box, as `(lo, hi)` per channel.
pub fn dynamic_window(current: &ControlInput, lim: &ActuatorLimits, dt: f64) -> (ControlInput, ControlInput) {
    let lo = ControlInput::new(
        (current.v_cmd + lim.du_min.v_cmd * dt).max(lim.u_min.v_cmd),
        (current.omega_cmd + lim.du_min.omega_cmd * dt).max(lim.u_min.omega_cmd),
    );
    let hi = ControlInput::new(
        (current.v_cmd + lim.du_max.v_cmd * dt).min(lim.u_max.v_cmd),
        (current.omega_cmd + lim.du_max.omega_cmd * dt).min(lim.u_max.omega_cmd),
    );
    (lo, hi)
}

/// Ray endpoints that hit something, in world coordinates.
pub fn obstacle_points(obs: &Observation, vehicle: &VehicleState, sensor: &RaySensorConfig) -> Vec<[f64; 2]> {
    obs.rays
        .iter()
        .enumerate()
        .filter(|(_, &r)| r < sensor.max_range)
        .map(|(i, &r)| {
            let a = vehicle.rho + sensor.bearing(i);
            [vehicle.x + r * a.cos(), vehicle.y + r * a.sin()]
        })
        .collect()
}

/// One scored rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub control: ControlInput,
    pub states: Vec<VehicleState>,
    /// Smallest distance from the rollout to any obstacle point, meters.
    pub clearance: f64,
    pub score: f64,
}

pub struct DwaInputs<'a> {
    pub vehicle: VehicleState,
    pub obstacles: &'a [[f64; 2]],
    pub ref_slice: &'a [VehicleState],
    pub current: ControlInput,
    pub limits: &'a ActuatorLimits,
    pub model: &'a ModelParams,
    pub inflation: f64,
    /// Length of the returned trajectory, steps.
    pub horizon: usize,
}

fn linspace(lo: f64, hi: f64, n: usize, i: usize) -> f64 {
    if hi <= lo {
        lo
    } else {
        lo + (hi - lo) * i as f64 / (n - 1) as f64
    }
}

/// Every admissible rollout in the window; colliding ones are dropped.
pub fn score_window(inp: &DwaInputs, cfg: &DwaConfig) -> Vec<Candidate> {
    let (lo, hi) = dynamic_window(&inp.current, inp.limits, inp.model.dt);
    let check_steps = ((cfg.sim_horizon / inp.model.dt).round() as usize).max(inp.horizon).max(1);
    let target = inp.ref_slice.last().map(|z| z.position());
    let v_top = inp.limits.u_max.v_cmd.max(1e-9);
    let mut out = Vec::with_capacity(cfg.v_samples * cfg.omega_samples);
    for i in 0..cfg.v_samples {
        let v = linspace(lo.v_cmd, hi.v_cmd, cfg.v_samples, i);
        for j in 0..cfg.omega_samples {
            let w = linspace(lo.omega_cmd, hi.omega_cmd, cfg.omega_samples, j);
            let u = ControlInput::new(v, w);
            let mut z = inp.vehicle;
            let mut states = Vec::with_capacity(check_steps);
            let mut clearance = f64::INFINITY;
            for _ in 0..check_steps {
                z = step_nominal(&z, &u, inp.model);
                for p in inp.obstacles {
                    clearance = clearance.min(dist(z.position(), *p));
                }
                states.push(z);
            }
            if clearance <= inp.inflation {
                continue;
            }
            let end = states[states.len().min(check_steps) - 1];
            let heading = match target {
                Some(t) if dist(t, end.position()) > 1e-9 => {
                    let want = (t[1] - end.y).atan2(t[0] - end.x);
                    1.0 - normalize_angle(want - end.rho).abs() / std::f64::consts::PI
                }
                _ => 1.0,
            };
            let free = ((clearance - inp.inflation) / cfg.clearance_cap).min(1.0);
            let score = cfg.weight_heading * heading + cfg.weight_clearance * free + cfg.weight_velocity * v / v_top;
            states.truncate(inp.horizon);
            out.push(Candidate {
                control: u,
                states,
                clearance,
                score,
            });
        }
    }
    out
}

/// Best collision-free rollout as a desired trajectory, or the stop
/// trajectory when every rollout collides.
pub fn dwa_plan(inp: &DwaInputs, cfg: &DwaConfig) -> (DesiredTrajectory, Option<Candidate>) {
    let mut best: Option<Candidate> = None;
    for c in score_window(inp, cfg) {
        if best.as_ref().is_none_or(|b| c.score > b.score) {
            best = Some(c);
        }
    }
    match best {
        Some(c) => (
            DesiredTrajectory {
                states: c.states.clone(),
                horizon_dt: inp.model.dt,
            },
            Some(c),
        ),
        None => (DesiredTrajectory::hold(inp.vehicle, inp.horizon, inp.model.dt), None),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DwaNmpcConfig {
    pub dwa: DwaConfig,
    /// Fixed width used for the NMPC gains.
    pub w: f64,
    pub horizon: usize,
}

impl Default for DwaNmpcConfig {
    fn default() -> Self {
        Self {
            dwa: DwaConfig::default(),
            w: 0.9,
            horizon: 20,
        }
    }
}

/// DWA picks the path, a fixed-gain NMPC tracks it.
pub struct DwaNmpc {
    pub cfg: DwaNmpcConfig,
    tracker: Option<NmpcTracker>,
}

impl DwaNmpc {
    pub fn new(cfg: DwaNmpcConfig) -> Self {
        Self { cfg, tracker: None }
    }
}

impl Controller for DwaNmpc {
    fn name(&self) -> &str {
        "dwa-nmpc"
    }

    fn reset(&mut self, scenario: &Scenario) {
        let lvd = LvdConfig {
            horizon: self.cfg.horizon,
            ..LvdConfig::default()
        };
        self.tracker = Some(NmpcTracker::new(lvd.nmpc(scenario)));
    }

    fn control(&mut self, ctx: &ControlContext) -> Result<ControlDecision, ControllerError> {
        let s = ctx.scenario;
        if self.tracker.is_none() {
            self.reset(s);
        }
        let slice = reference_slice(&s.route.centerline, &ctx.state, self.cfg.horizon, s.dt, s.v_max);
        let points = obstacle_points(ctx.observation, &ctx.state, &s.sensor);
        let limits = s.limits();
        let model = s.nominal_model();
        let inputs = DwaInputs {
            vehicle: ctx.state,
            obstacles: &points,
            ref_slice: &slice,
            current: ctx.last_control,
            limits: &limits,
            model: &model,
            inflation: s.vehicle.radius + self.cfg.dwa.margin,
            horizon: self.cfg.horizon,
        };
        let (desired, _) = dwa_plan(&inputs, &self.cfg.dwa);
        let d = SceneDynamics::new(0.0, self.cfg.w);
        let gains = gain_schedule(&d, crate::vision::DEFAULT_EPS_R);
        let tracker = self.tracker.as_mut().unwrap();
        let u = tracker.track(ctx.state, &desired, StateIncrement::ZERO, gains, ctx.last_control)?;
        Ok(ControlDecision {
            control: u,
            scene: Some(d),
            desired: Some(desired),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (ActuatorLimits, ModelParams, Vec<VehicleState>) {
        let lim = Scenario::along("x", vec![[0.0, 0.0], [10.0, 0.0]], 2.0).limits();
        let model = ModelParams {
            dt: 0.1,
            ..ModelParams::default()
        };
        let slice = (1..=20).map(|k| VehicleState::new(0.2 * k as f64, 0.0, 0.0)).collect();
        (lim, model, slice)
    }

    #[test]
    fn open_road_goes_straight_at_top_speed() {
        let (lim, model, slice) = setup();
        let current = ControlInput::new(2.0, 0.0);
        let inp = DwaInputs {
            vehicle: VehicleState::default(),
            obstacles: &[],
            ref_slice: &slice,
            current,
            limits: &lim,
            model: &model,
            inflation: 0.25,
            horizon: 20,
        };
        let (traj, best) = dwa_plan(&inp, &DwaConfig::default());
        let best = best.unwrap();
        assert_eq!(best.control.v_cmd, 2.0);
        assert!(best.control.omega_cmd.abs() < 1e-12);
        assert_eq!(traj.len(), 20);
    }

    #[test]
    fn everything_blocked_returns_stop_trajectory() {
        let (lim, model, slice) = setup();
        let ring: Vec<[f64; 2]> = (0..36)
            .map(|i| {
                let a = i as f64 * 10f64.to_radians();
                [0.2 * a.cos(), 0.2 * a.sin()]
            })
            .collect();
        let inp = DwaInputs {
            vehicle: VehicleState::default(),
            obstacles: &ring,
            ref_slice: &slice,
            current: ControlInput::new(1.0, 0.0),
            limits: &lim,
            model: &model,
            inflation: 0.25,
            horizon: 20,
        };
        let (traj, best) = dwa_plan(&inp, &DwaConfig::default());
        assert!(best.is_none());
        assert!(traj.states.iter().all(|z| *z == VehicleState::default()));
    }

    #[test]
    fn window_respects_rates_and_bounds() {
        let (lim, _, _) = setup();
        let (lo, hi) = dynamic_window(&ControlInput::new(0.1, 0.45), &lim, 0.1);
        assert_eq!(lo.v_cmd, 0.0);
        assert!((hi.v_cmd - 0.3).abs() < 1e-12);
        assert!((lo.omega_cmd - 0.15).abs() < 1e-12);
        assert_eq!(hi.omega_cmd, 0.5);
    }
}
