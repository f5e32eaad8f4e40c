//! The LVD-NMPC controller: scene dynamics from a learned (or fixed)
//! estimator shape the desired trajectory and the NMPC weights.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nmpc::{control_step, NmpcConfig, NmpcError, NmpcProblem, NmpcSolution};
use crate::policy::{featurize, select_dynamics, FeatureConfig, QPolicy};
use crate::sim::world::{offset_reference_slice, reference_slice};
use crate::sim::{ControlContext, ControlDecision, Controller, ControllerError, Scenario};
use crate::vehicle::{ControlInput, StateIncrement, VehicleState};
use crate::vision::{
    desired_trajectory, gain_schedule, residual_h, DesiredTrajectory, GainSchedule, ProjectionConfig,
    ResidualWeights, SceneDynamics, DEFAULT_EPS_R,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LvdConfig {
    /// NMPC horizon and reference-slice length, steps.
    pub horizon: usize,
    /// Memory entries stacked into the estimator's features.
    pub history: usize,
    /// Controller defaults: lateral scale 0, so `w` only sets the gains, and
    /// a 0.5 s lookahead.
    pub projection: ProjectionConfig,
    /// Keep the reference at the vehicle's lateral offset instead of the
    /// centerline.
    pub follow_offset: bool,
    /// Model residual used in prediction; zero by default.
    pub residual: ResidualWeights,
    pub eps_r: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub penalty_weight: f64,
    pub penalty_rounds: usize,
}

impl Default for LvdConfig {
    fn default() -> Self {
        Self {
            horizon: 20,
            history: 4,
            projection: ProjectionConfig {
                lateral_scale: 0.0,
                lookahead_time: 0.5,
                ..ProjectionConfig::default()
            },
            follow_offset: true,
            residual: ResidualWeights {
                k_c: 0.0,
                k_w: 0.0,
                k_v: 0.0,
            },
            eps_r: DEFAULT_EPS_R,
            max_iters: 200,
            grad_tol: 1e-6,
            penalty_weight: 1e3,
            penalty_rounds: 3,
        }
    }
}

impl LvdConfig {
    /// Solver settings for `scenario`: its time step, nominal wheelbase and
    /// actuator limits, with the cross-track corridor at the half-width.
    pub fn nmpc(&self, scenario: &Scenario) -> NmpcConfig {
        NmpcConfig {
            horizon: self.horizon,
            dt: scenario.dt,
            wheelbase: scenario.vehicle.wheelbase,
            limits: scenario.limits(),
            e_min: -scenario.route.half_width,
            e_max: scenario.route.half_width,
            max_iters: self.max_iters,
            grad_tol: self.grad_tol,
            penalty_weight: self.penalty_weight,
            penalty_rounds: self.penalty_rounds,
        }
    }

    pub fn features(&self, scenario: &Scenario) -> FeatureConfig {
        FeatureConfig {
            history: self.history,
            rays: scenario.sensor.ray_count(),
            max_range: scenario.sensor.max_range,
            horizon: self.horizon,
            v_max: scenario.v_max,
        }
    }
}

/// Receding-horizon tracking with warm starts across ticks.
#[derive(Debug, Clone)]
pub struct NmpcTracker {
    pub cfg: NmpcConfig,
    warm: Option<NmpcSolution>,
}

impl NmpcTracker {
    pub fn new(cfg: NmpcConfig) -> Self {
        Self { cfg, warm: None }
    }

    pub fn reset(&mut self) {
        self.warm = None;
    }

    pub fn track(
        &mut self,
        current: VehicleState,
        desired: &DesiredTrajectory,
        residual: StateIncrement,
        gains: GainSchedule,
        last_applied: ControlInput,
    ) -> Result<ControlInput, NmpcError> {
        let problem = NmpcProblem {
            current,
            desired,
            residual,
            gains,
            last_applied: Some(last_applied),
        };
        match control_step(&problem, &self.cfg, self.warm.as_ref()) {
            Ok((u, next)) => {
                self.warm = Some(next);
                Ok(u)
            }
            Err(e) => {
                self.warm = None;
                Err(e)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub enum SceneSource {
    Fixed(SceneDynamics),
    Learned(Arc<QPolicy>),
}

#[derive(Debug, Clone)]
pub struct LvdController {
    pub cfg: LvdConfig,
    source: SceneSource,
    tracker: Option<NmpcTracker>,
    epsilon: f64,
    rng: ChaCha8Rng,
}

impl LvdController {
    pub fn fixed(cfg: LvdConfig, d: SceneDynamics) -> Self {
        Self {
            cfg,
            source: SceneSource::Fixed(d),
            tracker: None,
            epsilon: 0.0,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    /// Greedy controller around a trained estimator.
    pub fn learned(policy: Arc<QPolicy>) -> Self {
        Self {
            cfg: policy.lvd,
            source: SceneSource::Learned(policy),
            tracker: None,
            epsilon: 0.0,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    /// Reference poses the controller tracks from `state`.
    pub fn slice(&self, scenario: &Scenario, state: &VehicleState) -> Vec<VehicleState> {
        let slicer = if self.cfg.follow_offset {
            offset_reference_slice
        } else {
            reference_slice
        };
        slicer(&scenario.route.centerline, state, self.cfg.horizon, scenario.dt, scenario.v_max)
    }

    /// Centerline reference poses used as estimator features, so the
    /// features carry the cross-track offset.
    pub fn feature_slice(&self, scenario: &Scenario, state: &VehicleState) -> Vec<VehicleState> {
        reference_slice(&scenario.route.centerline, state, self.cfg.horizon, scenario.dt, scenario.v_max)
    }

    /// Desired trajectory for `d`, then one NMPC tick toward it.
    pub fn plan(
        &mut self,
        ctx: &ControlContext,
        d: SceneDynamics,
        slice: &[VehicleState],
    ) -> Result<ControlDecision, ControllerError> {
        let scenario = ctx.scenario;
        let desired = desired_trajectory(
            slice,
            &d,
            &ctx.state,
            ctx.last_control.v_cmd,
            self.cfg.horizon,
            scenario.dt,
            &self.cfg.projection,
        )?;
        let residual = residual_h(&d, &self.cfg.residual, ctx.state.rho);
        let gains = gain_schedule(&d, self.cfg.eps_r);
        let cfg = self.cfg;
        let tracker = self.tracker.get_or_insert_with(|| NmpcTracker::new(cfg.nmpc(scenario)));
        let u = tracker.track(ctx.state, &desired, residual, gains, ctx.last_control)?;
        Ok(ControlDecision {
            control: u,
            scene: Some(d),
            desired: Some(desired),
        })
    }
}

impl Controller for LvdController {
    fn name(&self) -> &str {
        "lvd-nmpc"
    }

    fn history(&self) -> usize {
        self.cfg.history
    }

    fn reset(&mut self, scenario: &Scenario) {
        self.tracker = Some(NmpcTracker::new(self.cfg.nmpc(scenario)));
    }

    fn control(&mut self, ctx: &ControlContext) -> Result<ControlDecision, ControllerError> {
        let slice = self.slice(ctx.scenario, &ctx.state);
        let d = match &self.source {
            SceneSource::Fixed(d) => *d,
            SceneSource::Learned(policy) => {
                let features = self.cfg.features(ctx.scenario);
                policy.check_features(&features).map_err(|e| ControllerError(e.to_string()))?;
                let window = ctx.memory.window(self.cfg.history);
                let s = featurize(&window, &self.feature_slice(ctx.scenario, &ctx.state), &features).map_err(|e| ControllerError(e.to_string()))?;
                select_dynamics(&policy.net, &policy.candidates, &s, self.epsilon, &mut self.rng)
                    .map_err(|e| ControllerError(e.to_string()))?
                    .1
            }
        };
        self.plan(ctx, d, &slice)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{run_trial, Status, TrialOptions};

    #[test]
    fn fixed_dynamics_clears_straight_corridor() {
        let mut s = Scenario::along("straight", vec![[0.0, 0.0], [15.0, 0.0]], 1.5);
        s.dt = 0.1;
        s.time_limit = 30.0;
        let mut c = LvdController::fixed(LvdConfig::default(), SceneDynamics::new(0.0, 1.0));
        let out = run_trial(&s, &mut c, 1, &TrialOptions::default());
        assert_eq!(out.status, Status::Goal, "{:?}", out.log.last());
        assert_eq!(out.controller_failures, 0);
        let lim = s.limits();
        let mut prev = ControlInput::ZERO;
        for r in &out.log {
            let u = r.control();
            assert!(lim.admits(Some(&prev), &u, s.dt));
            prev = u;
        }
    }
}
