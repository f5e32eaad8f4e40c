//! Kinematic bicycle process model.
//!
//! The nominal model advances the planar pose `(x, y, rho)` by one explicit
//! Euler step of the no-slip bicycle model, with `omega_cmd` the slip angle of
//! the velocity vector relative to the body axis:
//!
//! ```text
//! x'   = x   + dt * v * cos(rho + omega)
//! y'   = y   + dt * v * sin(rho + omega)
//! rho' = rho + dt * v * sin(omega) / L
//! ```
//!
//! The "true" step adds an externally supplied residual increment and
//! per-axis Gaussian noise on top of the nominal step.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::normalize_angle;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("control sequence has {controls} elements but residual sequence has {residuals}")]
    LengthMismatch { controls: usize, residuals: usize },
    #[error("invalid model parameters: {0}")]
    InvalidParams(&'static str),
}

/// Planar vehicle pose. Heading is kept in `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub rho: f64,
}

impl VehicleState {
    pub fn new(x: f64, y: f64, rho: f64) -> Self {
        Self {
            x,
            y,
            rho: normalize_angle(rho),
        }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.rho.is_finite()
    }

    /// Express a world point in this pose's body frame (x forward, y left).
    pub fn to_local(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.rho.sin_cos();
        let dx = p[0] - self.x;
        let dy = p[1] - self.y;
        [c * dx + s * dy, -s * dx + c * dy]
    }

    /// Map a body-frame point back to world coordinates.
    pub fn to_world(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.rho.sin_cos();
        [self.x + c * p[0] - s * p[1], self.y + s * p[0] + c * p[1]]
    }
}

/// Longitudinal velocity command and steering (slip) angle.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    pub v_cmd: f64,
    pub omega_cmd: f64,
}

impl ControlInput {
    pub const ZERO: ControlInput = ControlInput {
        v_cmd: 0.0,
        omega_cmd: 0.0,
    };

    pub fn new(v_cmd: f64, omega_cmd: f64) -> Self {
        Self { v_cmd, omega_cmd }
    }
}

/// Additive world-frame increment on `(x, y, rho)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StateIncrement {
    pub dx: f64,
    pub dy: f64,
    pub drho: f64,
}

impl StateIncrement {
    pub const ZERO: StateIncrement = StateIncrement {
        dx: 0.0,
        dy: 0.0,
        drho: 0.0,
    };

    pub fn new(dx: f64, dy: f64, drho: f64) -> Self {
        Self { dx, dy, drho }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Distance between front and rear axle, meters.
    pub wheelbase: f64,
    /// Sampling time, seconds.
    pub dt: f64,
    /// Per-axis standard deviation of the additive state noise.
    pub sigma_f: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            wheelbase: 0.36,
            dt: 0.05,
            sigma_f: 0.0,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.wheelbase > 0.0 && self.wheelbase.is_finite()) {
            return Err(ModelError::InvalidParams("wheelbase must be positive"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(ModelError::InvalidParams("dt must be positive"));
        }
        if !(self.sigma_f >= 0.0 && self.sigma_f.is_finite()) {
            return Err(ModelError::InvalidParams("sigma_f must be non-negative"));
        }
        Ok(())
    }
}

/// One Euler step of the nominal bicycle model.
pub fn step_nominal(state: &VehicleState, u: &ControlInput, p: &ModelParams) -> VehicleState {
    let heading = state.rho + u.omega_cmd;
    let ds = p.dt * u.v_cmd;
    VehicleState {
        x: state.x + ds * heading.cos(),
        y: state.y + ds * heading.sin(),
        rho: normalize_angle(state.rho + ds * u.omega_cmd.sin() / p.wheelbase),
    }
}

fn apply_increment(state: &VehicleState, inc: &StateIncrement) -> VehicleState {
    VehicleState {
        x: state.x + inc.dx,
        y: state.y + inc.dy,
        rho: normalize_angle(state.rho + inc.drho),
    }
}

/// Nominal step plus residual plus `N(0, sigma_f^2)` noise on every axis.
///
/// With `sigma_f == 0` no random numbers are drawn, so the result is exactly
/// the nominal step plus the residual.
pub fn step_true<R: Rng + ?Sized>(
    state: &VehicleState,
    u: &ControlInput,
    residual: &StateIncrement,
    p: &ModelParams,
    rng: &mut R,
) -> VehicleState {
    let nominal = step_nominal(state, u, p);
    let mut next = VehicleState {
        x: nominal.x + residual.dx,
        y: nominal.y + residual.dy,
        rho: nominal.rho + residual.drho,
    };
    if p.sigma_f > 0.0 {
        // sigma_f validated non-negative and finite
        let noise = Normal::new(0.0, p.sigma_f).expect("finite sigma");
        next.x += noise.sample(rng);
        next.y += noise.sample(rng);
        next.rho += noise.sample(rng);
    }
    next.rho = normalize_angle(next.rho);
    next
}

/// Noise-free prediction `z[1..=n]` for a control sequence.
///
/// An empty residual sequence is treated as all zeros.
pub fn rollout(
    state: &VehicleState,
    controls: &[ControlInput],
    residuals: &[StateIncrement],
    p: &ModelParams,
) -> Result<Vec<VehicleState>, ModelError> {
    if !residuals.is_empty() && residuals.len() != controls.len() {
        return Err(ModelError::LengthMismatch {
            controls: controls.len(),
            residuals: residuals.len(),
        });
    }
    let mut out = Vec::with_capacity(controls.len());
    let mut z = *state;
    for (k, u) in controls.iter().enumerate() {
        z = step_nominal(&z, u, p);
        if let Some(r) = residuals.get(k) {
            z = apply_increment(&z, r);
        }
        out.push(z);
    }
    Ok(out)
}

/// Rollout with the same increment applied at every step.
pub fn rollout_constant_residual(
    state: &VehicleState,
    controls: &[ControlInput],
    residual: &StateIncrement,
    p: &ModelParams,
) -> Vec<VehicleState> {
    let mut out = Vec::with_capacity(controls.len());
    let mut z = *state;
    for u in controls {
        z = apply_increment(&step_nominal(&z, u, p), residual);
        out.push(z);
    }
    out
}
