//! Scene-dynamics algebra.
//!
//! A scene is summarized by `(c, w)`: the road curvature and a normalized
//! traversable width. This module converts between `(c, w)` and trajectories,
//! builds the desired trajectory handed to the NMPC, evaluates the residual
//! correction `h` and schedules the NMPC weights from `w`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::normalize_angle;
use crate::vehicle::{StateIncrement, VehicleState};

#[derive(Debug, Error, PartialEq)]
pub enum VisionError {
    #[error("reference slice has {got} poses, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("curvature fit needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("degenerate curvature fit: points do not span the longitudinal axis")]
    DegenerateFit,
    #[error("maximum velocity must be positive")]
    NonPositiveVmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SceneDynamics {
    /// Road curvature, 1/m.
    pub c: f64,
    /// Traversable width in `[0, 1]`; 0 means stop.
    pub w: f64,
}

impl SceneDynamics {
    /// `w` is clamped into `[0, 1]`.
    pub fn new(c: f64, w: f64) -> Self {
        Self {
            c,
            w: w.clamp(0.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesiredTrajectory {
    pub states: Vec<VehicleState>,
    pub horizon_dt: f64,
}

impl DesiredTrajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Every sample at `pose`: the stop trajectory.
    pub fn hold(pose: VehicleState, horizon: usize, horizon_dt: f64) -> Self {
        Self {
            states: vec![pose; horizon],
            horizon_dt,
        }
    }
}

/// Weights of the residual model `h(c, w)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualWeights {
    /// Heading correction per unit curvature, rad per (1/m).
    pub k_c: f64,
    /// Lateral correction per unit width, m.
    pub k_w: f64,
    /// Longitudinal correction per unit width, m.
    pub k_v: f64,
}

impl Default for ResidualWeights {
    fn default() -> Self {
        Self {
            k_c: 0.05,
            k_w: 0.02,
            k_v: 0.0,
        }
    }
}

/// Diagonal values of the NMPC state and input weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainSchedule {
    pub q_diag: f64,
    pub r_diag: f64,
}

pub const DEFAULT_EPS_R: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionConfig {
    /// Meters of lateral offset per unit of `w`.
    pub lateral_scale: f64,
    /// The lookahead distance is the current speed times this, seconds.
    pub lookahead_time: f64,
    /// Floor on the lookahead distance, meters.
    pub min_lookahead: f64,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self {
            lateral_scale: 1.0,
            lookahead_time: 3.0,
            min_lookahead: 0.5,
        }
    }
}

impl ProjectionConfig {
    pub fn lookahead(&self, speed: f64) -> f64 {
        (speed.abs() * self.lookahead_time).max(self.min_lookahead)
    }
}

/// Lateral offsets of the projected path at longitudinal offsets `xs`:
/// `y = k_lat * w - rho * (x - l) + c * x^2 / 2`.
pub fn project_path(d: &SceneDynamics, rho: f64, lookahead: f64, xs: &[f64], lateral_scale: f64) -> Vec<f64> {
    xs.iter()
        .map(|&x| lateral_scale * d.w - rho * (x - lookahead) + 0.5 * d.c * x * x)
        .collect()
}

/// Slope `dy/dx` of the projected path.
fn project_slope(d: &SceneDynamics, rho: f64, x: f64) -> f64 {
    -rho + d.c * x
}

/// Reference slice plus the projected correction.
///
/// Longitudinal offsets are measured in the vehicle frame, the lateral
/// correction is applied along the vehicle's left normal and the heading
/// correction is the slope angle of the projected path. The heading fed to
/// the projection is the reference heading relative to the vehicle.
pub fn desired_trajectory(
    ref_slice: &[VehicleState],
    d: &SceneDynamics,
    current: &VehicleState,
    speed: f64,
    horizon: usize,
    horizon_dt: f64,
    cfg: &ProjectionConfig,
) -> Result<DesiredTrajectory, VisionError> {
    if ref_slice.len() != horizon {
        return Err(VisionError::LengthMismatch {
            expected: horizon,
            got: ref_slice.len(),
        });
    }
    let Some(first) = ref_slice.first() else {
        return Ok(DesiredTrajectory {
            states: Vec::new(),
            horizon_dt,
        });
    };
    let rho_rel = normalize_angle(first.rho - current.rho);
    let lookahead = cfg.lookahead(speed);
    let xs: Vec<f64> = ref_slice
        .iter()
        .map(|z| current.to_local(z.position())[0])
        .collect();
    let ys = project_path(d, rho_rel, lookahead, &xs, cfg.lateral_scale);
    let (s, c) = current.rho.sin_cos();
    let states = ref_slice
        .iter()
        .zip(xs.iter().zip(&ys))
        .map(|(z, (&x, &y))| VehicleState {
            x: z.x - s * y,
            y: z.y + c * y,
            rho: normalize_angle(z.rho + project_slope(d, rho_rel, x).atan()),
        })
        .collect();
    Ok(DesiredTrajectory { states, horizon_dt })
}

/// Residual increment `h(c, w)` expressed in the world frame for a vehicle
/// heading `heading`.
pub fn residual_h(d: &SceneDynamics, kw: &ResidualWeights, heading: f64) -> StateIncrement {
    let local_x = kw.k_v * d.w;
    let local_y = kw.k_w * d.w;
    let (s, c) = heading.sin_cos();
    StateIncrement {
        dx: c * local_x - s * local_y,
        dy: s * local_x + c * local_y,
        drho: kw.k_c * d.c,
    }
}

/// Least-squares `y = a0 + a1 x + a2 x^2` through points given in some frame;
/// returns `[a0, a1, a2]`.
pub fn fit_quadratic(points: &[[f64; 2]]) -> Result<[f64; 3], VisionError> {
    if points.len() < 3 {
        return Err(VisionError::TooFewPoints(points.len()));
    }
    // center and scale x for conditioning, then map coefficients back
    let n = points.len() as f64;
    let mean = points.iter().map(|p| p[0]).sum::<f64>() / n;
    let scale = points
        .iter()
        .map(|p| (p[0] - mean).abs())
        .fold(0.0, f64::max);
    if !(scale > 1e-9) {
        return Err(VisionError::DegenerateFit);
    }
    let mut ata = [[0.0; 3]; 3];
    let mut atb = [0.0; 3];
    for p in points {
        let t = (p[0] - mean) / scale;
        let basis = [1.0, t, t * t];
        for i in 0..3 {
            atb[i] += basis[i] * p[1];
            for j in 0..3 {
                ata[i][j] += basis[i] * basis[j];
            }
        }
    }
    let b = solve3(ata, atb).ok_or(VisionError::DegenerateFit)?;
    // y = b0 + b1 t + b2 t^2 with t = (x - m) / s
    let a2 = b[2] / (scale * scale);
    let a1 = b[1] / scale - 2.0 * a2 * mean;
    let a0 = b[0] - b[1] * mean / scale + a2 * mean * mean;
    Ok([a0, a1, a2])
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-10 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let mut acc = b[row];
        for k in row + 1..3 {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Some(x)
}

/// Curvature `2 * a2` of the quadratic fit in the first pose's frame.
pub fn trajectory_curvature(traj: &[VehicleState]) -> Result<f64, VisionError> {
    if traj.len() < 3 {
        return Err(VisionError::TooFewPoints(traj.len()));
    }
    let origin = traj[0];
    let local: Vec<[f64; 2]> = traj.iter().map(|z| origin.to_local(z.position())).collect();
    Ok(2.0 * fit_quadratic(&local)?[2])
}

/// `(c, w)` of a trajectory driven at speed `v`.
pub fn dynamics_from_trajectory(traj: &[VehicleState], v: f64, v_max: f64) -> Result<SceneDynamics, VisionError> {
    if !(v_max > 0.0) {
        return Err(VisionError::NonPositiveVmax);
    }
    let c = trajectory_curvature(traj)?;
    Ok(SceneDynamics::new(c, v / v_max))
}

/// `diag(Q) = w`, `diag(R) = max(1 - w, eps_r)`.
pub fn gain_schedule(d: &SceneDynamics, eps_r: f64) -> GainSchedule {
    let w = d.w.clamp(0.0, 1.0);
    GainSchedule {
        q_diag: w,
        r_diag: (1.0 - w).max(eps_r),
    }
}
