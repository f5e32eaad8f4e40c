//! Constrained receding-horizon controller.
//!
//! Single shooting: the decision variables are the control sequence, states
//! come from rolling the nominal model (plus a constant residual) forward.
//! The quadratic tracking cost is augmented with quadratic penalties for
//! actuator, actuator-rate and cross-track bound violations and minimized
//! with BFGS. Actuator and rate bounds are then enforced exactly by
//! projecting the final iterate; the cross-track corridor stays soft.

pub mod bfgs;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::normalize_angle;
use crate::vehicle::{rollout_constant_residual, ControlInput, ModelParams, StateIncrement, VehicleState};
use crate::vision::{DesiredTrajectory, GainSchedule};
use bfgs::{BfgsOptions, BfgsStatus};

#[derive(Debug, Error, PartialEq)]
pub enum NmpcError {
    #[error("desired trajectory has {got} samples, horizon is {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("non-finite cost or gradient during optimization")]
    NonFinite { last_feasible: Vec<ControlInput> },
    #[error("invalid controller configuration: {0}")]
    InvalidConfig(&'static str),
}

/// Actuator and actuator-rate bounds. Rates are per second.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActuatorLimits {
    pub u_min: ControlInput,
    pub u_max: ControlInput,
    pub du_min: ControlInput,
    pub du_max: ControlInput,
}

impl Default for ActuatorLimits {
    fn default() -> Self {
        Self {
            u_min: ControlInput::new(0.0, -0.5),
            u_max: ControlInput::new(2.0, 0.5),
            du_min: ControlInput::new(-4.0, -3.0),
            du_max: ControlInput::new(2.0, 3.0),
        }
    }
}

fn components(u: &ControlInput) -> [f64; 2] {
    [u.v_cmd, u.omega_cmd]
}

fn from_components(c: [f64; 2]) -> ControlInput {
    ControlInput::new(c[0], c[1])
}

impl ActuatorLimits {
    pub fn validate(&self) -> Result<(), NmpcError> {
        let (lo, hi) = (components(&self.u_min), components(&self.u_max));
        let (dlo, dhi) = (components(&self.du_min), components(&self.du_max));
        for i in 0..2 {
            if !(lo[i] < hi[i]) {
                return Err(NmpcError::InvalidConfig("u_min must be below u_max"));
            }
            if !(dlo[i] <= 0.0 && dhi[i] >= 0.0) {
                return Err(NmpcError::InvalidConfig("rate bounds must bracket zero"));
            }
        }
        Ok(())
    }

    /// Interval admissible for the next control given the previous one.
    fn interval(&self, prev: Option<&ControlInput>, dt: f64, i: usize) -> (f64, f64) {
        let mut lo = components(&self.u_min)[i];
        let mut hi = components(&self.u_max)[i];
        if let Some(p) = prev {
            let p = components(p)[i];
            lo = lo.max(p + components(&self.du_min)[i] * dt);
            hi = hi.min(p + components(&self.du_max)[i] * dt);
        }
        (lo, hi)
    }

    pub fn within_bounds(&self, u: &ControlInput) -> bool {
        let (lo, hi, v) = (components(&self.u_min), components(&self.u_max), components(u));
        (0..2).all(|i| v[i] >= lo[i] && v[i] <= hi[i])
    }

    /// Exact rate check, evaluated with the same arithmetic as [`project`].
    ///
    /// [`project`]: ActuatorLimits::project
    pub fn rate_admits(&self, prev: &ControlInput, next: &ControlInput, dt: f64) -> bool {
        let (p, n) = (components(prev), components(next));
        let (dlo, dhi) = (components(&self.du_min), components(&self.du_max));
        (0..2).all(|i| n[i] >= p[i] + dlo[i] * dt && n[i] <= p[i] + dhi[i] * dt)
    }

    pub fn admits(&self, prev: Option<&ControlInput>, next: &ControlInput, dt: f64) -> bool {
        self.within_bounds(next) && prev.is_none_or(|p| self.rate_admits(p, next, dt))
    }

    /// Closest admissible control to `u`.
    pub fn project(&self, prev: Option<&ControlInput>, u: &ControlInput, dt: f64) -> ControlInput {
        let v = components(u);
        let mut out = [0.0; 2];
        for i in 0..2 {
            let (lo, hi) = self.interval(prev, dt, i);
            out[i] = v[i].max(lo).min(hi);
        }
        from_components(out)
    }

    /// Sequential projection; element 0 is rate-limited against `prev`.
    pub fn project_sequence(&self, prev: Option<&ControlInput>, seq: &[ControlInput], dt: f64) -> Vec<ControlInput> {
        let mut out: Vec<ControlInput> = Vec::with_capacity(seq.len());
        for u in seq {
            let p = out.last().or(prev);
            let projected = self.project(p, u, dt);
            out.push(projected);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NmpcConfig {
    /// Prediction horizon, steps.
    pub horizon: usize,
    /// Controller sampling time, seconds.
    pub dt: f64,
    /// Wheelbase of the prediction model, meters.
    pub wheelbase: f64,
    pub limits: ActuatorLimits,
    /// Soft cross-track corridor, meters.
    pub e_min: f64,
    pub e_max: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub penalty_weight: f64,
    /// Outer rounds of penalty doubling.
    pub penalty_rounds: usize,
}

impl Default for NmpcConfig {
    fn default() -> Self {
        Self {
            horizon: 20,
            dt: 0.05,
            wheelbase: 0.36,
            limits: ActuatorLimits::default(),
            e_min: -1.0,
            e_max: 1.0,
            max_iters: 200,
            grad_tol: 1e-6,
            penalty_weight: 1e3,
            penalty_rounds: 3,
        }
    }
}

impl NmpcConfig {
    pub fn validate(&self) -> Result<(), NmpcError> {
        if self.horizon == 0 {
            return Err(NmpcError::InvalidConfig("horizon must be at least 1"));
        }
        if !(self.dt > 0.0) || !(self.wheelbase > 0.0) {
            return Err(NmpcError::InvalidConfig("dt and wheelbase must be positive"));
        }
        if !(self.penalty_weight > 0.0) {
            return Err(NmpcError::InvalidConfig("penalty weight must be positive"));
        }
        if !(self.e_min <= self.e_max) {
            return Err(NmpcError::InvalidConfig("e_min must not exceed e_max"));
        }
        self.limits.validate()
    }

    pub fn model(&self) -> ModelParams {
        ModelParams {
            wheelbase: self.wheelbase,
            dt: self.dt,
            sigma_f: 0.0,
        }
    }
}

/// Everything that varies between consecutive solves.
#[derive(Debug, Clone, Copy)]
pub struct NmpcProblem<'a> {
    pub current: VehicleState,
    pub desired: &'a DesiredTrajectory,
    /// Per-step residual added to the nominal prediction.
    pub residual: StateIncrement,
    pub gains: GainSchedule,
    /// Control applied on the previous tick, for the first rate constraint.
    pub last_applied: Option<ControlInput>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmpcSolution {
    pub u_opt: Vec<ControlInput>,
    pub z_opt: Vec<VehicleState>,
    /// Unpenalized quadratic tracking cost of `(z_opt, u_opt)`.
    pub cost: f64,
    /// Penalized objective at the final penalty weight.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl NmpcSolution {
    /// Drop the applied element and repeat the last one.
    pub fn shifted(&self) -> NmpcSolution {
        let shift = |v: &[ControlInput]| {
            let mut out: Vec<ControlInput> = v.iter().skip(1).copied().collect();
            if let Some(last) = v.last() {
                out.push(*last);
            }
            out
        };
        let mut z: Vec<VehicleState> = self.z_opt.iter().skip(1).copied().collect();
        if let Some(last) = self.z_opt.last() {
            z.push(*last);
        }
        NmpcSolution {
            u_opt: shift(&self.u_opt),
            z_opt: z,
            ..self.clone()
        }
    }
}

/// `sum_k q |z_d,k - z_k|^2 + r |u_k|^2` with the heading error wrapped.
pub fn tracking_cost(
    z_seq: &[VehicleState],
    u_seq: &[ControlInput],
    desired: &DesiredTrajectory,
    g: &GainSchedule,
) -> Result<f64, NmpcError> {
    let n = desired.len();
    for len in [z_seq.len(), u_seq.len()] {
        if len != n {
            return Err(NmpcError::LengthMismatch { expected: n, got: len });
        }
    }
    let mut j = 0.0;
    for ((z, zd), u) in z_seq.iter().zip(&desired.states).zip(u_seq) {
        let ex = zd.x - z.x;
        let ey = zd.y - z.y;
        let er = normalize_angle(zd.rho - z.rho);
        j += g.q_diag * (ex * ex + ey * ey + er * er) + g.r_diag * (u.v_cmd * u.v_cmd + u.omega_cmd * u.omega_cmd);
    }
    Ok(j)
}

fn pack(u: &[ControlInput]) -> Vec<f64> {
    u.iter().flat_map(|c| [c.v_cmd, c.omega_cmd]).collect()
}

fn unpack(x: &[f64]) -> Vec<ControlInput> {
    x.chunks_exact(2).map(|c| ControlInput::new(c[0], c[1])).collect()
}

#[inline]
fn excess(v: f64, lo: f64, hi: f64) -> f64 {
    if v > hi {
        v - hi
    } else if v < lo {
        v - lo
    } else {
        0.0
    }
}

/// Penalized single-shooting objective over a flattened control sequence.
pub struct Objective<'a> {
    problem: &'a NmpcProblem<'a>,
    cfg: &'a NmpcConfig,
    model: ModelParams,
    penalty: f64,
    include_tracking_penalties: bool,
    states: Vec<VehicleState>,
    adjoint: Vec<[f64; 3]>,
}

impl<'a> Objective<'a> {
    pub fn new(problem: &'a NmpcProblem<'a>, cfg: &'a NmpcConfig, penalty: f64) -> Self {
        let n = cfg.horizon;
        Self {
            problem,
            cfg,
            model: cfg.model(),
            penalty,
            include_tracking_penalties: true,
            states: Vec::with_capacity(n + 1),
            adjoint: vec![[0.0; 3]; n + 1],
        }
    }

    /// The bare tracking cost, without constraint penalties.
    pub fn tracking_only(problem: &'a NmpcProblem<'a>, cfg: &'a NmpcConfig) -> Self {
        let mut o = Self::new(problem, cfg, 0.0);
        o.include_tracking_penalties = false;
        o
    }

    pub fn dim(&self) -> usize {
        2 * self.cfg.horizon
    }

    /// Value at `x`; writes the gradient into `grad`.
    pub fn eval(&mut self, x: &[f64], grad: &mut [f64]) -> f64 {
        let n = self.cfg.horizon;
        let dt = self.model.dt;
        let inv_l = 1.0 / self.model.wheelbase;
        let res = self.problem.residual;
        let g = self.problem.gains;
        let lim = &self.cfg.limits;
        let mu = if self.include_tracking_penalties { self.penalty } else { 0.0 };
        let desired = &self.problem.desired.states;

        self.states.clear();
        self.states.push(self.problem.current);
        for k in 0..n {
            let z = self.states[k];
            let (v, w) = (x[2 * k], x[2 * k + 1]);
            let heading = z.rho + w;
            // heading left unwrapped inside the objective; errors are wrapped
            self.states.push(VehicleState {
                x: z.x + dt * v * heading.cos() + res.dx,
                y: z.y + dt * v * heading.sin() + res.dy,
                rho: z.rho + dt * v * w.sin() * inv_l + res.drho,
            });
        }

        grad.iter_mut().for_each(|v| *v = 0.0);
        let mut cost = 0.0;

        // state terms and the adjoint seeds dJ/dz_k
        for k in 1..=n {
            let z = self.states[k];
            let zd = desired[k - 1];
            let ex = z.x - zd.x;
            let ey = z.y - zd.y;
            let er = normalize_angle(z.rho - zd.rho);
            cost += g.q_diag * (ex * ex + ey * ey + er * er);
            let mut seed = [2.0 * g.q_diag * ex, 2.0 * g.q_diag * ey, 2.0 * g.q_diag * er];
            if mu > 0.0 {
                let (s, c) = zd.rho.sin_cos();
                let lateral = -s * ex + c * ey;
                let e = excess(lateral, self.cfg.e_min, self.cfg.e_max);
                if e != 0.0 {
                    cost += mu * e * e;
                    seed[0] += 2.0 * mu * e * -s;
                    seed[1] += 2.0 * mu * e * c;
                }
            }
            self.adjoint[k] = seed;
        }

        // backward sweep through the dynamics
        for k in (0..n).rev() {
            let z = self.states[k];
            let (v, w) = (x[2 * k], x[2 * k + 1]);
            let heading = z.rho + w;
            let (sh, ch) = heading.sin_cos();
            let (sw, cw) = w.sin_cos();
            let lam = self.adjoint[k + 1];
            grad[2 * k] += lam[0] * dt * ch + lam[1] * dt * sh + lam[2] * dt * sw * inv_l;
            grad[2 * k + 1] += -lam[0] * dt * v * sh + lam[1] * dt * v * ch + lam[2] * dt * v * cw * inv_l;
            if k > 0 {
                let seed = self.adjoint[k];
                self.adjoint[k] = [
                    seed[0] + lam[0],
                    seed[1] + lam[1],
                    seed[2] + lam[2] - lam[0] * dt * v * sh + lam[1] * dt * v * ch,
                ];
            }
        }

        // input terms
        let lo = components(&lim.u_min);
        let hi = components(&lim.u_max);
        let dlo = components(&lim.du_min);
        let dhi = components(&lim.du_max);
        for k in 0..n {
            for i in 0..2 {
                let u = x[2 * k + i];
                cost += g.r_diag * u * u;
                grad[2 * k + i] += 2.0 * g.r_diag * u;
                if mu > 0.0 {
                    let e = excess(u, lo[i], hi[i]);
                    if e != 0.0 {
                        cost += mu * e * e;
                        grad[2 * k + i] += 2.0 * mu * e;
                    }
                    let prev = if k == 0 {
                        self.problem.last_applied.map(|p| components(&p)[i])
                    } else {
                        Some(x[2 * (k - 1) + i])
                    };
                    if let Some(p) = prev {
                        let e = excess(u - p, dlo[i] * dt, dhi[i] * dt);
                        if e != 0.0 {
                            cost += mu * e * e;
                            grad[2 * k + i] += 2.0 * mu * e;
                            if k > 0 {
                                grad[2 * (k - 1) + i] -= 2.0 * mu * e;
                            }
                        }
                    }
                }
            }
        }
        cost
    }

    /// Value only.
    pub fn value(&mut self, x: &[f64]) -> f64 {
        let mut g = vec![0.0; x.len()];
        self.eval(x, &mut g)
    }
}

fn violates(problem: &NmpcProblem, cfg: &NmpcConfig, u: &[ControlInput], z: &[VehicleState]) -> bool {
    const TOL: f64 = 1e-6;
    let lim = &cfg.limits;
    for (k, uk) in u.iter().enumerate() {
        let prev = if k == 0 { problem.last_applied } else { Some(u[k - 1]) };
        let relaxed = lim.project(prev.as_ref(), uk, cfg.dt);
        if (relaxed.v_cmd - uk.v_cmd).abs() > TOL || (relaxed.omega_cmd - uk.omega_cmd).abs() > TOL {
            return true;
        }
    }
    z.iter().zip(&problem.desired.states).any(|(zk, zd)| {
        let (s, c) = zd.rho.sin_cos();
        let lateral = -s * (zk.x - zd.x) + c * (zk.y - zd.y);
        lateral > cfg.e_max + TOL || lateral < cfg.e_min - TOL
    })
}

/// Solve the constrained finite-horizon problem.
pub fn solve(
    problem: &NmpcProblem,
    cfg: &NmpcConfig,
    warm_start: Option<&NmpcSolution>,
) -> Result<NmpcSolution, NmpcError> {
    cfg.validate()?;
    let n = cfg.horizon;
    if problem.desired.len() != n {
        return Err(NmpcError::LengthMismatch {
            expected: n,
            got: problem.desired.len(),
        });
    }
    let model = cfg.model();
    let prev = problem.last_applied;
    let lim = &cfg.limits;

    let initial: Vec<ControlInput> = match warm_start {
        Some(ws) if ws.u_opt.len() == n => ws.u_opt.clone(),
        _ => vec![ControlInput::ZERO; n],
    };
    let initial = lim.project_sequence(prev.as_ref(), &initial, cfg.dt);

    let opts = BfgsOptions {
        max_iters: cfg.max_iters,
        grad_tol: cfg.grad_tol,
        ..Default::default()
    };

    let mut mu = cfg.penalty_weight;
    let mut x = pack(&initial);
    let mut iterations = 0;
    let mut converged = false;
    for round in 0..cfg.penalty_rounds.max(1) {
        let mut obj = Objective::new(problem, cfg, mu);
        let res = bfgs::minimize(|x, g| obj.eval(x, g), x.clone(), &opts);
        iterations += res.iterations;
        if res.status == BfgsStatus::NonFinite {
            return Err(NmpcError::NonFinite {
                last_feasible: lim.project_sequence(prev.as_ref(), &unpack(&x), cfg.dt),
            });
        }
        converged = res.status == BfgsStatus::Converged;
        x = res.x;
        let u = unpack(&x);
        let z = rollout_constant_residual(&problem.current, &u, &problem.residual, &model);
        if round + 1 == cfg.penalty_rounds.max(1) || !violates(problem, cfg, &u, &z) {
            break;
        }
        mu *= 2.0;
    }

    let mut obj = Objective::new(problem, cfg, mu);
    let candidate = lim.project_sequence(prev.as_ref(), &unpack(&x), cfg.dt);
    let mut best = candidate;
    let mut best_value = obj.value(&pack(&best));
    let initial_value = obj.value(&pack(&initial));
    if !best_value.is_finite() {
        return Err(NmpcError::NonFinite { last_feasible: initial });
    }
    if initial_value < best_value {
        best = initial;
        best_value = initial_value;
    }

    let z_opt = rollout_constant_residual(&problem.current, &best, &problem.residual, &model);
    let cost = tracking_cost(&z_opt, &best, problem.desired, &problem.gains)?;
    Ok(NmpcSolution {
        u_opt: best,
        z_opt,
        cost,
        objective: best_value,
        iterations,
        converged,
    })
}

/// One receding-horizon tick: the first optimal control and the shifted
/// solution for warm-starting the next tick.
pub fn control_step(
    problem: &NmpcProblem,
    cfg: &NmpcConfig,
    warm_start: Option<&NmpcSolution>,
) -> Result<(ControlInput, NmpcSolution), NmpcError> {
    let sol = solve(problem, cfg, warm_start)?;
    let u = sol.u_opt[0];
    Ok((u, sol.shifted()))
}
