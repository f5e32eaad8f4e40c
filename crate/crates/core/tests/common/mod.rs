//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use lvd_nmpc::geometry::normalize_angle;
use lvd_nmpc::vehicle::{ControlInput, VehicleState};

/// Plain bicycle step written out independently of the library.
pub fn euler_step(z: [f64; 3], v: f64, w: f64, dt: f64, wheelbase: f64) -> [f64; 3] {
    [
        z[0] + dt * v * (z[2] + w).cos(),
        z[1] + dt * v * (z[2] + w).sin(),
        z[2] + dt * v * w.sin() / wheelbase,
    ]
}

pub fn step_cost(z: [f64; 3], zd: &VehicleState, u: [f64; 2], q: f64, r: f64) -> f64 {
    let ex = zd.x - z[0];
    let ey = zd.y - z[1];
    let er = normalize_angle(zd.rho - z[2]);
    q * (ex * ex + ey * ey + er * er) + r * (u[0] * u[0] + u[1] * u[1])
}

/// Exhaustive minimum of the tracking cost over `levels` x `levels` controls
/// per step, by depth-first enumeration.
pub fn brute_force_min(
    start: &VehicleState,
    desired: &[VehicleState],
    v_levels: &[f64],
    w_levels: &[f64],
    q: f64,
    r: f64,
    dt: f64,
    wheelbase: f64,
) -> (f64, Vec<ControlInput>) {
    fn recurse(
        z: [f64; 3],
        depth: usize,
        acc: f64,
        desired: &[VehicleState],
        v_levels: &[f64],
        w_levels: &[f64],
        params: (f64, f64, f64, f64),
        path: &mut Vec<ControlInput>,
        best: &mut (f64, Vec<ControlInput>),
    ) {
        if acc >= best.0 {
            return;
        }
        if depth == desired.len() {
            *best = (acc, path.clone());
            return;
        }
        let (q, r, dt, l) = params;
        for &v in v_levels {
            for &w in w_levels {
                let next = euler_step(z, v, w, dt, l);
                let c = step_cost(next, &desired[depth], [v, w], q, r);
                path.push(ControlInput::new(v, w));
                recurse(next, depth + 1, acc + c, desired, v_levels, w_levels, params, path, best);
                path.pop();
            }
        }
    }
    let mut best = (f64::INFINITY, Vec::new());
    let mut path = Vec::new();
    recurse(
        [start.x, start.y, start.rho],
        0,
        0.0,
        desired,
        v_levels,
        w_levels,
        (q, r, dt, wheelbase),
        &mut path,
        &mut best,
    );
    best
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Central finite-difference gradient.
pub fn central_difference<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = xp[i];
            xp[i] = orig + h;
            let fp = f(&xp);
            xp[i] = orig - h;
            let fm = f(&xp);
            xp[i] = orig;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}
