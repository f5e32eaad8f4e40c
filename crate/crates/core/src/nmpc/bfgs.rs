//! Dense BFGS with Armijo backtracking.
//!
//! Small problems only (a few dozen variables): the inverse Hessian
//! approximation is stored as a full row-major matrix.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfgsOptions {
    pub max_iters: usize,
    pub grad_tol: f64,
    /// Sufficient-decrease constant of the Armijo test.
    pub armijo_c1: f64,
    pub max_backtracks: usize,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iters: 200,
            grad_tol: 1e-6,
            armijo_c1: 1e-4,
            max_backtracks: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BfgsStatus {
    Converged,
    MaxIterations,
    /// No step along the search direction decreased the objective.
    LineSearchFailed,
    NonFinite,
}

#[derive(Debug, Clone)]
pub struct BfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub status: BfgsStatus,
    /// Objective value at the start and after every accepted step.
    pub history: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Minimize `f` from `x0`. `f(x, grad)` returns the value and writes the
/// gradient. Every accepted iterate satisfies the Armijo condition, so the
/// sequence of accepted values is non-increasing.
pub fn minimize<F>(mut f: F, x0: Vec<f64>, opts: &BfgsOptions) -> BfgsResult
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return BfgsResult {
            grad_norm: f64::NAN,
            x,
            value: fx,
            iterations: 0,
            status: BfgsStatus::NonFinite,
            history: vec![fx],
        };
    }

    let mut h = identity(n);
    let mut scaled = false;
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut dir = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut hy = vec![0.0; n];
    let mut iterations = 0;
    let mut status = BfgsStatus::MaxIterations;
    let mut history = vec![fx];

    loop {
        let gn = norm(&g);
        if gn < opts.grad_tol {
            status = BfgsStatus::Converged;
            break;
        }
        if iterations >= opts.max_iters {
            break;
        }

        mat_vec(&h, &g, &mut dir);
        dir.iter_mut().for_each(|d| *d = -*d);
        let mut slope = dot(&g, &dir);
        if slope >= 0.0 {
            // lost positive definiteness; restart from steepest descent
            h = identity(n);
            scaled = false;
            dir.iter_mut().zip(&g).for_each(|(d, gi)| *d = -gi);
            slope = -gn * gn;
        }

        let mut alpha = if scaled { 1.0 } else { (1.0 / gn).min(1.0) };
        let mut accepted = false;
        let mut f_new = f64::NAN;
        for _ in 0..opts.max_backtracks {
            for i in 0..n {
                x_new[i] = x[i] + alpha * dir[i];
            }
            f_new = f(&x_new, &mut g_new);
            if f_new.is_finite() && f_new <= fx + opts.armijo_c1 * alpha * slope {
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            status = if f_new.is_finite() {
                BfgsStatus::LineSearchFailed
            } else {
                BfgsStatus::NonFinite
            };
            break;
        }
        if g_new.iter().any(|v| !v.is_finite()) {
            status = BfgsStatus::NonFinite;
            break;
        }

        for i in 0..n {
            s[i] = x_new[i] - x[i];
            y[i] = g_new[i] - g[i];
        }
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) && sy > 0.0 {
            if !scaled {
                let gamma = sy / dot(&y, &y);
                h.iter_mut().for_each(|v| *v *= gamma);
                scaled = true;
            }
            bfgs_update(&mut h, &s, &y, sy, &mut hy);
        }

        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        fx = f_new;
        history.push(fx);
        iterations += 1;
    }

    BfgsResult {
        grad_norm: norm(&g),
        x,
        value: fx,
        iterations,
        status,
        history,
    }
}

fn identity(n: usize) -> Vec<f64> {
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
    h
}

fn mat_vec(h: &[f64], v: &[f64], out: &mut [f64]) {
    let n = v.len();
    for i in 0..n {
        out[i] = dot(&h[i * n..(i + 1) * n], v);
    }
}

/// `H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T`, expanded as
/// `H + ((sy + y^T H y) / sy^2) s s^T - (H y s^T + s y^T H) / sy`.
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64, hy: &mut [f64]) {
    let n = s.len();
    mat_vec(h, y, hy);
    let yhy = dot(y, hy);
    let a = (sy + yhy) / (sy * sy);
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += a * s[i] * s[j] - (hy[i] * s[j] + s[i] * hy[j]) / sy;
        }
    }
}
