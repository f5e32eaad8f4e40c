//! Speed-weighted position error, curvature error and per-method reports.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::{LogRecord, Scenario, Status, TrialOutcome};
use crate::vehicle::VehicleState;
use crate::vision::{trajectory_curvature, VisionError};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no records")]
    Empty,
    #[error("timestamps must increase strictly (row {row})")]
    NonIncreasingTime { row: usize },
    #[error(transparent)]
    Curvature(#[from] VisionError),
    #[error("method {0} has no trials")]
    NoTrials(String),
}

/// One row of an offline dataset: estimated and reference positions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OfflineRecord {
    pub t: f64,
    pub x_est: f64,
    pub y_est: f64,
    pub x_gt: f64,
    pub y_gt: f64,
    pub v: f64,
}

/// `(1/m) * || sum_t (p_est - p_gt) v_t ||_1` over `(p_est, p_gt, v)` samples.
pub fn speed_weighted_error(samples: impl IntoIterator<Item = ([f64; 2], [f64; 2], f64)>) -> Result<f64, MetricsError> {
    let (mut sx, mut sy, mut m) = (0.0, 0.0, 0usize);
    for (est, gt, v) in samples {
        sx += (est[0] - gt[0]) * v;
        sy += (est[1] - gt[1]) * v;
        m += 1;
    }
    if m == 0 {
        return Err(MetricsError::Empty);
    }
    Ok((sx.abs() + sy.abs()) / m as f64)
}

pub fn e_xy(records: &[OfflineRecord]) -> Result<f64, MetricsError> {
    for (i, w) in records.windows(2).enumerate() {
        if !(w[1].t > w[0].t) {
            return Err(MetricsError::NonIncreasingTime { row: i + 1 });
        }
    }
    speed_weighted_error(records.iter().map(|r| ([r.x_est, r.y_est], [r.x_gt, r.y_gt], r.v)))
}

/// `|c_est - c_gt|` from quadratic fits of both trajectories.
pub fn e_curvature(est: &[VehicleState], gt: &[VehicleState]) -> Result<f64, MetricsError> {
    Ok((trajectory_curvature(est)? - trajectory_curvature(gt)?).abs())
}

/// Steps per curvature window in trial logs.
pub const CURVATURE_WINDOW: usize = 10;
/// Windows shorter than this (meters, end to end) are skipped.
pub const MIN_WINDOW_SPAN: f64 = 0.2;

/// Per-trial raw numbers behind a report row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub status: Status,
    pub steps: usize,
    pub speed_sum: f64,
    pub solve_ms_sum: f64,
    /// `None` for trials without logged steps.
    pub e_xy: Option<f64>,
    /// `None` when no window admits a curvature fit.
    pub e_c: Option<f64>,
}

/// Metrics of one trial against its scenario route.
pub fn trial_metrics(status: Status, log: &[LogRecord], scenario: &Scenario) -> TrialMetrics {
    let route = &scenario.route.centerline;
    let projections: Vec<_> = log.iter().map(|r| route.project([r.x_m, r.y_m])).collect();
    let e_xy = speed_weighted_error(
        log.iter()
            .zip(&projections)
            .map(|(r, p)| ([r.x_m, r.y_m], p.point, r.v_cmd)),
    )
    .ok();

    let mut errs = Vec::new();
    for (chunk, proj) in log.chunks(CURVATURE_WINDOW).zip(projections.chunks(CURVATURE_WINDOW)) {
        if chunk.len() < 3 {
            continue;
        }
        let first = chunk.first().unwrap();
        let last = chunk.last().unwrap();
        if crate::geometry::dist([first.x_m, first.y_m], [last.x_m, last.y_m]) < MIN_WINDOW_SPAN {
            continue;
        }
        let driven: Vec<VehicleState> = chunk.iter().map(|r| r.state()).collect();
        let reference: Vec<VehicleState> = proj
            .iter()
            .map(|p| {
                let (_, h) = route.sample(p.arc_length);
                VehicleState::new(p.point[0], p.point[1], h)
            })
            .collect();
        if let Ok(e) = e_curvature(&driven, &reference) {
            errs.push(e);
        }
    }
    let e_c = if errs.is_empty() {
        None
    } else {
        Some(errs.iter().sum::<f64>() / errs.len() as f64)
    };

    TrialMetrics {
        status,
        steps: log.len(),
        speed_sum: log.iter().map(|r| r.v_cmd).sum(),
        solve_ms_sum: log.iter().map(|r| r.solve_ms).sum(),
        e_xy,
        e_c,
    }
}

pub fn outcome_metrics(outcome: &TrialOutcome, scenario: &Scenario) -> TrialMetrics {
    trial_metrics(outcome.status, &outcome.log, scenario)
}

/// One row of the comparison table, columns in report order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub method: String,
    pub crash_pct: f64,
    pub goal_pct: f64,
    pub avg_speed_mps: f64,
    pub e_xy_mean: f64,
    pub e_xy_std: f64,
    pub e_c_mean: f64,
    pub e_c_std: f64,
    pub processing_ms_mean: f64,
    pub timeout_pct: f64,
    pub trials: usize,
}

/// Sum after sorting, so the result does not depend on input order.
fn ordered_sum(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs.iter().sum()
}

/// Mean and sample standard deviation; zeros for empty input and a zero
/// deviation for a single value.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = ordered_sum(xs.to_vec()) / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss = ordered_sum(xs.iter().map(|x| (x - mean) * (x - mean)).collect());
    (mean, (ss / (n - 1) as f64).sqrt())
}

/// Report row for one method over its trials.
pub fn aggregate_method(scenario: &str, method: &str, trials: &[TrialMetrics]) -> Result<MetricsReport, MetricsError> {
    if trials.is_empty() {
        return Err(MetricsError::NoTrials(method.to_string()));
    }
    let n = trials.len() as f64;
    let pct = |s: Status| 100.0 * trials.iter().filter(|t| t.status == s).count() as f64 / n;
    let steps: usize = trials.iter().map(|t| t.steps).sum();
    let per_step = |xs: Vec<f64>| {
        if steps == 0 {
            0.0
        } else {
            ordered_sum(xs) / steps as f64
        }
    };
    let exy: Vec<f64> = trials.iter().filter_map(|t| t.e_xy).collect();
    let ec: Vec<f64> = trials.iter().filter_map(|t| t.e_c).collect();
    let (e_xy_mean, e_xy_std) = mean_std(&exy);
    let (e_c_mean, e_c_std) = mean_std(&ec);
    Ok(MetricsReport {
        scenario: scenario.to_string(),
        method: method.to_string(),
        crash_pct: pct(Status::Crash),
        goal_pct: pct(Status::Goal),
        avg_speed_mps: per_step(trials.iter().map(|t| t.speed_sum).collect()),
        e_xy_mean,
        e_xy_std,
        e_c_mean,
        e_c_std,
        processing_ms_mean: per_step(trials.iter().map(|t| t.solve_ms_sum).collect()),
        timeout_pct: pct(Status::Timeout),
        trials: trials.len(),
    })
}

/// One report row per `(scenario label, method, trials)` group.
pub fn aggregate(groups: &[(String, String, Vec<TrialMetrics>)]) -> Result<Vec<MetricsReport>, MetricsError> {
    if groups.is_empty() {
        return Err(MetricsError::Empty);
    }
    groups
        .iter()
        .map(|(scenario, method, trials)| aggregate_method(scenario, method, trials))
        .collect()
}

/// Notes stored next to every report.
pub fn report_metadata() -> serde_json::Value {
    serde_json::json!({
        "e_xy_normalizer": "m = number of summed samples",
        "e_xy_lookahead": "not used",
        "e_xy_reference": "closest point on the route centerline, weighted by commanded speed",
        "e_c": "mean |c_driven - c_route| over 10-step windows, quadratic fits",
        "std": "sample standard deviation over trials; 0 for a single trial",
        "processing_ms": "wall-clock around the controller call; 0 when timing was off",
    })
}

pub fn reports_to_csv(reports: &[MetricsReport]) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in reports {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn reports_to_json(reports: &[MetricsReport]) -> String {
    serde_json::to_string_pretty(&serde_json::json!({
        "metadata": report_metadata(),
        "reports": reports,
    }))
    .expect("reports serialize")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::Event;
    use crate::vision::{project_path, SceneDynamics};
    use proptest::prelude::*;

    fn rec(t: f64, est: [f64; 2], gt: [f64; 2], v: f64) -> OfflineRecord {
        OfflineRecord {
            t,
            x_est: est[0],
            y_est: est[1],
            x_gt: gt[0],
            y_gt: gt[1],
            v,
        }
    }

    #[test]
    fn e_xy_examples() {
        let same = [rec(0.0, [1.0, 2.0], [1.0, 2.0], 3.0), rec(1.0, [2.0, 2.0], [2.0, 2.0], 3.0)];
        assert_eq!(e_xy(&same).unwrap(), 0.0);
        let two = [rec(0.0, [1.0, 0.0], [0.0, 0.0], 2.0), rec(0.1, [0.0, 1.0], [0.0, 0.0], 1.0)];
        assert_eq!(e_xy(&two).unwrap(), 1.5);
        let still = [rec(0.0, [5.0, 0.0], [0.0, 0.0], 0.0), rec(0.1, [0.0, -3.0], [0.0, 0.0], 0.0)];
        assert_eq!(e_xy(&still).unwrap(), 0.0);
        assert_eq!(e_xy(&[]), Err(MetricsError::Empty));
        let back = [rec(1.0, [0.0, 0.0], [0.0, 0.0], 1.0), rec(1.0, [0.0, 0.0], [0.0, 0.0], 1.0)];
        assert_eq!(e_xy(&back), Err(MetricsError::NonIncreasingTime { row: 1 }));
    }

    proptest! {
        #[test]
        fn e_xy_scales_linearly(
            devs in proptest::collection::vec((-3.0..3.0f64, -3.0..3.0f64, 0.0..2.0f64), 1..20),
            k in 0.0..10.0f64,
        ) {
            let base: Vec<OfflineRecord> = devs.iter().enumerate()
                .map(|(i, &(dx, dy, v))| rec(i as f64, [dx, dy], [0.0, 0.0], v)).collect();
            let scaled: Vec<OfflineRecord> = devs.iter().enumerate()
                .map(|(i, &(dx, dy, v))| rec(i as f64, [k * dx, k * dy], [0.0, 0.0], v)).collect();
            let a = e_xy(&base).unwrap();
            prop_assert!(a >= 0.0);
            prop_assert!((e_xy(&scaled).unwrap() - k * a).abs() <= 1e-9 * (1.0 + k * a));
        }
    }

    fn path(c: f64, offset: f64) -> Vec<VehicleState> {
        let xs: Vec<f64> = (0..12).map(|i| 0.25 * i as f64).collect();
        let ys = project_path(&SceneDynamics::new(c, 0.0), 0.0, 0.0, &xs, 1.0);
        xs.iter().zip(ys).map(|(&x, y)| VehicleState::new(x, y + offset, 0.0)).collect()
    }

    #[test]
    fn curvature_error_examples() {
        assert_eq!(e_curvature(&path(0.3, 0.0), &path(0.3, 0.0)).unwrap(), 0.0);
        assert!((e_curvature(&path(0.3, 0.0), &path(0.1, 0.0)).unwrap() - 0.2).abs() < 1e-6);
        assert!(e_curvature(&path(0.0, 0.0), &path(0.0, 0.7)).unwrap() < 1e-12);
        assert!(e_curvature(&path(0.0, 0.0)[..2], &path(0.0, 0.0)).is_err());
    }

    fn metrics(status: Status, e: Option<f64>) -> TrialMetrics {
        TrialMetrics {
            status,
            steps: 10,
            speed_sum: 10.0,
            solve_ms_sum: 5.0,
            e_xy: e,
            e_c: e,
        }
    }

    #[test]
    fn percentages_and_single_trial_std() {
        let mut ts = vec![metrics(Status::Goal, Some(1.0)); 8];
        ts.push(metrics(Status::Crash, Some(2.0)));
        ts.push(metrics(Status::Crash, Some(3.0)));
        let r = aggregate_method("s", "m", &ts).unwrap();
        assert_eq!((r.crash_pct, r.goal_pct, r.timeout_pct), (20.0, 80.0, 0.0));
        assert_eq!(r.avg_speed_mps, 1.0);
        assert_eq!(r.processing_ms_mean, 0.5);

        let one = aggregate_method("s", "m", &ts[..1]).unwrap();
        assert_eq!(one.e_xy_std, 0.0);
        assert_eq!(one.e_c_std, 0.0);
        assert!(aggregate_method("s", "m", &[]).is_err());
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn straight_route_trial_metrics() {
        let s = Scenario::along("s", vec![[0.0, 0.0], [10.0, 0.0]], 1.0);
        let log: Vec<LogRecord> = (0..20)
            .map(|i| LogRecord {
                time_s: 0.1 * (i + 1) as f64,
                x_m: 0.1 * (i + 1) as f64,
                y_m: 0.2,
                rho_rad: 0.0,
                v_cmd: 1.0,
                omega_cmd: 0.0,
                c: None,
                w: None,
                cross_track_m: 0.2,
                solve_ms: 0.0,
                event: Event::None,
            })
            .collect();
        let m = trial_metrics(Status::Timeout, &log, &s);
        assert!((m.e_xy.unwrap() - 0.2).abs() < 1e-12);
        assert!(m.e_c.unwrap() < 1e-9);
        assert_eq!(m.steps, 20);
        assert!(trial_metrics(Status::Goal, &[], &s).e_xy.is_none());
    }

    proptest! {
        #[test]
        fn aggregate_ignores_trial_order(
            vals in proptest::collection::vec((0.0..5.0f64, 0.0..3.0f64, 0u8..3), 1..12),
            seed in any::<u64>(),
        ) {
            let ts: Vec<TrialMetrics> = vals.iter().map(|&(e, v, s)| TrialMetrics {
                status: [Status::Crash, Status::Goal, Status::Timeout][s as usize],
                steps: 7,
                speed_sum: v * 7.0,
                solve_ms_sum: e,
                e_xy: Some(e),
                e_c: Some(v),
            }).collect();
            let mut shuffled = ts.clone();
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
            rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut rng);
            prop_assert_eq!(aggregate_method("s", "m", &ts).unwrap(), aggregate_method("s", "m", &shuffled).unwrap());
        }
    }
}
