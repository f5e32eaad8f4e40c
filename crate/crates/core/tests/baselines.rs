mod common;

use common::euler_step;
use lvd_nmpc::baselines::dwa::{score_window, DwaInputs};
use lvd_nmpc::baselines::{dwa_plan, DwaConfig};
use lvd_nmpc::nmpc::ActuatorLimits;
use lvd_nmpc::vehicle::{ControlInput, ModelParams, VehicleState};
use proptest::prelude::*;

fn straight_slice(n: usize) -> Vec<VehicleState> {
    (1..=n).map(|k| VehicleState::new(0.1 * k as f64, 0.0, 0.0)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn plan_never_touches_an_inflated_obstacle(
        obstacles in prop::collection::vec((0.2..3.0f64, -1.5..1.5f64), 0..12),
        v0 in 0.0..2.0f64,
        w0 in -0.5..0.5f64,
    ) {
        let points: Vec<[f64; 2]> = obstacles.iter().map(|&(x, y)| [x, y]).collect();
        let limits = ActuatorLimits::default();
        let model = ModelParams { dt: 0.1, ..ModelParams::default() };
        let slice = straight_slice(20);
        let inputs = DwaInputs {
            vehicle: VehicleState::default(),
            obstacles: &points,
            ref_slice: &slice,
            current: ControlInput::new(v0, w0),
            limits: &limits,
            model: &model,
            inflation: 0.25,
            horizon: 20,
        };
        let cfg = DwaConfig::default();
        let (desired, best) = dwa_plan(&inputs, &cfg);
        prop_assert_eq!(desired.states.len(), 20);
        if let Some(best) = best {
            // replay the chosen control with an independent model step
            let mut z = [0.0, 0.0, 0.0];
            for _ in 0..15 {
                z = euler_step(z, best.control.v_cmd, best.control.omega_cmd, model.dt, model.wheelbase);
                for p in &points {
                    prop_assert!((z[0] - p[0]).hypot(z[1] - p[1]) > inputs.inflation);
                }
            }
            prop_assert!(limits.admits(Some(&inputs.current), &best.control, model.dt));
            let top = score_window(&inputs, &cfg).iter().map(|c| c.score).fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(best.score, top);
        } else {
            prop_assert!(desired.states.iter().all(|z| *z == inputs.vehicle));
        }
    }
}
