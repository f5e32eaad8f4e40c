//! World state, ray sensing and route sampling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::scenario::{RaySensorConfig, Scenario};
use crate::geometry::{dist, ray_circle, ray_segment, Polyline};
use crate::memory::Observation;
use crate::vehicle::{step_true, ControlInput, ModelParams, StateIncrement, VehicleState};

/// Floor on sensed distances so a ray never reports exactly zero.
pub const MIN_RAY: f64 = 1e-6;

/// A circle at a given instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Disc {
    pub center: [f64; 2],
    pub radius: f64,
}

/// Obstacle discs at time `t`.
pub fn obstacles_at(scenario: &Scenario, t: f64) -> Vec<Disc> {
    scenario
        .obstacles
        .iter()
        .map(|o| Disc {
            center: o.position_at(t),
            radius: o.radius,
        })
        .collect()
}

/// Ray scan from `vehicle` against `discs` and the boundary polylines.
pub fn sense_with(discs: &[Disc], boundaries: &[&Polyline], vehicle: &VehicleState, cfg: &RaySensorConfig, t: f64) -> Observation {
    let origin = vehicle.position();
    let rays = (0..cfg.ray_count())
        .map(|i| {
            let a = vehicle.rho + cfg.bearing(i);
            let dir = [a.cos(), a.sin()];
            let mut best = cfg.max_range;
            for d in discs {
                if let Some(s) = ray_circle(origin, dir, d.center, d.radius) {
                    best = best.min(s);
                }
            }
            for b in boundaries {
                for (p, q) in b.segments() {
                    if let Some(s) = ray_segment(origin, dir, p, q) {
                        best = best.min(s);
                    }
                }
            }
            best.max(MIN_RAY)
        })
        .collect();
    Observation { rays, timestamp: t }
}

/// Ray scan of the scenario at time `t`.
pub fn sense(scenario: &Scenario, vehicle: &VehicleState, t: f64) -> Observation {
    let discs = obstacles_at(scenario, t);
    let boundaries = [&scenario.route.left, &scenario.route.right];
    sense_with(&discs, &boundaries, vehicle, &scenario.sensor, t)
}

/// `tau_o` route poses spaced `v_ref * dt` apart in arc length, starting one
/// spacing past the vehicle's closest-point projection. Past the route end
/// the final waypoint is repeated.
pub fn reference_slice(route: &Polyline, vehicle: &VehicleState, tau_o: usize, dt: f64, v_ref: f64) -> Vec<VehicleState> {
    let s0 = route.project(vehicle.position()).arc_length;
    let ds = v_ref * dt;
    (1..=tau_o)
        .map(|k| {
            let (p, h) = route.sample(s0 + k as f64 * ds);
            VehicleState::new(p[0], p[1], h)
        })
        .collect()
}

/// Like [`reference_slice`], shifted sideways to run parallel to the route
/// through the vehicle's current lateral offset.
pub fn offset_reference_slice(route: &Polyline, vehicle: &VehicleState, tau_o: usize, dt: f64, v_ref: f64) -> Vec<VehicleState> {
    let e = route.project(vehicle.position()).lateral;
    reference_slice(route, vehicle, tau_o, dt, v_ref)
        .into_iter()
        .map(|z| {
            let (s, c) = z.rho.sin_cos();
            VehicleState::new(z.x - s * e, z.y + c * e, z.rho)
        })
        .collect()
}

/// Signed lateral offset from the route centerline, left positive.
pub fn cross_track(scenario: &Scenario, p: [f64; 2]) -> f64 {
    scenario.route.centerline.project(p).lateral
}

/// Whether a vehicle at `p` overlaps an obstacle or leaves the corridor.
pub fn in_collision(scenario: &Scenario, discs: &[Disc], p: [f64; 2]) -> bool {
    let r = scenario.vehicle.radius;
    if discs.iter().any(|d| dist(d.center, p) < d.radius + r) {
        return true;
    }
    scenario.route.centerline.project(p).distance + r > scenario.route.half_width
}

pub fn at_goal(scenario: &Scenario, p: [f64; 2]) -> bool {
    dist(p, scenario.route.goal()) <= scenario.goal_radius
}

/// One simulated world: the vehicle, the clock and the noise source.
#[derive(Debug, Clone)]
pub struct World<'s> {
    pub scenario: &'s Scenario,
    pub vehicle: VehicleState,
    pub steps: usize,
    model: ModelParams,
    rng: ChaCha8Rng,
}

impl<'s> World<'s> {
    pub fn new(scenario: &'s Scenario, seed: u64) -> Self {
        Self {
            scenario,
            vehicle: scenario.start,
            steps: 0,
            model: scenario.sim_model(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Simulated time; computed from the step count so it never drifts.
    pub fn time(&self) -> f64 {
        self.steps as f64 * self.model.dt
    }

    pub fn model(&self) -> &ModelParams {
        &self.model
    }

    pub fn obstacles(&self) -> Vec<Disc> {
        obstacles_at(self.scenario, self.time())
    }

    pub fn sense(&self) -> Observation {
        sense(self.scenario, &self.vehicle, self.time())
    }

    pub fn collided(&self) -> bool {
        in_collision(self.scenario, &self.obstacles(), self.vehicle.position())
    }

    pub fn reached_goal(&self) -> bool {
        at_goal(self.scenario, self.vehicle.position())
    }

    /// Advance the vehicle (zero residual) and the clock by one step.
    pub fn step(&mut self, u: &ControlInput) {
        self.vehicle = step_true(&self.vehicle, u, &StateIncrement::ZERO, &self.model, &mut self.rng);
        self.steps += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::scenario::{Motion, Obstacle};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn open_field() -> Scenario {
        let mut s = Scenario::along("open", vec![[-50.0, 0.0], [50.0, 0.0]], 100.0);
        s.sensor.max_range = 5.0;
        s.start = VehicleState::default();
        s
    }

    #[test]
    fn empty_world_reads_max_range() {
        let s = open_field();
        let obs = sense(&s, &VehicleState::default(), 0.0);
        assert_eq!(obs.rays.len(), 180);
        assert!(obs.rays.iter().all(|&r| r == 5.0));
    }

    #[test]
    fn forward_ray_hits_obstacle_surface() {
        let mut s = open_field();
        s.obstacles.push(Obstacle::fixed([3.0, 0.0], 0.5));
        let obs = sense(&s, &VehicleState::default(), 0.0);
        let forward = (0..s.sensor.ray_count())
            .find(|&i| s.sensor.bearing(i) == 0.0)
            .unwrap();
        assert!((obs.rays[forward] - 2.5).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn joint_rotation_preserves_scan(theta in -PI..PI, ox in 1.0..4.0f64, oy in -2.0..2.0f64) {
            let mut s = open_field();
            s.obstacles.push(Obstacle::fixed([ox, oy], 0.4));
            let base = sense(&s, &VehicleState::default(), 0.0);

            let (sn, cs) = theta.sin_cos();
            let rot = |p: [f64; 2]| [cs * p[0] - sn * p[1], sn * p[0] + cs * p[1]];
            let pts = s.route.centerline.points().iter().map(|&p| rot(p)).collect();
            let mut r = Scenario::along("rot", pts, 100.0);
            r.sensor = s.sensor;
            r.obstacles.push(Obstacle::fixed(rot([ox, oy]), 0.4));
            let turned = sense(&r, &VehicleState::new(0.0, 0.0, theta), 0.0);
            for (a, b) in base.rays.iter().zip(&turned.rays) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn rays_stay_in_range(x in -3.0..3.0f64, y in -1.0..1.0f64, rho in -PI..PI) {
            let mut s = Scenario::along("c", vec![[-10.0, 0.0], [10.0, 0.0]], 1.5);
            s.obstacles.push(Obstacle::fixed([1.0, 0.5], 0.4));
            let obs = sense(&s, &VehicleState::new(x, y, rho), 0.0);
            prop_assert_eq!(obs.rays.len(), s.sensor.ray_count());
            prop_assert!(obs.rays.iter().all(|&r| r > 0.0 && r <= s.sensor.max_range));
        }
    }

    #[test]
    fn slice_on_straight_route() {
        let route = Polyline::new(vec![[0.0, 0.0], [10.0, 0.0]]).unwrap();
        let slice = reference_slice(&route, &VehicleState::default(), 5, 0.1, 1.0);
        for (k, z) in slice.iter().enumerate() {
            assert!((z.x - 0.1 * (k + 1) as f64).abs() < 1e-12);
            assert_eq!(z.y, 0.0);
            assert_eq!(z.rho, 0.0);
        }
    }

    #[test]
    fn slice_at_corner_follows_next_segment() {
        let route = Polyline::new(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]]).unwrap();
        let slice = reference_slice(&route, &VehicleState::new(1.0, 0.0, 0.0), 3, 0.1, 1.0);
        for z in &slice {
            assert!((z.x - 1.0).abs() < 1e-12);
            assert!((z.rho - PI / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn slice_past_end_repeats_final_waypoint() {
        let route = Polyline::new(vec![[0.0, 0.0], [1.0, 0.0]]).unwrap();
        let slice = reference_slice(&route, &VehicleState::new(3.0, 0.0, 0.0), 4, 0.1, 1.0);
        assert!(slice.iter().all(|z| z.x == 1.0 && z.y == 0.0));
    }

    #[test]
    fn zero_control_static_world_only_advances_time() {
        let s = open_field();
        let mut w = World::new(&s, 1);
        let before = w.vehicle;
        w.step(&ControlInput::ZERO);
        assert_eq!(w.vehicle, before);
        assert_eq!(w.steps, 1);
        assert_eq!(w.time(), s.dt);
    }

    #[test]
    fn overlap_sets_collision_flag() {
        let mut s = open_field();
        s.obstacles.push(Obstacle::fixed([0.4, 0.0], 0.5));
        let w = World::new(&s, 1);
        assert!(w.collided());
        s.obstacles[0].center = [2.0, 0.0];
        assert!(!World::new(&s, 1).collided());
    }

    #[test]
    fn leaving_the_corridor_is_a_collision() {
        let s = Scenario::along("c", vec![[0.0, 0.0], [10.0, 0.0]], 1.0);
        assert!(!in_collision(&s, &[], [2.0, 0.7]));
        assert!(in_collision(&s, &[], [2.0, 0.85]));
    }

    #[test]
    fn dynamic_obstacle_moves_with_clock() {
        let mut s = open_field();
        s.obstacles.push(Obstacle {
            center: [0.0, 3.0],
            radius: 0.2,
            motion: Motion::Loop {
                points: vec![[0.0, 3.0], [2.0, 3.0]],
                speed: 1.0,
            },
        });
        let mut w = World::new(&s, 1);
        for _ in 0..10 {
            w.step(&ControlInput::ZERO);
        }
        let d = w.obstacles()[0];
        assert!((d.center[0] - 10.0 * s.dt).abs() < 1e-12);
    }

    #[test]
    fn circle_slice_headings_advance_uniformly() {
        let n = 72;
        let radius = 5.0;
        let pts: Vec<[f64; 2]> = (0..=n)
            .map(|i| {
                let a = 2.0 * PI * i as f64 / n as f64;
                [radius * a.cos(), radius * a.sin()]
            })
            .collect();
        let chord = dist(pts[0], pts[1]);
        let route = Polyline::new(pts.clone()).unwrap();
        let mid = [0.5 * (pts[0][0] + pts[1][0]), 0.5 * (pts[0][1] + pts[1][1])];
        let slice = reference_slice(&route, &VehicleState::new(mid[0], mid[1], PI / 2.0), 20, 1.0, chord);
        let step = 2.0 * PI / n as f64;
        for (k, z) in slice.iter().enumerate() {
            let mid_angle = (k as f64 + 1.5) * step;
            let tangent = crate::geometry::normalize_angle(mid_angle + PI / 2.0);
            assert!(crate::geometry::normalize_angle(z.rho - tangent).abs() < 1e-9, "k={k}");
        }
    }
}
