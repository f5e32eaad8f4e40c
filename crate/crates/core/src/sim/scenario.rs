//! Scenario description and its TOML file format.
//!
//! Every quantity carries its unit in the key name. Example:
//!
//! ```toml
//! name = "corridor"
//! seed = 7
//! time_limit_s = 30.0
//! goal_radius_m = 0.5
//! v_max_mps = 2.0
//! dt_s = 0.1
//!
//! [vehicle]              # optional, defaults shown
//! wheelbase_m = 0.36
//! radius_m = 0.2
//! wheelbase_scale = 1.0  # simulated wheelbase = scale * wheelbase_m
//! sigma_f = 0.0          # per-axis state noise, std-dev
//! steer_max_rad = 0.5
//! accel_max_mps2 = 2.0
//! decel_max_mps2 = 4.0
//! steer_rate_max_radps = 3.0
//!
//! [route]
//! half_width_m = 1.5
//! waypoints_m = [[0.0, 0.0], [20.0, 0.0]]
//!
//! [start]                # optional; defaults to the first waypoint, tangent heading
//! x_m = 0.0
//! y_m = 0.0
//! rho_rad = 0.0
//!
//! [sensor]               # optional, defaults shown
//! fov_deg = 360.0
//! resolution_deg = 2.0
//! max_range_m = 5.0
//!
//! [[obstacles]]
//! center_m = [8.0, 0.0]
//! radius_m = 0.4
//!
//! [[obstacles]]          # dynamic: loops center -> loop_m... -> center
//! center_m = [12.0, 1.0]
//! radius_m = 0.3
//! loop_m = [[12.0, -1.0]]
//! speed_mps = 0.5
//! ```

use std::path::Path;

use serde::Deserialize;
use thiserror::Error;
use toml::Spanned;

use crate::geometry::{dist, Polyline};
use crate::nmpc::ActuatorLimits;
use crate::vehicle::{ControlInput, ModelParams, VehicleState};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RaySensorConfig {
    pub fov_deg: f64,
    pub resolution_deg: f64,
    pub max_range: f64,
}

impl Default for RaySensorConfig {
    fn default() -> Self {
        Self {
            fov_deg: 360.0,
            resolution_deg: 2.0,
            max_range: 5.0,
        }
    }
}

impl RaySensorConfig {
    pub fn ray_count(&self) -> usize {
        (self.fov_deg / self.resolution_deg).round() as usize
    }

    /// Bearing of ray `i` in the vehicle frame, radians, counter-clockwise.
    pub fn bearing(&self, i: usize) -> f64 {
        (-0.5 * self.fov_deg + i as f64 * self.resolution_deg).to_radians()
    }

    fn validate(&self) -> Result<(), &'static str> {
        if !(self.fov_deg > 0.0 && self.fov_deg <= 360.0) {
            return Err("fov_deg must be in (0, 360]");
        }
        if !(self.resolution_deg > 0.0) {
            return Err("resolution_deg must be positive");
        }
        let ratio = self.fov_deg / self.resolution_deg;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return Err("resolution_deg must divide fov_deg");
        }
        if !(self.max_range > 0.0) {
            return Err("max_range_m must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Motion {
    Static,
    /// Closed loop through the listed points, starting at the first.
    Loop { points: Vec<[f64; 2]>, speed: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Obstacle {
    pub center: [f64; 2],
    pub radius: f64,
    pub motion: Motion,
}

impl Obstacle {
    pub fn fixed(center: [f64; 2], radius: f64) -> Self {
        Self {
            center,
            radius,
            motion: Motion::Static,
        }
    }

    /// Loop perimeter, meters; zero for static obstacles.
    pub fn perimeter(&self) -> f64 {
        match &self.motion {
            Motion::Static => 0.0,
            Motion::Loop { points, .. } => (0..points.len())
                .map(|i| dist(points[i], points[(i + 1) % points.len()]))
                .sum(),
        }
    }

    /// Center at time `t`, evaluated from the elapsed arc length.
    pub fn position_at(&self, t: f64) -> [f64; 2] {
        let Motion::Loop { points, speed } = &self.motion else {
            return self.center;
        };
        let perimeter = self.perimeter();
        if points.len() < 2 || perimeter <= 0.0 || *speed <= 0.0 {
            return self.center;
        }
        let mut s = (speed * t).rem_euclid(perimeter);
        for i in 0..points.len() {
            let a = points[i];
            let b = points[(i + 1) % points.len()];
            let len = dist(a, b);
            if s <= len {
                let f = if len > 0.0 { s / len } else { 0.0 };
                return [a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])];
            }
            s -= len;
        }
        points[0]
    }
}

/// Reference route: a polyline centerline with a fixed half-width corridor.
#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub centerline: Polyline,
    pub half_width: f64,
    pub left: Polyline,
    pub right: Polyline,
}

impl Route {
    pub fn new(centerline: Polyline, half_width: f64) -> Self {
        let left = centerline.offset(half_width);
        let right = centerline.offset(-half_width);
        Self {
            centerline,
            half_width,
            left,
            right,
        }
    }

    pub fn goal(&self) -> [f64; 2] {
        *self.centerline.points().last().unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleConfig {
    pub wheelbase: f64,
    pub radius: f64,
    pub wheelbase_scale: f64,
    pub sigma_f: f64,
    pub steer_max: f64,
    pub accel_max: f64,
    pub decel_max: f64,
    pub steer_rate_max: f64,
}

impl Default for VehicleConfig {
    fn default() -> Self {
        Self {
            wheelbase: 0.36,
            radius: 0.2,
            wheelbase_scale: 1.0,
            sigma_f: 0.0,
            steer_max: 0.5,
            accel_max: 2.0,
            decel_max: 4.0,
            steer_rate_max: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub route: Route,
    pub obstacles: Vec<Obstacle>,
    pub start: VehicleState,
    pub goal_radius: f64,
    pub v_max: f64,
    pub dt: f64,
    pub time_limit: f64,
    pub vehicle: VehicleConfig,
    pub sensor: RaySensorConfig,
}

impl Scenario {
    /// Minimal scenario along `waypoints`, starting at the first waypoint.
    pub fn along(name: &str, waypoints: Vec<[f64; 2]>, half_width: f64) -> Scenario {
        let centerline = Polyline::new(waypoints).expect("at least two distinct waypoints");
        let (p, h) = centerline.sample(0.0);
        Scenario {
            name: name.to_string(),
            seed: 0,
            route: Route::new(centerline, half_width),
            obstacles: Vec::new(),
            start: VehicleState::new(p[0], p[1], h),
            goal_radius: 0.5,
            v_max: 2.0,
            dt: 0.05,
            time_limit: 60.0,
            vehicle: VehicleConfig::default(),
            sensor: RaySensorConfig::default(),
        }
    }

    /// Actuator box and rate limits shared by every controller.
    pub fn limits(&self) -> ActuatorLimits {
        let v = &self.vehicle;
        ActuatorLimits {
            u_min: ControlInput::new(0.0, -v.steer_max),
            u_max: ControlInput::new(self.v_max, v.steer_max),
            du_min: ControlInput::new(-v.decel_max, -v.steer_rate_max),
            du_max: ControlInput::new(v.accel_max, v.steer_rate_max),
        }
    }

    /// Nominal model used by controllers.
    pub fn nominal_model(&self) -> ModelParams {
        ModelParams {
            wheelbase: self.vehicle.wheelbase,
            dt: self.dt,
            sigma_f: 0.0,
        }
    }

    /// Model used by the simulator: perturbed wheelbase and state noise.
    pub fn sim_model(&self) -> ModelParams {
        ModelParams {
            wheelbase: self.vehicle.wheelbase * self.vehicle.wheelbase_scale,
            dt: self.dt,
            sigma_f: self.vehicle.sigma_f,
        }
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Scenario::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Scenario, ScenarioError> {
        let raw: ScenarioFile = toml::from_str(text).map_err(|e| ScenarioError::Syntax {
            line: e.span().map(|s| line_of(text, s.start)).unwrap_or(0),
            message: e.message().to_string(),
        })?;
        raw.into_scenario(text)
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: String,
    #[serde(default)]
    seed: u64,
    time_limit_s: Spanned<f64>,
    goal_radius_m: Spanned<f64>,
    v_max_mps: Spanned<f64>,
    dt_s: Option<Spanned<f64>>,
    vehicle: Option<Spanned<VehicleSection>>,
    route: RouteSection,
    start: Option<StartSection>,
    sensor: Option<Spanned<SensorSection>>,
    #[serde(default)]
    obstacles: Vec<ObstacleSection>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VehicleSection {
    wheelbase_m: Option<f64>,
    radius_m: Option<f64>,
    wheelbase_scale: Option<f64>,
    sigma_f: Option<f64>,
    steer_max_rad: Option<f64>,
    accel_max_mps2: Option<f64>,
    decel_max_mps2: Option<f64>,
    steer_rate_max_radps: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RouteSection {
    half_width_m: Spanned<f64>,
    waypoints_m: Spanned<Vec<[f64; 2]>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StartSection {
    x_m: f64,
    y_m: f64,
    rho_rad: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SensorSection {
    fov_deg: Option<f64>,
    resolution_deg: Option<f64>,
    max_range_m: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ObstacleSection {
    center_m: Spanned<[f64; 2]>,
    radius_m: Spanned<f64>,
    loop_m: Option<Vec<[f64; 2]>>,
    speed_mps: Option<Spanned<f64>>,
}

impl ScenarioFile {
    fn into_scenario(self, text: &str) -> Result<Scenario, ScenarioError> {
        let invalid = |offset: usize, message: &str| ScenarioError::Invalid {
            line: line_of(text, offset),
            message: message.to_string(),
        };
        let positive = |v: &Spanned<f64>, what: &str| {
            if v.get_ref().is_finite() && *v.get_ref() > 0.0 {
                Ok(*v.get_ref())
            } else {
                Err(invalid(v.span().start, &format!("{what} must be positive")))
            }
        };

        let time_limit = *self.time_limit_s.get_ref();
        if !(time_limit >= 0.0 && time_limit.is_finite()) {
            return Err(invalid(self.time_limit_s.span().start, "time_limit_s must be non-negative"));
        }
        let goal_radius = positive(&self.goal_radius_m, "goal_radius_m")?;
        let v_max = positive(&self.v_max_mps, "v_max_mps")?;
        let dt = match &self.dt_s {
            Some(d) => positive(d, "dt_s")?,
            None => 0.05,
        };

        let mut vehicle = VehicleConfig::default();
        if let Some(sec) = &self.vehicle {
            let at = sec.span().start;
            let v = sec.get_ref();
            vehicle = VehicleConfig {
                wheelbase: v.wheelbase_m.unwrap_or(vehicle.wheelbase),
                radius: v.radius_m.unwrap_or(vehicle.radius),
                wheelbase_scale: v.wheelbase_scale.unwrap_or(vehicle.wheelbase_scale),
                sigma_f: v.sigma_f.unwrap_or(vehicle.sigma_f),
                steer_max: v.steer_max_rad.unwrap_or(vehicle.steer_max),
                accel_max: v.accel_max_mps2.unwrap_or(vehicle.accel_max),
                decel_max: v.decel_max_mps2.unwrap_or(vehicle.decel_max),
                steer_rate_max: v.steer_rate_max_radps.unwrap_or(vehicle.steer_rate_max),
            };
            let all_positive = [
                vehicle.wheelbase,
                vehicle.radius,
                vehicle.wheelbase_scale,
                vehicle.steer_max,
                vehicle.accel_max,
                vehicle.decel_max,
                vehicle.steer_rate_max,
            ]
            .iter()
            .all(|x| x.is_finite() && *x > 0.0);
            if !all_positive {
                return Err(invalid(at, "vehicle parameters must be positive"));
            }
            if !(vehicle.sigma_f >= 0.0 && vehicle.sigma_f.is_finite()) {
                return Err(invalid(at, "sigma_f must be non-negative"));
            }
        }

        let half_width = positive(&self.route.half_width_m, "half_width_m")?;
        let wp_span = self.route.waypoints_m.span().start;
        let waypoints = self.route.waypoints_m.into_inner();
        if waypoints.len() < 2 {
            return Err(invalid(wp_span, "route needs at least 2 waypoints"));
        }
        if waypoints.iter().flatten().any(|v| !v.is_finite()) {
            return Err(invalid(wp_span, "waypoints must be finite"));
        }
        let centerline = Polyline::new(waypoints).ok_or_else(|| invalid(wp_span, "route waypoints are all coincident"))?;

        let start = match &self.start {
            Some(s) => VehicleState::new(s.x_m, s.y_m, s.rho_rad),
            None => {
                let (p, h) = centerline.sample(0.0);
                VehicleState::new(p[0], p[1], h)
            }
        };
        if !start.is_finite() {
            return Err(invalid(0, "start pose must be finite"));
        }

        let mut sensor = RaySensorConfig::default();
        if let Some(sec) = &self.sensor {
            let s = sec.get_ref();
            sensor = RaySensorConfig {
                fov_deg: s.fov_deg.unwrap_or(sensor.fov_deg),
                resolution_deg: s.resolution_deg.unwrap_or(sensor.resolution_deg),
                max_range: s.max_range_m.unwrap_or(sensor.max_range),
            };
            sensor.validate().map_err(|m| invalid(sec.span().start, m))?;
        }

        let mut obstacles = Vec::with_capacity(self.obstacles.len());
        for o in self.obstacles {
            let radius = positive(&o.radius_m, "obstacle radius_m")?;
            let center = *o.center_m.get_ref();
            let motion = match (o.loop_m, o.speed_mps) {
                (None, None) => Motion::Static,
                (Some(rest), Some(speed)) => {
                    if !(*speed.get_ref() >= 0.0) {
                        return Err(invalid(speed.span().start, "speed_mps must be non-negative"));
                    }
                    let mut points = vec![center];
                    points.extend(rest);
                    Motion::Loop {
                        points,
                        speed: *speed.get_ref(),
                    }
                }
                _ => {
                    return Err(invalid(
                        o.center_m.span().start,
                        "dynamic obstacles need both loop_m and speed_mps",
                    ))
                }
            };
            obstacles.push(Obstacle { center, radius, motion });
        }

        Ok(Scenario {
            name: self.name,
            seed: self.seed,
            route: Route::new(centerline, half_width),
            obstacles,
            start,
            goal_radius,
            v_max,
            dt,
            time_limit,
            vehicle,
            sensor,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "straight"
time_limit_s = 10.0
goal_radius_m = 0.5
v_max_mps = 2.0

[route]
half_width_m = 1.0
waypoints_m = [[0.0, 0.0], [10.0, 0.0]]
"#;

    #[test]
    fn parses_minimal_file_with_defaults() {
        let s = Scenario::from_toml(MINIMAL).unwrap();
        assert_eq!(s.name, "straight");
        assert_eq!(s.start, VehicleState::new(0.0, 0.0, 0.0));
        assert_eq!(s.dt, 0.05);
        assert_eq!(s.sensor.ray_count(), 180);
        assert!(s.obstacles.is_empty());
        assert_eq!(s.route.goal(), [10.0, 0.0]);
    }

    #[test]
    fn reports_line_of_invalid_value() {
        let text = MINIMAL.replace("goal_radius_m = 0.5", "goal_radius_m = -1.0");
        match Scenario::from_toml(&text) {
            Err(ScenarioError::Invalid { line, message }) => {
                assert_eq!(line, 4);
                assert!(message.contains("goal_radius_m"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn reports_line_of_syntax_error() {
        let text = format!("{MINIMAL}\n[[obstacles]]\ncenter_m = [1.0, 2.0]\nradius_m = \"big\"\n");
        match Scenario::from_toml(&text) {
            Err(ScenarioError::Syntax { line, .. }) => assert_eq!(line, 13),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_unknown_keys_and_short_routes() {
        let text = MINIMAL.replace("v_max_mps", "vmax");
        assert!(matches!(Scenario::from_toml(&text), Err(ScenarioError::Syntax { .. })));
        let text = MINIMAL.replace("[[0.0, 0.0], [10.0, 0.0]]", "[[0.0, 0.0]]");
        match Scenario::from_toml(&text) {
            Err(ScenarioError::Invalid { line, .. }) => assert_eq!(line, 9),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn sensor_resolution_must_divide_fov() {
        let text = format!("{MINIMAL}\n[sensor]\nfov_deg = 180.0\nresolution_deg = 7.0\n");
        assert!(matches!(Scenario::from_toml(&text), Err(ScenarioError::Invalid { .. })));
    }

    #[test]
    fn dynamic_obstacle_loop_period() {
        let o = Obstacle {
            center: [0.0, 0.0],
            radius: 0.3,
            motion: Motion::Loop {
                points: vec![[0.0, 0.0], [3.0, 0.0], [3.0, 4.0]],
                speed: 0.6,
            },
        };
        assert_eq!(o.perimeter(), 12.0);
        let period = o.perimeter() / 0.6;
        let dt = 0.05;
        let steps = (period / dt).round() as usize;
        let p = o.position_at(steps as f64 * dt);
        assert!(dist(p, [0.0, 0.0]) < 1e-9, "{p:?}");
        let mid = o.position_at(2.5);
        assert!(dist(mid, [1.5, 0.0]) < 1e-12);
    }
}
