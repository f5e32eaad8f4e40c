//! Static SVG drawing of a route, its obstacles and a driven trajectory.

use std::fmt::Write;

use crate::sim::{LogRecord, Motion, Scenario};
use crate::vehicle::VehicleState;

const WIDTH: f64 = 900.0;
const PAD: f64 = 20.0;

struct Frame {
    min: [f64; 2],
    scale: f64,
    height: f64,
}

impl Frame {
    fn fit(points: impl Iterator<Item = [f64; 2]>) -> Self {
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for p in points {
            for i in 0..2 {
                min[i] = min[i].min(p[i]);
                max[i] = max[i].max(p[i]);
            }
        }
        let span_x = (max[0] - min[0]).max(1e-3);
        let span_y = (max[1] - min[1]).max(1e-3);
        let scale = (WIDTH - 2.0 * PAD) / span_x;
        Self {
            min,
            scale,
            height: span_y * scale + 2.0 * PAD,
        }
    }

    fn map(&self, p: [f64; 2]) -> (f64, f64) {
        (
            PAD + (p[0] - self.min[0]) * self.scale,
            self.height - PAD - (p[1] - self.min[1]) * self.scale,
        )
    }

    fn polyline(&self, pts: impl Iterator<Item = [f64; 2]>) -> String {
        let mut s = String::new();
        for p in pts {
            let (x, y) = self.map(p);
            let _ = write!(s, "{x:.2},{y:.2} ");
        }
        s.trim_end().to_string()
    }
}

/// Route corridor, obstacles (initial positions and loop paths), the driven
/// path and any desired-trajectory snapshots.
pub fn render_svg(scenario: &Scenario, log: &[LogRecord], desired: &[Vec<VehicleState>]) -> String {
    let route = &scenario.route;
    let mut all: Vec<[f64; 2]> = route.left.points().to_vec();
    all.extend(route.right.points());
    all.extend(log.iter().map(|r| [r.x_m, r.y_m]));
    for o in &scenario.obstacles {
        all.push([o.center[0] - o.radius, o.center[1] - o.radius]);
        all.push([o.center[0] + o.radius, o.center[1] + o.radius]);
    }
    let f = Frame::fit(all.into_iter());

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH:.0}" height="{:.0}" viewBox="0 0 {WIDTH:.0} {:.0}">"#,
        f.height, f.height
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, "<title>{}</title>", escape(&scenario.name));
    for edge in [&route.left, &route.right] {
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="black" stroke-width="2"/>"#,
            f.polyline(edge.points().iter().copied())
        );
    }
    let _ = writeln!(
        svg,
        r##"<polyline points="{}" fill="none" stroke="#999" stroke-width="1" stroke-dasharray="6 4"/>"##,
        f.polyline(route.centerline.points().iter().copied())
    );
    for o in &scenario.obstacles {
        if let Motion::Loop { points, .. } = &o.motion {
            let _ = writeln!(
                svg,
                r##"<polygon points="{}" fill="none" stroke="#d88" stroke-dasharray="3 3"/>"##,
                f.polyline(points.iter().copied())
            );
        }
        let (x, y) = f.map(o.center);
        let _ = writeln!(
            svg,
            r##"<circle cx="{x:.2}" cy="{y:.2}" r="{:.2}" fill="#e55" fill-opacity="0.6"/>"##,
            o.radius * f.scale
        );
    }
    let goal = route.goal();
    let (gx, gy) = f.map(goal);
    let _ = writeln!(
        svg,
        r##"<circle cx="{gx:.2}" cy="{gy:.2}" r="{:.2}" fill="none" stroke="#2a2"/>"##,
        scenario.goal_radius * f.scale
    );
    for d in desired {
        let _ = writeln!(
            svg,
            r##"<polyline points="{}" fill="none" stroke="#f90" stroke-width="1.5"/>"##,
            f.polyline(d.iter().map(|z| z.position()))
        );
    }
    let start = std::iter::once(scenario.start.position());
    let _ = writeln!(
        svg,
        r##"<polyline points="{}" fill="none" stroke="#24c" stroke-width="2"/>"##,
        f.polyline(start.chain(log.iter().map(|r| [r.x_m, r.y_m])))
    );
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::Event;

    #[test]
    fn drawing_contains_every_layer() {
        let mut s = Scenario::along("a<b", vec![[0.0, 0.0], [10.0, 0.0]], 1.0);
        s.obstacles.push(crate::sim::Obstacle::fixed([5.0, 0.0], 0.3));
        let log: Vec<LogRecord> = (1..=3)
            .map(|i| LogRecord {
                time_s: i as f64 * 0.1,
                x_m: i as f64,
                y_m: 0.0,
                rho_rad: 0.0,
                v_cmd: 1.0,
                omega_cmd: 0.0,
                c: None,
                w: None,
                cross_track_m: 0.0,
                solve_ms: 0.0,
                event: Event::None,
            })
            .collect();
        let svg = render_svg(&s, &log, &[vec![VehicleState::new(1.0, 0.0, 0.0), VehicleState::new(2.0, 0.1, 0.0)]]);
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<circle").count(), 2);
        assert_eq!(svg.matches("<polyline").count(), 5);
        assert!(svg.contains("a&lt;b"));
    }
}
