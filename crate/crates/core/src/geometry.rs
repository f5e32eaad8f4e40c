//! Planar geometry helpers: angle wrapping, polylines, ray intersection.

use std::f64::consts::{PI, TAU};

/// Wrap an angle into `(-pi, pi]`.
pub fn normalize_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let mut r = a.rem_euclid(TAU);
    if r > PI {
        r -= TAU;
    }
    // rem_euclid may land exactly on -pi after the shift
    if r <= -PI {
        r += TAU;
    }
    r
}

pub fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Closest-point projection onto a polyline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub segment: usize,
    /// Arc length of the projected point from the first vertex.
    pub arc_length: f64,
    pub point: [f64; 2],
    /// Signed lateral offset, positive to the left of the travel direction.
    pub lateral: f64,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    points: Vec<[f64; 2]>,
    cumulative: Vec<f64>,
}

impl Polyline {
    /// Consecutive duplicate vertices are dropped. Returns `None` when fewer
    /// than two distinct vertices remain.
    pub fn new(points: Vec<[f64; 2]>) -> Option<Self> {
        let mut pts: Vec<[f64; 2]> = Vec::with_capacity(points.len());
        for p in points {
            if pts.last().is_none_or(|q| dist(*q, p) > 1e-12) {
                pts.push(p);
            }
        }
        if pts.len() < 2 {
            return None;
        }
        let mut cumulative = Vec::with_capacity(pts.len());
        cumulative.push(0.0);
        for w in pts.windows(2) {
            let last = *cumulative.last().unwrap();
            cumulative.push(last + dist(w[0], w[1]));
        }
        Some(Self {
            points: pts,
            cumulative,
        })
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    pub fn segments(&self) -> impl Iterator<Item = ([f64; 2], [f64; 2])> + '_ {
        self.points.windows(2).map(|w| (w[0], w[1]))
    }

    fn segment_heading(&self, i: usize) -> f64 {
        let a = self.points[i];
        let b = self.points[i + 1];
        (b[1] - a[1]).atan2(b[0] - a[0])
    }

    /// Closest point on the polyline. Exact ties go to the later segment, so
    /// a projection onto a shared vertex continues along the next segment.
    pub fn project(&self, p: [f64; 2]) -> Projection {
        let mut best: Option<Projection> = None;
        for i in 0..self.points.len() - 1 {
            let a = self.points[i];
            let b = self.points[i + 1];
            let seg = [b[0] - a[0], b[1] - a[1]];
            let len2 = seg[0] * seg[0] + seg[1] * seg[1];
            let t = (((p[0] - a[0]) * seg[0] + (p[1] - a[1]) * seg[1]) / len2).clamp(0.0, 1.0);
            let point = if t <= 0.0 {
                a
            } else if t >= 1.0 {
                b
            } else {
                [a[0] + t * seg[0], a[1] + t * seg[1]]
            };
            let d = dist(point, p);
            if best.is_none_or(|bp| d <= bp.distance) {
                let len = len2.sqrt();
                let cross = (seg[0] * (p[1] - a[1]) - seg[1] * (p[0] - a[0])) / len;
                best = Some(Projection {
                    segment: i,
                    arc_length: self.cumulative[i] + t * len,
                    point,
                    lateral: if cross >= 0.0 { d } else { -d },
                    distance: d,
                });
            }
        }
        best.expect("polyline has at least one segment")
    }

    /// Point and tangent heading at arc length `s`, clamped to the ends.
    pub fn sample(&self, s: f64) -> ([f64; 2], f64) {
        let s = s.clamp(0.0, self.length());
        let n = self.points.len();
        // last segment whose start is at or before s
        let i = match self
            .cumulative
            .binary_search_by(|c| c.partial_cmp(&s).unwrap())
        {
            Ok(i) => i.min(n - 2),
            Err(i) => (i - 1).min(n - 2),
        };
        let a = self.points[i];
        let b = self.points[i + 1];
        let len = self.cumulative[i + 1] - self.cumulative[i];
        let t = ((s - self.cumulative[i]) / len).clamp(0.0, 1.0);
        (
            [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])],
            self.segment_heading(i),
        )
    }

    /// Offset curve at signed distance `d` (positive = left), mitred joints.
    pub fn offset(&self, d: f64) -> Polyline {
        let n = self.points.len();
        let normal = |i: usize| {
            let h = self.segment_heading(i);
            [-h.sin(), h.cos()]
        };
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let p = self.points[i];
            let m = if i == 0 {
                normal(0)
            } else if i == n - 1 {
                normal(n - 2)
            } else {
                let a = normal(i - 1);
                let b = normal(i);
                let sum = [a[0] + b[0], a[1] + b[1]];
                let norm = sum[0].hypot(sum[1]);
                if norm < 1e-9 {
                    a
                } else {
                    let bis = [sum[0] / norm, sum[1] / norm];
                    let cos_half = (bis[0] * a[0] + bis[1] * a[1]).max(0.25);
                    [bis[0] / cos_half, bis[1] / cos_half]
                }
            };
            out.push([p[0] + d * m[0], p[1] + d * m[1]]);
        }
        Polyline::new(out).expect("offset of a valid polyline is valid")
    }
}

/// Distance along a unit-direction ray to the first hit on a circle.
/// Returns `Some(0.0)` when the origin is inside the circle.
pub fn ray_circle(origin: [f64; 2], dir: [f64; 2], center: [f64; 2], radius: f64) -> Option<f64> {
    let oc = [origin[0] - center[0], origin[1] - center[1]];
    let c = oc[0] * oc[0] + oc[1] * oc[1] - radius * radius;
    if c <= 0.0 {
        return Some(0.0);
    }
    let b = oc[0] * dir[0] + oc[1] * dir[1];
    if b >= 0.0 {
        return None;
    }
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    // numerically stable smaller root of t^2 + 2bt + c = 0
    let q = -b + disc.sqrt();
    Some(c / q)
}

/// Distance along a unit-direction ray to segment `a-b`, if hit.
pub fn ray_segment(origin: [f64; 2], dir: [f64; 2], a: [f64; 2], b: [f64; 2]) -> Option<f64> {
    let e = [b[0] - a[0], b[1] - a[1]];
    let denom = dir[0] * e[1] - dir[1] * e[0];
    if denom.abs() < 1e-15 {
        return None;
    }
    let ao = [a[0] - origin[0], a[1] - origin[1]];
    let t = (ao[0] * e[1] - ao[1] * e[0]) / denom;
    let u = (ao[0] * dir[1] - ao[1] * dir[0]) / denom;
    if t >= 0.0 && (0.0..=1.0).contains(&u) {
        Some(t)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wraps_angles() {
        assert_eq!(normalize_angle(PI), PI);
        assert!((normalize_angle(-PI) - PI).abs() < 1e-15);
        assert!((normalize_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((normalize_angle(-3.5 * PI) - 0.5 * PI).abs() < 1e-12);
        assert_eq!(normalize_angle(0.25), 0.25);
    }

    #[test]
    fn projection_ties_to_later_segment() {
        let pl = Polyline::new(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]]).unwrap();
        let pr = pl.project([1.5, -0.5]);
        assert_eq!(pr.segment, 1);
        assert_eq!(pr.point, [1.0, 0.0]);
        assert!((pr.arc_length - 1.0).abs() < 1e-12);
    }

    #[test]
    fn signed_lateral() {
        let pl = Polyline::new(vec![[0.0, 0.0], [10.0, 0.0]]).unwrap();
        assert!((pl.project([3.0, 0.4]).lateral - 0.4).abs() < 1e-12);
        assert!((pl.project([3.0, -0.4]).lateral + 0.4).abs() < 1e-12);
    }

    #[test]
    fn sample_clamps_and_reports_heading() {
        let pl = Polyline::new(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 2.0]]).unwrap();
        let (p, h) = pl.sample(1.0);
        assert_eq!(p, [1.0, 0.0]);
        assert!((h - PI / 2.0).abs() < 1e-12);
        let (p, _) = pl.sample(10.0);
        assert_eq!(p, [1.0, 2.0]);
        let (p, h) = pl.sample(-1.0);
        assert_eq!(p, [0.0, 0.0]);
        assert_eq!(h, 0.0);
    }

    #[test]
    fn ray_hits_circle_ahead() {
        let d = ray_circle([0.0, 0.0], [1.0, 0.0], [3.0, 0.0], 0.5).unwrap();
        assert!((d - 2.5).abs() < 1e-12);
        assert!(ray_circle([0.0, 0.0], [-1.0, 0.0], [3.0, 0.0], 0.5).is_none());
        assert!(ray_circle([0.0, 0.0], [0.0, 1.0], [3.0, 0.0], 0.5).is_none());
    }

    #[test]
    fn ray_hits_segment() {
        let d = ray_segment([0.0, 0.0], [0.0, 1.0], [-1.0, 2.0], [1.0, 2.0]).unwrap();
        assert!((d - 2.0).abs() < 1e-12);
        assert!(ray_segment([0.0, 0.0], [0.0, -1.0], [-1.0, 2.0], [1.0, 2.0]).is_none());
    }

    #[test]
    fn offset_of_straight_line() {
        let pl = Polyline::new(vec![[0.0, 0.0], [5.0, 0.0], [10.0, 0.0]]).unwrap();
        let left = pl.offset(1.5);
        for p in left.points() {
            assert!((p[1] - 1.5).abs() < 1e-12);
        }
    }
}
