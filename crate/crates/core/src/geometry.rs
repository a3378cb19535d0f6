//! Planar and spatial helpers: geofence polygons and segment distances.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

/// Position or velocity in meters (or m/s), `x, y` horizontal and `z` altitude.
pub type Vec3 = nalgebra::Vector3<f64>;

const EPS: f64 = 1e-9;

/// Closed 2D polygon given by its vertex ring (meters). The closing edge from
/// the last vertex back to the first is implicit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Polygon {
    pub vertices: Vec<[f64; 2]>,
}

impl Polygon {
    pub fn new(vertices: Vec<[f64; 2]>) -> Self {
        Self { vertices }
    }

    /// Axis-aligned rectangle helper.
    pub fn rect(min: [f64; 2], max: [f64; 2]) -> Self {
        Self::new(vec![min, [max[0], min[1]], max, [min[0], max[1]]])
    }

    pub fn is_valid(&self) -> bool {
        self.vertices.len() >= 3 && self.vertices.iter().all(|v| v[0].is_finite() && v[1].is_finite())
    }

    pub fn edges(&self) -> impl Iterator<Item = ([f64; 2], [f64; 2])> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    /// Point-in-polygon by ray casting. Points on the boundary count as inside.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        if self.edges().any(|(a, b)| on_segment(a, b, p)) {
            return true;
        }
        let mut inside = false;
        for (a, b) in self.edges() {
            if (a[1] > p[1]) != (b[1] > p[1]) {
                let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
                if p[0] < x {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// True when the closed segment shares at least one point with the polygon
    /// (interior or boundary).
    pub fn intersects_segment(&self, a: [f64; 2], b: [f64; 2]) -> bool {
        self.contains(a) || self.contains(b) || self.edges().any(|(c, d)| segments_intersect(a, b, c, d))
    }

    /// True when the whole segment stays inside the closed polygon. Both
    /// endpoints must be inside and the segment may not properly cross an
    /// edge; the midpoint of every sub-piece between boundary contacts is
    /// tested so concave notches are caught.
    pub fn contains_segment(&self, a: [f64; 2], b: [f64; 2]) -> bool {
        if !self.contains(a) || !self.contains(b) {
            return false;
        }
        let mut ts = vec![0.0, 1.0];
        for (c, d) in self.edges() {
            if let Some(t) = segment_param(a, b, c, d) {
                ts.push(t);
            }
            for v in [c, d] {
                if on_segment(a, b, v) {
                    ts.push(project_param(a, b, v));
                }
            }
        }
        ts.sort_by(f64::total_cmp);
        ts.windows(2).all(|w| {
            let t = 0.5 * (w[0] + w[1]);
            self.contains([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])])
        })
    }

    /// Total order used to canonicalise polygon lists.
    pub fn canonical_cmp(&self, other: &Self) -> Ordering {
        let n = self.vertices.len().cmp(&other.vertices.len());
        if n != Ordering::Equal {
            return n;
        }
        for (u, v) in self.vertices.iter().zip(&other.vertices) {
            let o = u[0].total_cmp(&v[0]).then(u[1].total_cmp(&v[1]));
            if o != Ordering::Equal {
                return o;
            }
        }
        Ordering::Equal
    }
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn on_segment(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> bool {
    let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt().max(1.0);
    cross(a, b, p).abs() <= EPS * len
        && p[0] >= a[0].min(b[0]) - EPS
        && p[0] <= a[0].max(b[0]) + EPS
        && p[1] >= a[1].min(b[1]) - EPS
        && p[1] <= a[1].max(b[1]) + EPS
}

fn project_param(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let l2 = d[0] * d[0] + d[1] * d[1];
    if l2 == 0.0 {
        0.0
    } else {
        (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / l2).clamp(0.0, 1.0)
    }
}

/// Parameter along `a→b` of a proper crossing with `c→d`, if any.
fn segment_param(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> Option<f64> {
    let r = [b[0] - a[0], b[1] - a[1]];
    let s = [d[0] - c[0], d[1] - c[1]];
    let denom = r[0] * s[1] - r[1] * s[0];
    if denom.abs() < 1e-15 {
        return None;
    }
    let t = ((c[0] - a[0]) * s[1] - (c[1] - a[1]) * s[0]) / denom;
    let u = ((c[0] - a[0]) * r[1] - (c[1] - a[1]) * r[0]) / denom;
    ((0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&u)).then_some(t)
}

/// Closed-segment intersection test in the plane (touching counts).
pub fn segments_intersect(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    if ((d1 > EPS && d2 < -EPS) || (d1 < -EPS && d2 > EPS)) && ((d3 > EPS && d4 < -EPS) || (d3 < -EPS && d4 > EPS)) {
        return true;
    }
    on_segment(c, d, a) || on_segment(c, d, b) || on_segment(a, b, c) || on_segment(a, b, d)
}

pub fn horizontal(p: &Vec3) -> [f64; 2] {
    [p.x, p.y]
}

pub fn point_segment_distance(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let ab = b - a;
    let l2 = ab.norm_squared();
    if l2 == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / l2).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

/// Minimum distance between two closed 3D segments (clamped closest-point
/// method).
pub fn segment_distance(p1: &Vec3, q1: &Vec3, p2: &Vec3, q2: &Vec3) -> f64 {
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.norm_squared();
    let e = d2.norm_squared();
    let f = d2.dot(&r);
    let (s, t);
    if a <= EPS && e <= EPS {
        return r.norm();
    }
    if a <= EPS {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if e <= EPS {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s0 = if denom > EPS { ((b * f - c * e) / denom).clamp(0.0, 1.0) } else { 0.0 };
            let mut t0 = (b * s0 + f) / e;
            if t0 < 0.0 {
                t0 = 0.0;
                s0 = (-c / a).clamp(0.0, 1.0);
            } else if t0 > 1.0 {
                t0 = 1.0;
                s0 = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = s0;
            t = t0;
        }
    }
    ((p1 + d1 * s) - (p2 + d2 * t)).norm()
}

/// Lexicographic comparison of point sequences.
pub fn cmp_points(a: &[Vec3], b: &[Vec3]) -> Ordering {
    for (u, v) in a.iter().zip(b) {
        let o = u.x.total_cmp(&v.x).then(u.y.total_cmp(&v.y)).then(u.z.total_cmp(&v.z));
        if o != Ordering::Equal {
            return o;
        }
    }
    a.len().cmp(&b.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_contains_and_boundary() {
        let sq = Polygon::rect([0.0, 0.0], [10.0, 10.0]);
        assert!(sq.contains([5.0, 5.0]));
        assert!(sq.contains([0.0, 5.0]));
        assert!(!sq.contains([11.0, 5.0]));
    }

    #[test]
    fn segment_crossing_polygon_with_outside_endpoints() {
        let sq = Polygon::rect([0.0, 0.0], [10.0, 10.0]);
        assert!(sq.intersects_segment([-5.0, 5.0], [15.0, 5.0]));
        assert!(!sq.intersects_segment([-5.0, 15.0], [15.0, 15.0]));
    }

    #[test]
    fn concave_polygon_segment_containment() {
        // U shape: notch between x in [4,6] for y > 2.
        let u = Polygon::new(vec![[0.0, 0.0], [10.0, 0.0], [10.0, 10.0], [6.0, 10.0], [6.0, 2.0], [4.0, 2.0], [4.0, 10.0], [0.0, 10.0]]);
        assert!(u.contains([2.0, 8.0]) && u.contains([8.0, 8.0]));
        assert!(!u.contains_segment([2.0, 8.0], [8.0, 8.0]));
        assert!(u.contains_segment([2.0, 1.0], [8.0, 1.0]));
    }

    #[test]
    fn skew_segment_distance() {
        let d = segment_distance(
            &Vec3::new(0.0, 0.0, 0.0),
            &Vec3::new(10.0, 0.0, 0.0),
            &Vec3::new(5.0, -5.0, 3.0),
            &Vec3::new(5.0, 5.0, 3.0),
        );
        assert!((d - 3.0).abs() < 1e-12);
    }
}
