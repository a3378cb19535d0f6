//! Fleet-level operations: route planning and airspace compliance,
//! congestion, secure channels, trust and load balancing.

mod load;
mod session;
mod trust;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::drone::EnergyModel;
use crate::geometry::{cmp_points, segment_distance, Vec3};
use crate::policy::{Constraint, PolicySet, SPEED};

pub use load::{balance_load, balance_onto, makespan, Assignment, LoadCandidate, LoadError, Task};
pub use session::{ChannelError, SecureSession, SessionState, SessionTable, HANDSHAKE_MESSAGES, HANDSHAKE_RETRIES};
pub use trust::{verify_trust, AttestationStore, AttestationToken, TrustLevel, TrustVerdict};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub waypoints: Vec<Vec3>,
    /// `leg_speed[i]` is flown from `waypoints[i]` to `waypoints[i + 1]`.
    pub leg_speed: Vec<f64>,
    /// Joules one drone needs to fly the route.
    pub energy_estimate: f64,
}

impl Route {
    pub fn new(waypoints: Vec<Vec3>, speed: f64, model: &EnergyModel) -> Self {
        assert!(!waypoints.is_empty(), "a route needs at least one waypoint");
        let legs = waypoints.len() - 1;
        let mut r = Self { waypoints, leg_speed: vec![speed; legs], energy_estimate: 0.0 };
        r.energy_estimate = r.estimate_energy(model);
        r
    }

    pub fn length(&self) -> f64 {
        self.waypoints.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
    }

    pub fn estimate_energy(&self, model: &EnergyModel) -> f64 {
        self.waypoints
            .windows(2)
            .zip(&self.leg_speed)
            .map(|(w, &v)| if v > 0.0 { (w[1] - w[0]).norm() / v * model.flight_power(v) } else { 0.0 })
            .sum()
    }

    /// Tick at which each waypoint is reached when leaving at `start`.
    pub fn timeline(&self, start: u64, tick_seconds: f64) -> Vec<u64> {
        let mut t = start as f64;
        let mut out = vec![start];
        for (w, &v) in self.waypoints.windows(2).zip(&self.leg_speed) {
            if v > 0.0 {
                t += (w[1] - w[0]).norm() / v / tick_seconds;
            }
            out.push(t.ceil() as u64);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Site {
    Waypoint(usize),
    Leg(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Violation {
    pub rule: String,
    pub site: Site,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AirspaceCheck {
    Compliant,
    Violations(Vec<Violation>),
}

impl AirspaceCheck {
    pub fn is_compliant(&self) -> bool {
        matches!(self, AirspaceCheck::Compliant)
    }

    pub fn rules(&self) -> Vec<&str> {
        match self {
            AirspaceCheck::Compliant => Vec::new(),
            AirspaceCheck::Violations(v) => {
                let mut r: Vec<&str> = v.iter().map(|x| x.rule.as_str()).collect();
                r.sort_unstable();
                r.dedup();
                r
            }
        }
    }
}

/// Check every waypoint and every leg against every rule.
pub fn check_airspace(route: &Route, airspace: &PolicySet) -> AirspaceCheck {
    let mut out = Vec::new();
    for (i, w) in route.waypoints.iter().enumerate() {
        out.extend(airspace.point_violations(w).into_iter().map(|rule| Violation { rule, site: Site::Waypoint(i) }));
    }
    for (i, (w, &v)) in route.waypoints.windows(2).zip(&route.leg_speed).enumerate() {
        out.extend(airspace.leg_violations(&w[0], &w[1], v).into_iter().map(|rule| Violation { rule, site: Site::Leg(i) }));
    }
    if out.is_empty() {
        AirspaceCheck::Compliant
    } else {
        AirspaceCheck::Violations(out)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RouteError {
    #[error("mission brief has no area of interest")]
    NoAreas,
    #[error("every candidate route violates the airspace")]
    NoCompliantRoute,
}

/// Greedy tour from `start` through `areas` beginning at `areas[first]`,
/// always moving to the nearest unvisited area (ties to the lower index).
fn nearest_neighbour_tour(start: &Vec3, areas: &[Vec3], first: usize) -> Vec<Vec3> {
    let mut left: Vec<usize> = (0..areas.len()).filter(|&i| i != first).collect();
    let mut tour = vec![*start, areas[first]];
    let mut cur = areas[first];
    while !left.is_empty() {
        let (k, _) = left
            .iter()
            .enumerate()
            .min_by(|(_, &a), (_, &b)| (areas[a] - cur).norm().total_cmp(&(areas[b] - cur).norm()).then(a.cmp(&b)))
            .expect("non-empty");
        let next = left.remove(k);
        cur = areas[next];
        tour.push(cur);
    }
    tour
}

/// Cruise speed allowed by the airspace: the requested speed clamped into
/// the `speed` rule when one exists.
pub fn allowed_speed(requested: f64, airspace: &PolicySet) -> f64 {
    match airspace.get(SPEED) {
        Some(Constraint::Interval([lo, hi])) => requested.min(*hi).max(*lo),
        _ => requested,
    }
}

/// Plan a route from `start` through every area of interest. One nearest-
/// neighbour tour is generated per possible first area; compliant tours
/// compete on total length, ties going to the lexicographically smaller
/// waypoint sequence.
pub fn plan_route(
    start: Vec3,
    areas: &[Vec3],
    cruise_speed: f64,
    airspace: &PolicySet,
    model: &EnergyModel,
) -> Result<Route, RouteError> {
    if areas.is_empty() {
        return Err(RouteError::NoAreas);
    }
    let speed = allowed_speed(cruise_speed, airspace);
    let mut best: Option<Route> = None;
    for first in 0..areas.len() {
        let route = Route::new(nearest_neighbour_tour(&start, areas, first), speed, model);
        if !check_airspace(&route, airspace).is_compliant() {
            continue;
        }
        let better = match &best {
            None => true,
            Some(b) => route
                .length()
                .total_cmp(&b.length())
                .then_with(|| cmp_points(&route.waypoints, &b.waypoints))
                .is_lt(),
        };
        if better {
            best = Some(route);
        }
    }
    best.ok_or(RouteError::NoCompliantRoute)
}

/// Route with arrival ticks, as published on a traffic feed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedRoute {
    pub id: u32,
    pub waypoints: Vec<Vec3>,
    pub ticks: Vec<u64>,
}

impl TimedRoute {
    pub fn from_route(id: u32, route: &Route, start: u64, tick_seconds: f64) -> Self {
        Self { id, waypoints: route.waypoints.clone(), ticks: route.timeline(start, tick_seconds) }
    }

    fn legs(&self) -> impl Iterator<Item = (&Vec3, &Vec3, u64, u64)> {
        self.waypoints
            .windows(2)
            .zip(self.ticks.windows(2))
            .map(|(w, t)| (&w[0], &w[1], t[0], t[1]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CongestionParams {
    /// Proximity radius in meters.
    pub distance: f64,
    /// Legs with more foreign routes nearby than this are flagged.
    pub threshold: usize,
}

impl Default for CongestionParams {
    fn default() -> Self {
        Self { distance: 200.0, threshold: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CongestionReport {
    /// Foreign routes near each leg.
    pub counts: Vec<usize>,
    pub flagged: Vec<usize>,
}

impl CongestionReport {
    pub fn needs_replan(&self) -> bool {
        !self.flagged.is_empty()
    }
}

/// For each leg of `route`, count the foreign routes with a leg passing
/// within `distance` during an overlapping time window.
pub fn detect_congestion(feed: &[TimedRoute], route: &TimedRoute, params: &CongestionParams) -> CongestionReport {
    let counts: Vec<usize> = route
        .legs()
        .map(|(a, b, t0, t1)| {
            feed.iter()
                .filter(|f| {
                    f.legs().any(|(c, d, s0, s1)| s0 <= t1 && t0 <= s1 && segment_distance(a, b, c, d) <= params.distance)
                })
                .count()
        })
        .collect();
    let flagged = counts.iter().enumerate().filter(|(_, &c)| c > params.threshold).map(|(i, _)| i).collect();
    CongestionReport { counts, flagged }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Polygon;
    use crate::policy::{ALTITUDE, GEOFENCE};
    use proptest::prelude::*;

    fn v(x: f64, y: f64) -> Vec3 {
        Vec3::new(x, y, 50.0)
    }

    #[test]
    fn empty_rules_compliant() {
        let r = Route::new(vec![v(0.0, 0.0), v(10.0, 0.0)], 5.0, &EnergyModel::default());
        assert!(check_airspace(&r, &PolicySet::new()).is_compliant());
    }

    #[test]
    fn altitude_violation_reported() {
        let r = Route::new(vec![Vec3::new(0.0, 0.0, 150.0)], 5.0, &EnergyModel::default());
        let air = PolicySet::new().with_interval(ALTITUDE, 0.0, 120.0);
        assert_eq!(check_airspace(&r, &air).rules(), vec![ALTITUDE]);
    }

    #[test]
    fn leg_through_forbidden_zone() {
        let r = Route::new(vec![v(0.0, 5.0), v(20.0, 5.0)], 5.0, &EnergyModel::default());
        let air = PolicySet::new().with_region(GEOFENCE, vec![], vec![Polygon::rect([8.0, 0.0], [12.0, 10.0])]);
        assert_eq!(
            check_airspace(&r, &air),
            AirspaceCheck::Violations(vec![Violation { rule: GEOFENCE.into(), site: Site::Leg(0) }])
        );
    }

    #[test]
    fn single_area_direct_route() {
        let air = PolicySet::new().with_region(GEOFENCE, vec![Polygon::rect([-100.0, -100.0], [100.0, 100.0])], vec![]);
        let r = plan_route(v(0.0, 0.0), &[v(50.0, 50.0)], 10.0, &air, &EnergyModel::default()).unwrap();
        assert_eq!(r.waypoints, vec![v(0.0, 0.0), v(50.0, 50.0)]);
        let d = 50.0f64 * 2f64.sqrt();
        assert!((r.energy_estimate - d / 10.0 * 300.0).abs() < 1e-9);
    }

    #[test]
    fn forbidden_areas_no_route() {
        let air = PolicySet::new().with_region(GEOFENCE, vec![], vec![Polygon::rect([40.0, 40.0], [60.0, 60.0])]);
        assert_eq!(
            plan_route(v(0.0, 0.0), &[v(50.0, 50.0), v(45.0, 55.0)], 10.0, &air, &EnergyModel::default()),
            Err(RouteError::NoCompliantRoute)
        );
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for i in 0..=p.len() {
                let mut q = p.clone();
                q.insert(i, n - 1);
                out.push(q);
            }
        }
        out
    }

    fn tour_length(start: &Vec3, areas: &[Vec3], order: &[usize]) -> f64 {
        let mut cur = *start;
        let mut len = 0.0;
        for &i in order {
            len += (areas[i] - cur).norm();
            cur = areas[i];
        }
        len
    }

    #[test]
    fn square_perimeter_matches_brute_force() {
        let areas = [v(0.0, 0.0), v(100.0, 0.0), v(100.0, 100.0), v(0.0, 100.0)];
        let r = plan_route(v(0.0, 0.0), &areas, 10.0, &PolicySet::new(), &EnergyModel::default()).unwrap();
        let best = permutations(4).iter().map(|p| tour_length(&v(0.0, 0.0), &areas, p)).fold(f64::INFINITY, f64::min);
        assert!((r.length() - best).abs() < 1e-9);
        assert!((r.length() - 300.0).abs() < 1e-9);
        assert_eq!(&r.waypoints[1..], &[v(0.0, 0.0), v(100.0, 0.0), v(100.0, 100.0), v(0.0, 100.0)]);
    }

    #[test]
    fn congestion_count_rule() {
        let ours = TimedRoute { id: 0, waypoints: vec![v(0.0, 0.0), v(1000.0, 0.0)], ticks: vec![0, 100] };
        let feed: Vec<TimedRoute> = (0..5)
            .map(|i| TimedRoute { id: i + 1, waypoints: vec![v(500.0, -500.0), v(500.0, 500.0)], ticks: vec![10, 90] })
            .collect();
        let rep = detect_congestion(&feed, &ours, &CongestionParams::default());
        assert_eq!(rep.counts, vec![5]);
        assert_eq!(rep.flagged, vec![0]);
        assert!(detect_congestion(&[], &ours, &CongestionParams::default()).flagged.is_empty());
        // same place, disjoint time window
        let late: Vec<TimedRoute> = feed.iter().cloned().map(|mut f| { f.ticks = vec![200, 300]; f }).collect();
        assert_eq!(detect_congestion(&late, &ours, &CongestionParams::default()).counts, vec![0]);
    }

    /// Closest approach of two segments by dense parametric sampling plus
    /// exact endpoint projections; independent of the clamped solver.
    fn sampled_distance(a: &Vec3, b: &Vec3, c: &Vec3, d: &Vec3) -> f64 {
        let n = 400;
        let mut best = f64::INFINITY;
        for i in 0..=n {
            let p = a + (b - a) * (i as f64 / n as f64);
            let cd = d - c;
            let t = if cd.norm_squared() == 0.0 { 0.0 } else { ((p - c).dot(&cd) / cd.norm_squared()).clamp(0.0, 1.0) };
            best = best.min((p - (c + cd * t)).norm());
        }
        best
    }

    proptest! {
        #[test]
        fn congestion_matches_recount(legs in proptest::collection::vec((0.0..2000.0f64, 0.0..2000.0f64, 0u64..50), 2..5),
                                      feed in proptest::collection::vec(proptest::collection::vec((0.0..2000.0f64, 0.0..2000.0f64, 0u64..50), 2..4), 0..8)) {
            let mk = |id: u32, pts: &Vec<(f64, f64, u64)>| {
                let mut t = 0;
                let ticks = pts.iter().map(|p| { t += p.2; t }).collect();
                TimedRoute { id, waypoints: pts.iter().map(|p| v(p.0, p.1)).collect(), ticks }
            };
            let ours = mk(0, &legs);
            let feed: Vec<TimedRoute> = feed.iter().enumerate().map(|(i, f)| mk(i as u32 + 1, f)).collect();
            let params = CongestionParams::default();
            let rep = detect_congestion(&feed, &ours, &params);
            for (i, w) in ours.waypoints.windows(2).enumerate() {
                let (t0, t1) = (ours.ticks[i], ours.ticks[i + 1]);
                let mut sure = 0;
                let mut maybe = 0;
                for f in &feed {
                    let mut near = false;
                    let mut borderline = false;
                    for (j, fw) in f.waypoints.windows(2).enumerate() {
                        if f.ticks[j] > t1 || t0 > f.ticks[j + 1] { continue; }
                        let d = sampled_distance(&w[0], &w[1], &fw[0], &fw[1]);
                        if d <= params.distance - 1.0 { near = true; }
                        else if d <= params.distance + 1.0 { borderline = true; }
                    }
                    if near { sure += 1; } else if borderline { maybe += 1; }
                }
                prop_assert!(rep.counts[i] >= sure && rep.counts[i] <= sure + maybe,
                    "leg {i}: got {} expected {sure}..={}", rep.counts[i], sure + maybe);
            }
        }

        #[test]
        fn planned_routes_are_compliant(fx in -200.0..0.0f64, fy in -200.0..0.0f64, size in 300.0..600.0f64,
                                        hole in proptest::option::of((0.0..200.0f64, 0.0..200.0f64, 10.0..80.0f64)),
                                        areas in proptest::collection::vec((0.0..250.0f64, 0.0..250.0f64), 1..6)) {
            let forbidden: Vec<Polygon> = hole.iter().map(|&(x, y, s)| Polygon::rect([x, y], [x + s, y + s])).collect();
            let air = PolicySet::new()
                .with_interval(ALTITUDE, 0.0, 120.0)
                .with_region(GEOFENCE, vec![Polygon::rect([fx, fy], [fx + size, fy + size])], forbidden);
            let pts: Vec<Vec3> = areas.iter().map(|&(x, y)| v(x, y)).collect();
            match plan_route(v(0.0, 0.0), &pts, 10.0, &air, &EnergyModel::default()) {
                Ok(r) => {
                    prop_assert!(check_airspace(&r, &air).is_compliant());
                    prop_assert_eq!(r.waypoints.len(), pts.len() + 1);
                }
                Err(e) => prop_assert_eq!(e, RouteError::NoCompliantRoute),
            }
        }
    }
}
