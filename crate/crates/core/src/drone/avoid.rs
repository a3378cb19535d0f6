//! Obstacle detection and lateral avoidance.

use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;
use crate::ids::DroneId;

use super::DroneState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub id: u32,
    pub position: Vec3,
    pub radius: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_detected_by: Option<DroneId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detected_at: Option<u64>,
}

impl Obstacle {
    pub fn new(id: u32, position: Vec3, radius: f64) -> Self {
        Self { id, position, radius, first_detected_by: None, detected_at: None }
    }
}

/// Broadcast payload announcing a locally sensed obstacle.
#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleDetected {
    pub obstacle: u32,
    pub position: Vec3,
    pub radius: f64,
    pub detected_by: DroneId,
    pub tick: u64,
}

impl ObstacleDetected {
    pub fn encode(&self) -> String {
        format!(
            "obstacle_detected,{},{:.3},{:.3},{:.3},{:.3},{},{}",
            self.obstacle, self.position.x, self.position.y, self.position.z, self.radius, self.detected_by, self.tick
        )
    }

    pub fn to_obstacle(&self) -> Obstacle {
        Obstacle {
            id: self.obstacle,
            position: self.position,
            radius: self.radius,
            first_detected_by: Some(self.detected_by),
            detected_at: Some(self.tick),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AvoidanceSource {
    /// Sensed by this drone; the swarm must be told.
    Local,
    /// Known from a peer broadcast; no local reading needed.
    Peer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Avoidance {
    pub obstacle: u32,
    pub source: AvoidanceSource,
    /// Sidestep point, then the point abeam-and-past the obstacle.
    pub waypoints: [Vec3; 2],
    pub lateral_offset: f64,
    pub broadcast: Option<ObstacleDetected>,
}

struct Threat<'a> {
    obstacle: &'a Obstacle,
    along: f64,
    source: AvoidanceSource,
}

fn heading(state: &DroneState, waypoint: &Vec3) -> Option<Vec3> {
    if state.velocity.norm() > 0.0 {
        return Some(state.velocity.normalize());
    }
    let d = waypoint - state.position;
    (d.norm() > 0.0).then(|| d.normalize())
}

/// Horizontal unit vector perpendicular to `u`; the x axis when `u` is vertical.
fn lateral_axis(u: &Vec3) -> Vec3 {
    let n = Vec3::new(-u.y, u.x, 0.0);
    if n.norm() < 1e-12 {
        Vec3::x()
    } else {
        n.normalize()
    }
}

/// Pick the most urgent obstacle on the current flight path and plan a
/// sidestep that clears it by `radius + margin`. Locally sensed obstacles
/// must lie within sensor range; `peer_known` obstacles are avoided at any
/// range. Returns `None` when nothing threatens the path.
pub fn detect_and_avoid(
    state: &DroneState,
    waypoint: &Vec3,
    sensed: &[Obstacle],
    peer_known: &[Obstacle],
    margin: f64,
    tick: u64,
) -> Option<Avoidance> {
    let u = heading(state, waypoint)?;
    let to_wp = (waypoint - state.position).norm();

    let mut best: Option<Threat> = None;
    let candidates = sensed
        .iter()
        .map(|o| (o, AvoidanceSource::Local))
        .chain(peer_known.iter().map(|o| (o, AvoidanceSource::Peer)));
    for (o, source) in candidates {
        let rel = o.position - state.position;
        if source == AvoidanceSource::Local && rel.norm() > state.sensor_range {
            continue;
        }
        let along = rel.dot(&u);
        let clear = o.radius + margin;
        let perp = (rel - u * along).norm();
        if along <= 0.0 || perp >= clear || along > to_wp + clear {
            continue;
        }
        let better = match &best {
            None => true,
            Some(b) => {
                (along, o.id, source == AvoidanceSource::Peer) < (b.along, b.obstacle.id, b.source == AvoidanceSource::Peer)
            }
        };
        if better {
            best = Some(Threat { obstacle: o, along, source });
        }
    }
    let threat = best?;
    let o = threat.obstacle;
    let clear = o.radius + margin;
    let n = lateral_axis(&u);
    let lateral = (o.position - state.position).dot(&n);

    // side offsets that put the drone `clear` away from the obstacle's line
    let plus = lateral + clear;
    let minus = lateral - clear;
    let w_plus = state.position + n * plus;
    let w_minus = state.position + n * minus;
    let take_plus = match plus.abs().total_cmp(&minus.abs()) {
        std::cmp::Ordering::Less => true,
        std::cmp::Ordering::Greater => false,
        std::cmp::Ordering::Equal => (w_plus.x, w_plus.y) >= (w_minus.x, w_minus.y),
    };
    let (offset, w1) = if take_plus { (plus, w_plus) } else { (minus, w_minus) };
    let w2 = w1 + u * (threat.along + clear);

    let broadcast = (threat.source == AvoidanceSource::Local).then(|| ObstacleDetected {
        obstacle: o.id,
        position: o.position,
        radius: o.radius,
        detected_by: state.id,
        tick,
    });
    Some(Avoidance { obstacle: o.id, source: threat.source, waypoints: [w1, w2], lateral_offset: offset, broadcast })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drone::{DroneStatus, EnergyModel};
    use proptest::prelude::*;

    fn flying(v: Vec3) -> DroneState {
        let mut d = DroneState::new(3, Vec3::new(0.0, 0.0, 50.0), 1.0e7, 0.0);
        d.velocity = v;
        d.max_speed = 10.0;
        d.sensor_range = 100.0;
        d
    }

    #[test]
    fn nothing_in_range() {
        let d = flying(Vec3::new(10.0, 0.0, 0.0));
        let far = Obstacle::new(1, Vec3::new(150.0, 0.0, 50.0), 5.0);
        assert!(detect_and_avoid(&d, &Vec3::new(500.0, 0.0, 50.0), &[far], &[], 2.0, 0).is_none());
        assert!(detect_and_avoid(&d, &Vec3::new(500.0, 0.0, 50.0), &[], &[], 2.0, 0).is_none());
    }

    #[test]
    fn dead_ahead_takes_positive_x_side() {
        let d = flying(Vec3::new(0.0, 10.0, 0.0));
        let o = Obstacle::new(7, Vec3::new(0.0, 50.0, 50.0), 5.0);
        let a = detect_and_avoid(&d, &Vec3::new(0.0, 500.0, 50.0), &[o], &[], 2.0, 4).unwrap();
        assert_eq!(a.lateral_offset.abs(), 7.0);
        // heading +y: the lateral axis is -x, so the +x side is the negative offset
        assert!(a.waypoints[0].x > 0.0);
        assert_eq!(a.broadcast.as_ref().unwrap().obstacle, 7);
        assert_eq!(a.broadcast.unwrap().tick, 4);
    }

    #[test]
    fn peer_known_obstacle_avoided_without_sensing() {
        let d = flying(Vec3::new(10.0, 0.0, 0.0));
        let o = Obstacle::new(2, Vec3::new(400.0, 1.0, 50.0), 5.0);
        let a = detect_and_avoid(&d, &Vec3::new(800.0, 0.0, 50.0), &[], &[o], 2.0, 0).unwrap();
        assert_eq!(a.source, AvoidanceSource::Peer);
        assert!(a.broadcast.is_none());
        // obstacle sits at +1 on the lateral axis, so step to the other side
        assert!((a.lateral_offset + 6.0).abs() < 1e-12);
    }

    #[test]
    fn obstacle_behind_or_beside_ignored() {
        let d = flying(Vec3::new(10.0, 0.0, 0.0));
        let behind = Obstacle::new(1, Vec3::new(-30.0, 0.0, 50.0), 5.0);
        let beside = Obstacle::new(2, Vec3::new(30.0, 20.0, 50.0), 5.0);
        assert!(detect_and_avoid(&d, &Vec3::new(500.0, 0.0, 50.0), &[behind, beside], &[], 2.0, 0).is_none());
    }

    proptest! {
        /// After the manoeuvre the drone never comes closer to the obstacle
        /// than its radius while flying the two avoidance legs.
        #[test]
        fn manoeuvre_keeps_clear(ox in 5.0..95.0f64, oy in -8.0..8.0f64, oz in -8.0..8.0f64,
                                 radius in 0.5..6.0f64, margin in 0.0..3.0f64, vy in -3.0..3.0f64) {
            let mut d = flying(Vec3::new(10.0, vy, 0.0));
            let o = Obstacle::new(1, Vec3::new(ox, oy, 50.0 + oz), radius);
            prop_assume!((o.position - d.position).norm() > radius);
            let wp = d.position + d.velocity.normalize() * 300.0;
            let Some(a) = detect_and_avoid(&d, &wp, std::slice::from_ref(&o), &[], margin, 0) else {
                return Ok(());
            };
            let m = EnergyModel::default();
            d.status = DroneStatus::Active;
            let mut min_dist = f64::INFINITY;
            for target in a.waypoints {
                for _ in 0..200 {
                    let arrived = d.step_flight(&m, &target, 1, 0.1).unwrap().arrived;
                    min_dist = min_dist.min((d.position - o.position).norm());
                    if arrived { break; }
                }
            }
            prop_assert!(min_dist >= radius, "min distance {min_dist} < radius {radius}");
        }
    }
}
