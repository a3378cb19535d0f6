//! Individual-drone operations: flight, energy, monitoring, avoidance,
//! local policy and self-preservation.

mod avoid;
mod energy;
mod rules;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec3;
use crate::ids::{Capability, DroneId, OrgId};
use crate::policy::PolicySet;

pub use avoid::{detect_and_avoid, Avoidance, AvoidanceSource, Obstacle, ObstacleDetected};
pub use energy::{Activity, EnergyModel, EnergyState};
pub use rules::{
    evaluate_self_preservation, local_policy_check, service_level_check, Action, Obligation, PolicyVerdict,
    ReasonCode, SelfPreservationOutcome, SelfPreservationThresholds, ServiceStatus, Verdict, KNOWN_ACTIONS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ring {
    Core,
    Extended,
}

/// A drone is master or cluster head, never both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Leadership {
    #[default]
    None,
    Master,
    ClusterHead,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DroneStatus {
    /// In inventory or waiting to enrol.
    Standby,
    Active,
    Returning,
    Home,
    Sacrificing,
    Grounded,
    Captured,
    Departed,
}

impl DroneStatus {
    pub fn name(&self) -> &'static str {
        match self {
            DroneStatus::Standby => "standby",
            DroneStatus::Active => "active",
            DroneStatus::Returning => "returning",
            DroneStatus::Home => "home",
            DroneStatus::Sacrificing => "sacrificing",
            DroneStatus::Grounded => "grounded",
            DroneStatus::Captured => "captured",
            DroneStatus::Departed => "departed",
        }
    }

    pub fn is_airborne(&self) -> bool {
        matches!(self, DroneStatus::Active | DroneStatus::Returning | DroneStatus::Sacrificing)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum DroneError {
    #[error("drone {drone} depleted its battery (short by {shortfall:.3} J)")]
    Depleted { drone: DroneId, shortfall: f64 },
    #[error("drone {0} is not airborne")]
    NotAirborne(DroneId),
    #[error("time step must be at least one tick")]
    ZeroStep,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DroneState {
    pub id: DroneId,
    pub org: OrgId,
    pub position: Vec3,
    pub velocity: Vec3,
    pub energy: EnergyState,
    /// Work units per tick.
    pub compute_capacity: f64,
    /// In `[0, 1]`.
    pub health: f64,
    /// Capability → capacity (sensor set is the key set).
    pub capabilities: BTreeMap<Capability, f64>,
    pub policy: PolicySet,
    pub ring: Ring,
    pub leadership: Leadership,
    pub max_speed: f64,
    pub sensor_range: f64,
    pub home: Vec3,
    pub status: DroneStatus,
}

impl DroneState {
    pub fn new(id: u32, position: Vec3, capacity_j: f64, reserve_j: f64) -> Self {
        Self {
            id: crate::ids::NodeId(id),
            org: OrgId::default(),
            position,
            velocity: Vec3::zeros(),
            energy: EnergyState::new(capacity_j, reserve_j),
            compute_capacity: 10.0,
            health: 1.0,
            capabilities: BTreeMap::new(),
            policy: PolicySet::new(),
            ring: Ring::Core,
            leadership: Leadership::None,
            max_speed: 10.0,
            sensor_range: 100.0,
            home: position,
            status: DroneStatus::Active,
        }
    }

    pub fn has_capability(&self, c: &Capability) -> bool {
        self.capabilities.get(c).is_some_and(|v| *v > 0.0)
    }

    fn ground(&mut self) {
        self.health = 0.0;
        self.velocity = Vec3::zeros();
        self.status = DroneStatus::Grounded;
    }

    /// Debit an activity. Time-based classes take `dt` ticks scaled by
    /// `tick_seconds`; per-unit classes ignore the duration.
    pub fn consume(
        &mut self,
        model: &EnergyModel,
        activity: Activity,
        amount: f64,
        dt: u64,
        tick_seconds: f64,
    ) -> Result<f64, DroneError> {
        let joules = model.cost(activity, amount, dt as f64 * tick_seconds);
        match self.energy.debit(activity, joules) {
            Ok(j) => Ok(j),
            Err(shortfall) => {
                self.ground();
                Err(DroneError::Depleted { drone: self.id, shortfall })
            }
        }
    }

    /// Estimated energy to fly straight home at maximum speed.
    pub fn energy_to_home(&self, model: &EnergyModel, from: &Vec3) -> f64 {
        let d = (self.home - from).norm();
        if d == 0.0 || self.max_speed <= 0.0 {
            return 0.0;
        }
        d / self.max_speed * model.flight_power(self.max_speed)
    }

    /// SEVERE: energy above reserve no longer covers the trip home.
    pub fn is_power_severe(&self, model: &EnergyModel) -> bool {
        self.energy.remaining() - self.energy.reserve < self.energy_to_home(model, &self.position)
    }

    /// Move toward `waypoint` for `dt` ticks at `min(max_speed, required
    /// speed)`, debiting hover and cruise energy. Arrival within half a tick
    /// of travel snaps onto the waypoint.
    pub fn step_flight(
        &mut self,
        model: &EnergyModel,
        waypoint: &Vec3,
        dt: u64,
        tick_seconds: f64,
    ) -> Result<FlightStep, DroneError> {
        if dt == 0 {
            return Err(DroneError::ZeroStep);
        }
        if self.energy.remaining() <= 0.0 || !self.status.is_airborne() {
            return Err(DroneError::NotAirborne(self.id));
        }
        let secs = dt as f64 * tick_seconds;
        let offset = waypoint - self.position;
        let dist = offset.norm();
        let speed = if dist == 0.0 { 0.0 } else { self.max_speed.min(dist / secs) };

        let need = model.cost(Activity::Hover, 1.0, secs) + model.cost(Activity::Cruise, speed, secs);
        if need > self.energy.remaining() {
            let hover = model.cost(Activity::Hover, 1.0, secs).min(self.energy.remaining());
            let _ = self.energy.debit(Activity::Hover, hover);
            let rest = self.energy.remaining();
            let _ = self.energy.debit(Activity::Cruise, rest);
            self.ground();
            return Err(DroneError::Depleted { drone: self.id, shortfall: need - hover - rest });
        }
        self.consume(model, Activity::Hover, 1.0, dt, tick_seconds)?;
        self.consume(model, Activity::Cruise, speed, dt, tick_seconds)?;

        if dist == 0.0 {
            self.velocity = Vec3::zeros();
            return Ok(FlightStep { arrived: true, travelled: 0.0 });
        }
        let dir = offset / dist;
        let travel = speed * secs;
        let left = dist - travel;
        let arrived = left <= 0.5 * speed * tick_seconds + 1e-9;
        self.position = if arrived { *waypoint } else { self.position + dir * travel };
        self.velocity = dir * speed;
        Ok(FlightStep { arrived, travelled: travel.min(dist) })
    }

    /// Periodic monitoring report; `None` when `tick` is not a reporting
    /// tick. `load` is work units per tick currently committed.
    pub fn power_report(&self, model: &EnergyModel, tick: u64, interval: u64, load: f64) -> Option<PowerReport> {
        assert!(interval >= 1, "report interval must be positive");
        (tick > 0 && tick % interval == 0).then(|| self.snapshot_report(model, tick, load))
    }

    pub fn snapshot_report(&self, model: &EnergyModel, tick: u64, load: f64) -> PowerReport {
        PowerReport {
            drone: self.id,
            tick,
            energy_ratio: self.energy.ratio(),
            compute_headroom: (self.compute_capacity - load).max(0.0),
            health: self.health,
            severe: self.is_power_severe(model),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlightStep {
    pub arrived: bool,
    pub travelled: f64,
}

/// Fixed-field power/performance report broadcast to the swarm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerReport {
    pub drone: DroneId,
    pub tick: u64,
    pub energy_ratio: f64,
    pub compute_headroom: f64,
    pub health: f64,
    pub severe: bool,
}

impl PowerReport {
    /// Telemetry payload: `drone,tick,ratio,headroom,health,severe`.
    pub fn encode(&self) -> String {
        format!(
            "power_report,{},{},{:.6},{:.6},{:.6},{}",
            self.drone, self.tick, self.energy_ratio, self.compute_headroom, self.health, self.severe as u8
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn drone() -> DroneState {
        let mut d = DroneState::new(1, Vec3::zeros(), 1.0e6, 1.0e4);
        d.max_speed = 5.0;
        d
    }

    #[test]
    fn hover_at_waypoint_only_costs_hover() {
        let mut d = drone();
        let m = EnergyModel::default();
        let s = d.step_flight(&m, &Vec3::zeros(), 1, 1.0).unwrap();
        assert!(s.arrived);
        assert_eq!(d.position, Vec3::zeros());
        assert_eq!(d.energy.consumed(Activity::Hover), 100.0);
        assert_eq!(d.energy.consumed(Activity::Cruise), 0.0);
    }

    #[test]
    fn reaches_waypoint_in_two_ticks() {
        let mut d = drone();
        let m = EnergyModel::default();
        let wp = Vec3::new(10.0, 0.0, 0.0);
        let s = d.step_flight(&m, &wp, 2, 1.0).unwrap();
        assert!(s.arrived);
        assert_eq!(d.position, wp);
        assert_eq!(d.energy.consumed(Activity::Cruise), 20.0 * 5.0 * 2.0);
    }

    #[test]
    fn snaps_within_half_tick() {
        let m = EnergyModel::default();
        // 2.4 m short after one tick is inside half a tick's travel (2.5 m)
        let mut d = drone();
        let wp = Vec3::new(7.4, 0.0, 0.0);
        assert!(d.step_flight(&m, &wp, 1, 1.0).unwrap().arrived);
        assert_eq!(d.position, wp);
        // 2.6 m short is not
        let mut d = drone();
        let wp = Vec3::new(7.6, 0.0, 0.0);
        assert!(!d.step_flight(&m, &wp, 1, 1.0).unwrap().arrived);
        assert_eq!(d.position, Vec3::new(5.0, 0.0, 0.0));
        assert!(d.step_flight(&m, &wp, 1, 1.0).unwrap().arrived);
        assert_eq!(d.position, wp);
    }

    #[test]
    fn depletion_grounds_drone() {
        let mut d = DroneState::new(1, Vec3::zeros(), 150.0, 0.0);
        let m = EnergyModel::default();
        d.step_flight(&m, &Vec3::zeros(), 1, 1.0).unwrap();
        let err = d.step_flight(&m, &Vec3::zeros(), 1, 1.0).unwrap_err();
        assert!(matches!(err, DroneError::Depleted { .. }));
        assert_eq!(d.health, 0.0);
        assert_eq!(d.status, DroneStatus::Grounded);
        assert_eq!(d.energy.remaining(), 0.0);
        assert!(d.energy.conservation_error() < 1e-12);
        assert_eq!(d.step_flight(&m, &Vec3::zeros(), 1, 1.0), Err(DroneError::NotAirborne(d.id)));
    }

    #[test]
    fn consume_hover_ten_seconds() {
        let mut d = drone();
        let j = d.consume(&EnergyModel::default(), Activity::Hover, 1.0, 10, 1.0).unwrap();
        assert_eq!(j, 1000.0);
        assert_eq!(d.consume(&EnergyModel::default(), Activity::Compute, 0.0, 1, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn report_intervals_and_severe_boundary() {
        let d = drone();
        let m = EnergyModel::default();
        let ticks: Vec<u64> = (0..=35).filter(|&t| d.power_report(&m, t, 10, 0.0).is_some()).collect();
        assert_eq!(ticks, vec![10, 20, 30]);
        assert!(!d.snapshot_report(&m, 10, 0.0).severe);

        let mut far = DroneState::new(2, Vec3::new(100.0, 0.0, 0.0), 1000.0, 1000.0);
        far.home = Vec3::zeros();
        assert!(far.snapshot_report(&m, 10, 0.0).severe);
    }

    proptest! {
        #[test]
        fn bookkeeping_is_exact(steps in proptest::collection::vec((-200.0..200.0f64, -200.0..200.0f64, 0.0..100.0f64, 1u64..4), 1..60),
                                units in proptest::collection::vec((0usize..4, 0.0..1000.0f64), 0..50)) {
            let mut d = DroneState::new(1, Vec3::zeros(), 5.0e6, 0.0);
            let m = EnergyModel::default();
            for (x, y, z, dt) in steps {
                if d.step_flight(&m, &Vec3::new(x, y, z), dt, 1.0).is_err() { break; }
                prop_assert!(d.energy.conservation_error() <= 1e-9);
            }
            let mut booked = d.energy.total_consumed();
            for (a, amount) in units {
                let act = Activity::ALL[a];
                if let Ok(j) = d.consume(&m, act, amount, 1, 1.0) { booked += j; }
            }
            let sum: f64 = Activity::ALL.iter().map(|a| d.energy.consumed(*a)).sum();
            prop_assert!((sum - booked).abs() <= 1e-9 * d.energy.capacity());
            prop_assert!(d.energy.conservation_error() <= 1e-9);
        }

        /// A drone that heads home as soon as it turns SEVERE reaches home
        /// without depleting, provided the reserve covers one step of flight.
        #[test]
        fn severe_obeying_drone_gets_home(out_x in -2000.0..2000.0f64, out_y in -2000.0..2000.0f64,
                                          capacity in 2.0e4..2.0e5f64, speed in 2.0..15.0f64) {
            let m = EnergyModel::default();
            let reserve = 2.0 * m.flight_power(speed);
            let mut d = DroneState::new(1, Vec3::new(0.0, 0.0, 30.0), capacity, reserve);
            d.max_speed = speed;
            let target = Vec3::new(out_x, out_y, 30.0);
            let mut heading_home = false;
            for _ in 0..100_000 {
                if !heading_home && d.is_power_severe(&m) { heading_home = true; }
                let wp = if heading_home { d.home } else { target };
                let step = d.step_flight(&m, &wp, 1, 1.0);
                prop_assert!(step.is_ok(), "depleted at {:?}", d.position);
                if heading_home && d.position == d.home { break; }
                if !heading_home && d.position == target { heading_home = true; }
            }
            prop_assert_eq!(d.position, d.home);
        }
    }
}
