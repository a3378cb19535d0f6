//! Longest-processing-time-first load balancing.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::drone::EnergyModel;
use crate::ids::{Capability, DroneId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Task {
    pub id: u32,
    /// Work units.
    pub cost: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capability: Option<Capability>,
}

impl Task {
    pub fn new(id: u32, cost: f64) -> Self {
        Self { id, cost, capability: None }
    }
}

/// Fleet snapshot entry as seen by the balancer.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadCandidate {
    pub id: DroneId,
    /// Compute capacity in work units per tick.
    pub capacity: f64,
    /// Energy above reserve.
    pub usable_energy: f64,
    pub capabilities: BTreeSet<Capability>,
    pub healthy: bool,
    pub severe: bool,
    pub trusted: bool,
    pub free_rider: bool,
}

impl LoadCandidate {
    pub fn new(id: DroneId, capacity: f64) -> Self {
        Self {
            id,
            capacity,
            usable_energy: f64::INFINITY,
            capabilities: BTreeSet::new(),
            healthy: true,
            severe: false,
            trusted: true,
            free_rider: false,
        }
    }

    fn eligible(&self) -> bool {
        self.healthy && !self.severe && self.trusted && self.capacity > 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Assignment {
    pub task_to_drone: BTreeMap<u32, DroneId>,
    /// Work units assigned per drone.
    pub load: BTreeMap<DroneId, f64>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LoadError {
    #[error("no eligible drone can take task {0}")]
    InfeasibleTask(u32),
}

/// Largest completion time `load / capacity` over the fleet.
pub fn makespan(assignment: &Assignment, fleet: &[LoadCandidate]) -> f64 {
    fleet
        .iter()
        .map(|c| assignment.load.get(&c.id).copied().unwrap_or(0.0) / c.capacity)
        .fold(0.0, f64::max)
}

/// Assign tasks in decreasing cost order (ties by task id). Each goes to the
/// eligible drone with the most normalised headroom left, i.e. the smallest
/// `load / capacity`, provided its compute energy for the new total stays
/// within usable energy. Free riders are only used when nobody else fits;
/// remaining ties go to the lowest drone id. SEVERE, unhealthy and untrusted
/// drones never receive work.
pub fn balance_load(tasks: &[Task], fleet: &[LoadCandidate], model: &EnergyModel) -> Result<Assignment, LoadError> {
    balance_onto(tasks, fleet, &BTreeMap::new(), model)
}

/// As [`balance_load`], starting from work the drones already carry.
/// The returned loads include `committed`.
pub fn balance_onto(
    tasks: &[Task],
    fleet: &[LoadCandidate],
    committed: &BTreeMap<DroneId, f64>,
    model: &EnergyModel,
) -> Result<Assignment, LoadError> {
    let mut order: Vec<&Task> = tasks.iter().collect();
    order.sort_by(|a, b| b.cost.total_cmp(&a.cost).then(a.id.cmp(&b.id)));
    let mut out = Assignment::default();
    for c in fleet.iter().filter(|c| c.eligible()) {
        out.load.insert(c.id, committed.get(&c.id).copied().unwrap_or(0.0));
    }
    for task in order {
        let pick = fleet
            .iter()
            .filter(|c| c.eligible())
            .filter(|c| task.capability.as_ref().is_none_or(|cap| c.capabilities.contains(cap)))
            .filter(|c| model.e_compute * (out.load[&c.id] + task.cost) <= c.usable_energy)
            .min_by(|a, b| {
                let ra = out.load[&a.id] / a.capacity;
                let rb = out.load[&b.id] / b.capacity;
                a.free_rider.cmp(&b.free_rider).then(ra.total_cmp(&rb)).then(a.id.cmp(&b.id))
            })
            .ok_or(LoadError::InfeasibleTask(task.id))?;
        *out.load.get_mut(&pick.id).expect("eligible") += task.cost;
        out.task_to_drone.insert(task.id, pick.id);
    }
    out.load.retain(|_, l| *l > 0.0);
    Ok(out)
}
