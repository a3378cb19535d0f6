//! Mission success prediction with continue / abort / altruism advice.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::ids::{Capability, NodeId};

/// A fleet objective: required capacity of one capability, plus the energy
/// a drone spends to deliver its full capacity towards it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Objective {
    pub capability: Capability,
    pub required: f64,
    #[serde(default)]
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FleetMember {
    pub id: NodeId,
    pub healthy: bool,
    pub severe: bool,
    pub capabilities: BTreeMap<Capability, f64>,
    /// Energy above reserve.
    pub usable_energy: f64,
    pub remaining_energy: f64,
}

impl FleetMember {
    /// Capacity this drone brings to `o`. Normally only healthy, non-SEVERE
    /// drones count and only their energy above reserve is spent; a
    /// sacrificed drone spends everything it has left.
    fn contribution(&self, o: &Objective, sacrificed: bool) -> f64 {
        let cap = self.capabilities.get(&o.capability).copied().unwrap_or(0.0);
        if cap <= 0.0 || !self.healthy || (self.severe && !sacrificed) {
            return 0.0;
        }
        let budget = if sacrificed { self.remaining_energy } else { self.usable_energy };
        let fraction = if o.energy <= 0.0 { 1.0 } else { (budget / o.energy).clamp(0.0, 1.0) };
        cap * fraction
    }

    fn gains_from_sacrifice(&self, objectives: &[Objective]) -> bool {
        objectives.iter().any(|o| self.contribution(o, true) > self.contribution(o, false))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Recommendation {
    Continue,
    Abort,
    /// Non-empty set of drones asked to sacrifice themselves.
    Altruistic(BTreeSet<NodeId>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MissionAssessment {
    pub success_probability: f64,
    pub recommendation: Recommendation,
}

/// `Π_o min(1, available_o / required_o)` with `sacrificed` drones spending
/// their whole remaining energy.
pub fn success_probability(fleet: &[FleetMember], objectives: &[Objective], sacrificed: &BTreeSet<NodeId>) -> f64 {
    objectives
        .iter()
        .map(|o| {
            if o.required <= 0.0 {
                return 1.0;
            }
            let avail: f64 = fleet.iter().map(|d| d.contribution(o, sacrificed.contains(&d.id))).sum();
            (avail / o.required).min(1.0)
        })
        .product()
}

/// Lexicographic k-combinations of `items`, visited until `f` returns true.
fn first_combination(items: &[NodeId], k: usize, f: &mut impl FnMut(&[NodeId]) -> bool) -> Option<Vec<NodeId>> {
    let n = items.len();
    if k > n {
        return None;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    let mut pick = Vec::with_capacity(k);
    loop {
        pick.clear();
        pick.extend(idx.iter().map(|&i| items[i]));
        if f(&pick) {
            return Some(pick);
        }
        let Some(i) = (0..k).rev().find(|&i| idx[i] != i + n - k) else {
            return None;
        };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Continue when the predicted success probability reaches `threshold`;
/// otherwise look for the smallest set of drones whose sacrifice lifts it to
/// the threshold (ties to the lexicographically smallest id list), and abort
/// when none exists. Only drones whose sacrifice adds capacity can appear in
/// a minimal set, so the search is restricted to them.
pub fn assess_mission(fleet: &[FleetMember], objectives: &[Objective], threshold: f64) -> MissionAssessment {
    let p = success_probability(fleet, objectives, &BTreeSet::new());
    if p >= threshold {
        return MissionAssessment { success_probability: p, recommendation: Recommendation::Continue };
    }
    let mut useful: Vec<NodeId> = fleet.iter().filter(|d| d.gains_from_sacrifice(objectives)).map(|d| d.id).collect();
    useful.sort_unstable();
    let all: BTreeSet<NodeId> = useful.iter().copied().collect();
    if useful.is_empty() || success_probability(fleet, objectives, &all) < threshold {
        return MissionAssessment { success_probability: p, recommendation: Recommendation::Abort };
    }
    for k in 1..=useful.len() {
        let mut feasible = |set: &[NodeId]| {
            let s: BTreeSet<NodeId> = set.iter().copied().collect();
            success_probability(fleet, objectives, &s) >= threshold
        };
        if let Some(set) = first_combination(&useful, k, &mut feasible) {
            return MissionAssessment {
                success_probability: p,
                recommendation: Recommendation::Altruistic(set.into_iter().collect()),
            };
        }
    }
    unreachable!("the full useful set is feasible")
}
