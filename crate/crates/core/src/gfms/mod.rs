//! Ground flight management: mission briefs, roster selection, brief
//! upload, the commencement gate, debrief and the persistent knowledge store.

mod debrief;
mod store;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::drone::DroneState;
use crate::geometry::Vec3;
use crate::ids::{Capability, MissionId, NodeId, OrgId};
use crate::kernel::{RngStreams, SimTime};
use crate::membership::{Election, Topology};
use crate::policy::PolicySet;
use crate::radio::{Delivery, NetMessage, PayloadKind, RadioWorld};
use crate::swarm::{Objective, PrecedentRecord, Principle};

pub use debrief::{debrief, DebriefError, MissionReport};
pub use store::{KnowledgeStore, StoreError, STORE_FORMAT_VERSION};

/// A fleet objective: `work` units of sensing with `capability` at `area`.
/// `required` is the capability capacity the roster must bring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FleetObjective {
    pub id: u32,
    pub capability: Capability,
    pub required: f64,
    pub work: f64,
    pub area: Vec3,
    #[serde(default = "default_criticality")]
    pub criticality: f64,
    /// Energy a drone spends to deliver its full capacity here.
    #[serde(default)]
    pub energy: f64,
}

fn default_criticality() -> f64 {
    0.5
}

impl FleetObjective {
    pub fn as_assessment(&self) -> Objective {
        Objective { capability: self.capability.clone(), required: self.required, energy: self.energy }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MissionBrief {
    pub mission: MissionId,
    pub org: OrgId,
    pub objectives: Vec<FleetObjective>,
    /// Objectives pinned to particular drones.
    pub drone_objectives: BTreeMap<NodeId, Vec<u32>>,
    pub airspace: PolicySet,
    pub principles: Vec<Principle>,
    pub security: PolicySet,
    pub commitments: Vec<String>,
    pub baseline: PolicySet,
    pub knowledge: Vec<PrecedentRecord>,
}

#[derive(Debug, Error, PartialEq)]
pub enum BriefError {
    #[error("objective {0} criticality is outside [0, 1]")]
    Criticality(u32),
    #[error("objective {0} needs capability '{1}' which no inventory drone names")]
    UnknownCapability(u32, Capability),
    #[error("objective {0} has a non-positive amount")]
    Amount(u32),
    #[error("duplicate objective id {0}")]
    Duplicate(u32),
}

impl MissionBrief {
    pub fn validate(&self, vocabulary: &BTreeSet<Capability>) -> Result<(), BriefError> {
        let mut ids = BTreeSet::new();
        for o in &self.objectives {
            if !ids.insert(o.id) {
                return Err(BriefError::Duplicate(o.id));
            }
            if !(0.0..=1.0).contains(&o.criticality) {
                return Err(BriefError::Criticality(o.id));
            }
            if !(o.required > 0.0 && o.work > 0.0 && o.energy >= 0.0) {
                return Err(BriefError::Amount(o.id));
            }
            if !vocabulary.contains(&o.capability) {
                return Err(BriefError::UnknownCapability(o.id, o.capability.clone()));
            }
        }
        Ok(())
    }

    /// Total capability capacity the roster must cover.
    pub fn requirements(&self) -> BTreeMap<Capability, f64> {
        let mut out = BTreeMap::new();
        for o in &self.objectives {
            *out.entry(o.capability.clone()).or_insert(0.0) += o.required;
        }
        out
    }

    /// Highest objective criticality.
    pub fn criticality(&self) -> f64 {
        self.objectives.iter().map(|o| o.criticality).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MissionPhase {
    Draft,
    BriefGenerated,
    RosterSelected,
    BriefUploaded,
    ChannelsEstablished,
    Commenced,
    Returned,
    Debriefed,
    Consolidated,
}

impl MissionPhase {
    pub fn next(self) -> Option<MissionPhase> {
        use MissionPhase::*;
        Some(match self {
            Draft => BriefGenerated,
            BriefGenerated => RosterSelected,
            RosterSelected => BriefUploaded,
            BriefUploaded => ChannelsEstablished,
            ChannelsEstablished => Commenced,
            Commenced => Returned,
            Returned => Debriefed,
            Debriefed => Consolidated,
            Consolidated => return None,
        })
    }

    pub fn name(self) -> &'static str {
        use MissionPhase::*;
        match self {
            Draft => "draft",
            BriefGenerated => "brief_generated",
            RosterSelected => "roster_selected",
            BriefUploaded => "brief_uploaded",
            ChannelsEstablished => "channels_established",
            Commenced => "commenced",
            Returned => "returned",
            Debriefed => "debriefed",
            Consolidated => "consolidated",
        }
    }
}

impl fmt::Display for MissionPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("illegal phase transition {from} -> {to}")]
pub struct PhaseError {
    pub from: MissionPhase,
    pub to: MissionPhase,
}

/// Phase tracker that only moves one step along the arrow order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lifecycle {
    phase: MissionPhase,
    history: Vec<MissionPhase>,
}

impl Default for Lifecycle {
    fn default() -> Self {
        Self { phase: MissionPhase::Draft, history: vec![MissionPhase::Draft] }
    }
}

impl Lifecycle {
    pub fn phase(&self) -> MissionPhase {
        self.phase
    }

    pub fn history(&self) -> &[MissionPhase] {
        &self.history
    }

    pub fn advance(&mut self, to: MissionPhase) -> Result<(), PhaseError> {
        if self.phase.next() != Some(to) {
            return Err(PhaseError { from: self.phase, to });
        }
        self.phase = to;
        self.history.push(to);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InventoryEntry {
    pub state: DroneState,
    pub available: bool,
    pub mission: Option<MissionId>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum InventoryError {
    #[error("drone {0} is not in the inventory")]
    Unknown(NodeId),
    #[error("drone {drone} is already flying mission {mission}")]
    AlreadyAssigned { drone: NodeId, mission: MissionId },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Inventory {
    pub drones: BTreeMap<NodeId, InventoryEntry>,
}

impl Inventory {
    pub fn add(&mut self, state: DroneState, available: bool) {
        self.drones.insert(state.id, InventoryEntry { state, available, mission: None });
    }

    pub fn capability_vocabulary(&self) -> BTreeSet<Capability> {
        self.drones.values().flat_map(|e| e.state.capabilities.keys().cloned()).collect()
    }

    fn is_free(&self, id: NodeId) -> bool {
        self.drones.get(&id).is_some_and(|e| e.available && e.mission.is_none())
    }

    /// Book a roster for a mission. Either every drone is booked or none.
    pub fn reserve(&mut self, roster: &[NodeId], mission: MissionId) -> Result<(), InventoryError> {
        for id in roster {
            let e = self.drones.get(id).ok_or(InventoryError::Unknown(*id))?;
            if let Some(m) = e.mission {
                return Err(InventoryError::AlreadyAssigned { drone: *id, mission: m });
            }
        }
        for id in roster {
            self.drones.get_mut(id).expect("checked").mission = Some(mission);
        }
        Ok(())
    }

    pub fn release(&mut self, mission: MissionId) {
        for e in self.drones.values_mut() {
            if e.mission == Some(mission) {
                e.mission = None;
            }
        }
    }

    pub fn mark_unavailable(&mut self, id: NodeId) {
        if let Some(e) = self.drones.get_mut(&id) {
            e.available = false;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Selection {
    Roster(Vec<NodeId>),
    /// Capabilities still short after every useful drone was taken.
    Infeasible(Vec<Capability>),
}

fn cover_gain(d: &DroneState, uncovered: &BTreeMap<Capability, f64>) -> f64 {
    uncovered.iter().map(|(c, need)| d.capabilities.get(c).copied().unwrap_or(0.0).max(0.0).min(*need)).sum()
}

/// Greedy capability-capacity cover. Each round takes the free drone
/// covering the most still-uncovered capacity; ties go to the earlier
/// entry in `preferences`, then the lower id. Drones whose capacity is
/// no longer needed are never taken.
pub fn select_drones(brief: &MissionBrief, inventory: &Inventory, preferences: &[NodeId]) -> Selection {
    let mut uncovered = brief.requirements();
    let rank = |id: NodeId| preferences.iter().position(|p| *p == id).unwrap_or(usize::MAX);
    let mut pool: Vec<&DroneState> =
        inventory.drones.values().filter(|e| inventory.is_free(e.state.id)).map(|e| &e.state).collect();
    let mut roster = Vec::new();
    loop {
        uncovered.retain(|_, need| *need > 1e-9);
        if uncovered.is_empty() {
            break;
        }
        let best = pool
            .iter()
            .enumerate()
            .map(|(i, d)| (i, cover_gain(d, &uncovered)))
            .filter(|(_, g)| *g > 1e-12)
            .min_by(|(ia, ga), (ib, gb)| {
                gb.total_cmp(ga).then(rank(pool[*ia].id).cmp(&rank(pool[*ib].id))).then(pool[*ia].id.cmp(&pool[*ib].id))
            });
        let Some((i, _)) = best else { break };
        let d = pool.remove(i);
        for (c, need) in uncovered.iter_mut() {
            *need -= d.capabilities.get(c).copied().unwrap_or(0.0).max(0.0).min(*need);
        }
        roster.push(d.id);
    }
    if uncovered.is_empty() {
        roster.sort_unstable();
        Selection::Roster(roster)
    } else {
        Selection::Infeasible(uncovered.into_keys().collect())
    }
}

/// Does `roster` still cover every requirement of `brief`?
pub fn roster_covers(brief: &MissionBrief, inventory: &Inventory, roster: &[NodeId]) -> bool {
    brief.requirements().iter().all(|(c, need)| {
        let have: f64 =
            roster.iter().filter_map(|id| inventory.drones.get(id)).map(|e| e.state.capabilities.get(c).copied().unwrap_or(0.0)).sum();
        have + 1e-9 >= *need
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct UploadOutcome {
    pub acked: Vec<NodeId>,
    /// Drones that never acknowledged (UploadTimeout after every retry).
    pub timed_out: Vec<NodeId>,
    pub messages: u64,
}

/// Push the brief from the ground station to each roster drone, retrying
/// `retries` times. An upload is acknowledged when the brief reaches the
/// drone.
pub fn upload_brief(
    roster: &[NodeId],
    gcs: NodeId,
    world: &RadioWorld,
    now: SimTime,
    retries: usize,
    rngs: &mut RngStreams,
) -> UploadOutcome {
    let mut out = UploadOutcome::default();
    for &d in roster {
        let mut acked = false;
        for _ in 0..=retries {
            out.messages += 1;
            let mut msg = NetMessage::unicast(out.messages, gcs, d, PayloadKind::BriefUpload, 4096);
            if let Ok(Delivery::Delivered { .. }) = world.deliver(&mut msg, now, rngs.fork(gcs)) {
                acked = true;
                break;
            }
        }
        if acked {
            out.acked.push(d);
        } else {
            out.timed_out.push(d);
        }
    }
    out
}

/// Session pairs the topology needs before commencement: a star on the
/// master, a star per cluster plus a mesh of heads, or a spanning tree of
/// the members' radio graph for the distributed case (`None` when the
/// members are not radio-connected).
pub fn required_sessions(
    topology: Topology,
    roles: &Election,
    members: &[NodeId],
    world: &RadioWorld,
    now: SimTime,
) -> Option<Vec<(NodeId, NodeId)>> {
    let mut pairs = BTreeSet::new();
    let ordered = |a: NodeId, b: NodeId| if a < b { (a, b) } else { (b, a) };
    match topology {
        Topology::Centralised => {
            let master = roles.master?;
            for &m in members.iter().filter(|m| **m != master) {
                pairs.insert(ordered(master, m));
            }
        }
        Topology::Decentralised(_) => {
            let heads: Vec<NodeId> = roles.heads().collect();
            for (h, ms) in &roles.clusters {
                for m in ms {
                    pairs.insert(ordered(*h, *m));
                }
            }
            for (i, a) in heads.iter().enumerate() {
                for b in &heads[i + 1..] {
                    pairs.insert(ordered(*a, *b));
                }
            }
        }
        Topology::Distributed => {
            let set: BTreeSet<NodeId> = members.iter().copied().collect();
            let Some(&root) = set.iter().next() else { return Some(Vec::new()) };
            let mut seen = BTreeSet::from([root]);
            let mut queue = std::collections::VecDeque::from([root]);
            while let Some(u) = queue.pop_front() {
                let nbrs = world.neighbors(u, now).ok()?;
                for v in nbrs.into_iter().filter(|v| set.contains(v)) {
                    if seen.insert(v) {
                        pairs.insert(ordered(u, v));
                        queue.push_back(v);
                    }
                }
            }
            if seen.len() != set.len() {
                return None;
            }
        }
    }
    Some(pairs.into_iter().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefuseReason {
    WrongPhase(MissionPhase),
    NoPermission,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommenceVerdict {
    Commenced,
    Refused(RefuseReason),
}

/// The commencement gate: channels established and permission granted.
pub fn commence(lifecycle: &mut Lifecycle, permission: bool) -> CommenceVerdict {
    if lifecycle.phase() != MissionPhase::ChannelsEstablished {
        return CommenceVerdict::Refused(RefuseReason::WrongPhase(lifecycle.phase()));
    }
    if !permission {
        return CommenceVerdict::Refused(RefuseReason::NoPermission);
    }
    lifecycle.advance(MissionPhase::Commenced).expect("gate checked");
    CommenceVerdict::Commenced
}

/// Pre-flight events as the ground system observes them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PreflightEvent {
    Ack(NodeId),
    SessionUp(NodeId, NodeId),
    Permission,
    CommenceRequest,
}

/// Event-driven pre-flight state from roster selection to commencement.
/// Phases advance as soon as their gate is met; a commence request is
/// honoured only through [`commence`].
#[derive(Debug, Clone)]
pub struct Preflight {
    pub lifecycle: Lifecycle,
    roster: BTreeSet<NodeId>,
    sessions_needed: BTreeSet<(NodeId, NodeId)>,
    acks: BTreeSet<NodeId>,
    sessions: BTreeSet<(NodeId, NodeId)>,
    permission: bool,
}

impl Preflight {
    /// Starts at RosterSelected.
    pub fn new(roster: &[NodeId], sessions_needed: &[(NodeId, NodeId)]) -> Self {
        let mut lifecycle = Lifecycle::default();
        lifecycle.advance(MissionPhase::BriefGenerated).expect("draft");
        lifecycle.advance(MissionPhase::RosterSelected).expect("generated");
        Self {
            lifecycle,
            roster: roster.iter().copied().collect(),
            sessions_needed: sessions_needed.iter().copied().collect(),
            acks: BTreeSet::new(),
            sessions: BTreeSet::new(),
            permission: false,
        }
    }

    pub fn all_acked(&self) -> bool {
        self.acks == self.roster
    }

    pub fn has_permission(&self) -> bool {
        self.permission
    }

    pub fn all_sessions(&self) -> bool {
        self.sessions_needed.is_subset(&self.sessions)
    }

    fn settle(&mut self) {
        if self.lifecycle.phase() == MissionPhase::RosterSelected && self.all_acked() {
            self.lifecycle.advance(MissionPhase::BriefUploaded).expect("in order");
        }
        if self.lifecycle.phase() == MissionPhase::BriefUploaded && self.all_sessions() {
            self.lifecycle.advance(MissionPhase::ChannelsEstablished).expect("in order");
        }
    }

    pub fn apply(&mut self, event: PreflightEvent) -> Option<CommenceVerdict> {
        match event {
            PreflightEvent::Ack(d) => {
                if self.roster.contains(&d) {
                    self.acks.insert(d);
                }
            }
            PreflightEvent::SessionUp(a, b) => {
                self.sessions.insert(if a < b { (a, b) } else { (b, a) });
            }
            PreflightEvent::Permission => self.permission = true,
            PreflightEvent::CommenceRequest => {
                self.settle();
                return Some(commence(&mut self.lifecycle, self.permission));
            }
        }
        self.settle();
        None
    }
}
