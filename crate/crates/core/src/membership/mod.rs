//! Swarm membership types, enrolment and departure, leader election and
//! vote aggregation.

mod collab;
mod matrix;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::drone::Ring;
use crate::fleet::{verify_trust, AttestationStore, SessionTable, TrustLevel};
use crate::ids::{NodeId, OrgId};
use crate::policy::PolicySet;

pub use collab::{aggregate_votes, elect, ElectError, Election, ElectionCandidate, Proposal, VoteError};
pub use matrix::{Challenge, ImportanceMatrix, MatrixError, MatrixTopology, MatrixType, MATRIX_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SodType {
    Static,
    DynamicClosed,
    DynamicOpen,
    Hybrid,
}

impl SodType {
    pub fn matrix_type(self) -> MatrixType {
        match self {
            SodType::Static => MatrixType::Static,
            SodType::DynamicClosed | SodType::DynamicOpen => MatrixType::Dynamic,
            SodType::Hybrid => MatrixType::Hybrid,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    Centralised,
    Decentralised,
    Distributed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Topology {
    Centralised,
    Decentralised(u32),
    Distributed,
}

impl Topology {
    pub fn matrix_topology(self) -> MatrixTopology {
        match self {
            Topology::Centralised => MatrixTopology::Centralised,
            Topology::Decentralised(_) => MatrixTopology::Decentralised,
            Topology::Distributed => MatrixTopology::Distributed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwarmConfig {
    pub sod_type: SodType,
    pub topology: TopologyKind,
    /// Cluster count for the decentralised topology.
    #[serde(default = "default_clusters")]
    pub clusters: u32,
    /// Vote weight of core members in a hybrid swarm.
    #[serde(default = "default_core_weight")]
    pub core_weight: f64,
}

fn default_clusters() -> u32 {
    2
}

fn default_core_weight() -> f64 {
    2.0
}

impl Default for SwarmConfig {
    fn default() -> Self {
        Self { sod_type: SodType::Static, topology: TopologyKind::Centralised, clusters: 2, core_weight: 2.0 }
    }
}

impl SwarmConfig {
    pub fn new(sod_type: SodType, topology: Topology) -> Self {
        let (kind, clusters) = match topology {
            Topology::Centralised => (TopologyKind::Centralised, 2),
            Topology::Decentralised(k) => (TopologyKind::Decentralised, k),
            Topology::Distributed => (TopologyKind::Distributed, 2),
        };
        Self { sod_type, topology: kind, clusters, core_weight: 2.0 }
    }

    pub fn topology(&self) -> Topology {
        match self.topology {
            TopologyKind::Centralised => Topology::Centralised,
            TopologyKind::Decentralised => Topology::Decentralised(self.clusters),
            TopologyKind::Distributed => Topology::Distributed,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.clusters < 1 {
            return Err("clusters must be at least 1".into());
        }
        if !(self.core_weight.is_finite() && self.core_weight > 0.0) {
            return Err("core_weight must be positive".into());
        }
        if self.sod_type == SodType::Hybrid && self.core_weight <= 1.0 {
            return Err("core_weight must exceed 1 for a hybrid swarm".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MembershipRecord {
    pub drone: NodeId,
    pub ring: Ring,
    pub joined: u64,
    pub left: Option<u64>,
}

impl MembershipRecord {
    pub fn is_active(&self) -> bool {
        self.left.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnrolCandidate {
    pub id: NodeId,
    pub org: OrgId,
    pub policy: PolicySet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RejectReason {
    AlreadyMember,
    Locked,
    Organisation,
    Trust,
    Policy,
    Channel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EnrolVerdict {
    Admitted(Ring),
    Rejected(RejectReason),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MembershipError {
    #[error("drone {0} is not a member")]
    NotMember(NodeId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LeaveOutcome {
    /// The leaver held a master or cluster-head role.
    pub reelect: bool,
    pub sessions_closed: usize,
}

#[derive(Debug, Clone)]
pub struct Membership {
    pub config: SwarmConfig,
    pub org: OrgId,
    pub baseline: PolicySet,
    records: BTreeMap<NodeId, MembershipRecord>,
    commenced: bool,
    roster_at_commencement: BTreeSet<NodeId>,
    free_riders: BTreeSet<NodeId>,
    pub roles: Election,
}

impl Membership {
    pub fn new(config: SwarmConfig, org: OrgId, baseline: PolicySet) -> Self {
        Self {
            config,
            org,
            baseline,
            records: BTreeMap::new(),
            commenced: false,
            roster_at_commencement: BTreeSet::new(),
            free_riders: BTreeSet::new(),
            roles: Election::default(),
        }
    }

    /// Seed the founding roster (all core) before the mission starts.
    pub fn found(&mut self, roster: impl IntoIterator<Item = NodeId>, tick: u64) {
        for id in roster {
            self.records.insert(id, MembershipRecord { drone: id, ring: Ring::Core, joined: tick, left: None });
        }
    }

    pub fn commence(&mut self) {
        self.commenced = true;
        self.roster_at_commencement = self.active_ids().into_iter().collect();
    }

    pub fn is_commenced(&self) -> bool {
        self.commenced
    }

    pub fn roster_at_commencement(&self) -> &BTreeSet<NodeId> {
        &self.roster_at_commencement
    }

    pub fn record(&self, id: NodeId) -> Option<&MembershipRecord> {
        self.records.get(&id)
    }

    pub fn records(&self) -> impl Iterator<Item = &MembershipRecord> {
        self.records.values()
    }

    pub fn is_member(&self, id: NodeId) -> bool {
        self.records.get(&id).is_some_and(MembershipRecord::is_active)
    }

    pub fn active_ids(&self) -> Vec<NodeId> {
        self.records.values().filter(|r| r.is_active()).map(|r| r.drone).collect()
    }

    pub fn ring_ids(&self, ring: Ring) -> Vec<NodeId> {
        self.records.values().filter(|r| r.is_active() && r.ring == ring).map(|r| r.drone).collect()
    }

    pub fn set_free_riders(&mut self, ids: &BTreeSet<NodeId>) {
        self.free_riders = ids.clone();
    }

    pub fn free_riders(&self) -> &BTreeSet<NodeId> {
        &self.free_riders
    }

    /// Core members weigh `core_weight` in a hybrid swarm, everyone else 1,
    /// detected free riders 0.
    pub fn vote_weight(&self, id: NodeId) -> f64 {
        if self.free_riders.contains(&id) {
            return 0.0;
        }
        match self.records.get(&id) {
            Some(r) if r.is_active() => {
                if self.config.sod_type == SodType::Hybrid && r.ring == Ring::Core {
                    self.config.core_weight
                } else {
                    1.0
                }
            }
            _ => 0.0,
        }
    }

    pub fn weights(&self) -> BTreeMap<NodeId, f64> {
        self.active_ids().into_iter().map(|id| (id, self.vote_weight(id))).collect()
    }

    /// Admission decision for a candidate. `channel` is asked to set up a
    /// secure channel between the candidate and the current members and
    /// reports whether at least one succeeded; it is not called when the
    /// swarm is empty.
    pub fn enrol(
        &mut self,
        candidate: &EnrolCandidate,
        tick: u64,
        attestations: &AttestationStore,
        channel: impl FnOnce(NodeId, &[NodeId]) -> bool,
    ) -> EnrolVerdict {
        use EnrolVerdict::*;
        if self.is_member(candidate.id) {
            return Rejected(RejectReason::AlreadyMember);
        }
        let (ring, any_org) = match (self.config.sod_type, self.commenced) {
            (SodType::Static, true) => return Rejected(RejectReason::Locked),
            (SodType::Static, false) | (SodType::DynamicClosed, _) | (SodType::Hybrid, false) => (Ring::Core, false),
            (SodType::DynamicOpen, _) => (Ring::Core, true),
            (SodType::Hybrid, true) => (Ring::Extended, true),
        };
        let trust = verify_trust(
            candidate.id,
            &candidate.org,
            &candidate.policy,
            &self.org,
            &self.baseline,
            attestations,
            tick,
        );
        if !any_org && !trust.same_org {
            return Rejected(RejectReason::Organisation);
        }
        if !trust.token_valid {
            return Rejected(RejectReason::Trust);
        }
        if !trust.policy_compatible {
            return Rejected(RejectReason::Policy);
        }
        debug_assert!(trust.level >= TrustLevel::Conditional);
        let members = self.active_ids();
        if !members.is_empty() && !channel(candidate.id, &members) {
            return Rejected(RejectReason::Channel);
        }
        self.records.insert(candidate.id, MembershipRecord { drone: candidate.id, ring, joined: tick, left: None });
        Admitted(ring)
    }

    /// Close a membership (voluntary leave, capture or sacrifice).
    pub fn leave(&mut self, id: NodeId, tick: u64, sessions: &mut SessionTable) -> Result<LeaveOutcome, MembershipError> {
        let rec = self.records.get_mut(&id).filter(|r| r.is_active()).ok_or(MembershipError::NotMember(id))?;
        rec.left = Some(tick);
        let sessions_closed = sessions.close(id).len();
        self.free_riders.remove(&id);
        let reelect = self.roles.holds_role(id);
        self.roles.remove_member(id);
        Ok(LeaveOutcome { reelect, sessions_closed })
    }

    /// Members eligible for leadership: the core ring when it has anyone,
    /// otherwise every active member.
    pub fn leadership_pool(&self) -> Vec<NodeId> {
        let core = self.ring_ids(Ring::Core);
        if core.is_empty() {
            self.active_ids()
        } else {
            core
        }
    }

    /// Static swarms never gain members after commencement, and only
    /// hybrid swarms have an extended ring.
    pub fn check_invariants(&self) -> Result<(), &'static str> {
        if self.config.sod_type == SodType::Static && self.commenced {
            if self.active_ids().iter().any(|id| !self.roster_at_commencement.contains(id)) {
                return Err("static-lock");
            }
        }
        if self.config.sod_type != SodType::Hybrid && !self.ring_ids(Ring::Extended).is_empty() {
            return Err("ring");
        }
        Ok(())
    }
}
