//! Leader election and vote aggregation per collaboration topology.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::geometry::Vec3;
use crate::ids::{NodeId, OptionId};

use super::Topology;

#[derive(Debug, Clone, PartialEq)]
pub struct ElectionCandidate {
    pub id: NodeId,
    pub compute: f64,
    pub position: Vec3,
    pub healthy: bool,
}

/// Roles after an election. Centralised sets `master`; decentralised fills
/// `clusters` (head → attached members, head excluded); distributed leaves
/// both empty.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Election {
    pub master: Option<NodeId>,
    pub clusters: BTreeMap<NodeId, BTreeSet<NodeId>>,
}

impl Election {
    pub fn holds_role(&self, id: NodeId) -> bool {
        self.master == Some(id) || self.clusters.contains_key(&id)
    }

    pub fn heads(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.clusters.keys().copied()
    }

    pub fn head_of(&self, member: NodeId) -> Option<NodeId> {
        if self.clusters.contains_key(&member) {
            return Some(member);
        }
        self.clusters.iter().find(|(_, m)| m.contains(&member)).map(|(h, _)| *h)
    }

    /// Drop a departed drone from every role and cluster.
    pub fn remove_member(&mut self, id: NodeId) {
        if self.master == Some(id) {
            self.master = None;
        }
        self.clusters.remove(&id);
        for members in self.clusters.values_mut() {
            members.remove(&id);
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ElectError {
    #[error("no healthy member can lead")]
    NoHealthyMembers,
}

/// "Powerful" means most compute; equal compute goes to the lower id.
fn by_power(a: &ElectionCandidate, b: &ElectionCandidate) -> std::cmp::Ordering {
    b.compute.total_cmp(&a.compute).then(a.id.cmp(&b.id))
}

pub fn elect(topology: Topology, members: &[ElectionCandidate]) -> Result<Election, ElectError> {
    let mut healthy: Vec<&ElectionCandidate> = members.iter().filter(|m| m.healthy).collect();
    if healthy.is_empty() {
        return Err(ElectError::NoHealthyMembers);
    }
    healthy.sort_by(|a, b| by_power(a, b));
    match topology {
        Topology::Distributed => Ok(Election::default()),
        Topology::Centralised => Ok(Election { master: Some(healthy[0].id), clusters: BTreeMap::new() }),
        Topology::Decentralised(k) => {
            let heads: Vec<&ElectionCandidate> = healthy.iter().take(k.max(1) as usize).copied().collect();
            let mut clusters: BTreeMap<NodeId, BTreeSet<NodeId>> = heads.iter().map(|h| (h.id, BTreeSet::new())).collect();
            let head_ids: BTreeSet<NodeId> = heads.iter().map(|h| h.id).collect();
            for m in members.iter().filter(|m| !head_ids.contains(&m.id)) {
                let head = heads
                    .iter()
                    .min_by(|a, b| {
                        (a.position - m.position).norm().total_cmp(&(b.position - m.position).norm()).then(a.id.cmp(&b.id))
                    })
                    .expect("at least one head");
                clusters.get_mut(&head.id).expect("head").insert(m.id);
            }
            Ok(Election { master: None, clusters })
        }
    }
}

/// One drone's evaluated options.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Proposal {
    pub scores: BTreeMap<OptionId, f64>,
}

impl Proposal {
    pub fn single(option: OptionId) -> Self {
        Self { scores: [(option, 1.0)].into() }
    }

    /// Best-scored option, ties to the lowest id.
    pub fn choice(&self) -> Option<OptionId> {
        self.scores
            .iter()
            .fold(None, |best: Option<(OptionId, f64)>, (&o, &s)| match best {
                Some((_, bs)) if bs >= s => best,
                _ => Some((o, s)),
            })
            .map(|(o, _)| o)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VoteError {
    #[error("no proposals to aggregate")]
    NoProposals,
}

/// Highest tally wins; ties to the lowest option id.
fn plurality(tally: &BTreeMap<OptionId, f64>) -> Option<OptionId> {
    tally
        .iter()
        .fold(None, |best: Option<(OptionId, f64)>, (&o, &w)| match best {
            Some((_, bw)) if bw >= w => best,
            _ => Some((o, w)),
        })
        .map(|(o, _)| o)
}

fn weighted_plurality<'a>(
    voters: impl Iterator<Item = (&'a NodeId, OptionId)>,
    weights: &BTreeMap<NodeId, f64>,
) -> Option<OptionId> {
    let mut tally = BTreeMap::new();
    for (id, choice) in voters {
        *tally.entry(choice).or_insert(0.0) += weights.get(id).copied().unwrap_or(1.0);
    }
    plurality(&tally)
}

/// Combine proposals into one option.
///
/// Centralised: the master's own best option (weighted plurality when the
/// master sent nothing). Decentralised: every cluster's weighted plurality,
/// then a plurality across clusters weighted by cluster size; drones outside
/// any cluster count as singleton clusters. Distributed: weighted plurality.
/// Missing weights default to 1.
pub fn aggregate_votes(
    topology: Topology,
    proposals: &BTreeMap<NodeId, Proposal>,
    weights: &BTreeMap<NodeId, f64>,
    roles: &Election,
) -> Result<OptionId, VoteError> {
    let choices: BTreeMap<NodeId, OptionId> = proposals.iter().filter_map(|(id, p)| p.choice().map(|c| (*id, c))).collect();
    if choices.is_empty() {
        return Err(VoteError::NoProposals);
    }
    let flat = || weighted_plurality(choices.iter().map(|(id, c)| (id, *c)), weights).expect("non-empty");
    match topology {
        Topology::Distributed => Ok(flat()),
        Topology::Centralised => Ok(roles.master.and_then(|m| choices.get(&m).copied()).unwrap_or_else(flat)),
        Topology::Decentralised(_) => {
            let mut groups: Vec<(usize, Vec<NodeId>)> = roles
                .clusters
                .iter()
                .map(|(h, members)| (members.len() + 1, std::iter::once(*h).chain(members.iter().copied()).collect()))
                .collect();
            for id in choices.keys() {
                if roles.head_of(*id).is_none() {
                    groups.push((1, vec![*id]));
                }
            }
            let mut tally = BTreeMap::new();
            for (size, members) in groups {
                let votes = members.iter().filter_map(|m| choices.get_key_value(m)).map(|(id, c)| (id, *c));
                if let Some(c) = weighted_plurality(votes, weights) {
                    *tally.entry(c).or_insert(0.0) += size as f64;
                }
            }
            Ok(plurality(&tally).expect("every voter belongs to a group"))
        }
    }
}
