use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use thiserror::Error;

use crate::ids::{MissionId, NodeId};
use crate::swarm::{KnowledgeShards, PrecedentRecord};

use super::{Lifecycle, MissionPhase, PhaseError};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DebriefError {
    #[error("debrief needs phase returned, mission is {0}")]
    WrongPhase(MissionPhase),
    #[error(transparent)]
    Phase(#[from] PhaseError),
}

/// Consolidated post-mission report.
#[derive(Debug, Clone, PartialEq)]
pub struct MissionReport {
    pub mission: MissionId,
    /// This mission's precedents with their outcome scores, in key order.
    pub precedents: Vec<PrecedentRecord>,
    /// Roster drones whose logs could not be downloaded (MissingLog).
    pub missing_logs: Vec<NodeId>,
    pub objectives_completed: usize,
    pub objectives_total: usize,
}

impl MissionReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "mission = {}", self.mission);
        let _ = writeln!(out, "objectives = {}/{}", self.objectives_completed, self.objectives_total);
        let missing: Vec<String> = self.missing_logs.iter().map(|d| d.to_string()).collect();
        let _ = writeln!(out, "missing_logs = [{}]", missing.join(", "));
        for p in &self.precedents {
            let _ = writeln!(out, "precedent = {}", p.to_line());
        }
        out
    }
}

/// Download logs and shards from the returned drones and score every
/// precedent of this mission with the fraction of fleet objectives
/// completed at or after its decision tick. Duplicates (same signature,
/// decision and mission) keep the highest score. Precedents held only by
/// lost drones survive only when replicated onto a returned one.
pub fn debrief(
    lifecycle: &mut Lifecycle,
    mission: MissionId,
    roster: &[NodeId],
    returned: &BTreeSet<NodeId>,
    shards: &KnowledgeShards,
    completions: &BTreeMap<u32, u64>,
    objectives_total: usize,
) -> Result<MissionReport, DebriefError> {
    if lifecycle.phase() != MissionPhase::Returned {
        return Err(DebriefError::WrongPhase(lifecycle.phase()));
    }
    let missing_logs: Vec<NodeId> = roster.iter().filter(|d| !returned.contains(d)).copied().collect();
    let mut merged: BTreeMap<_, PrecedentRecord> = BTreeMap::new();
    for d in returned {
        for r in shards.shard(*d).iter().filter(|r| r.mission == mission) {
            let mut scored = r.clone();
            let after = completions.values().filter(|t| **t >= r.tick).count();
            scored.outcome = if objectives_total == 0 { 0.0 } else { after as f64 / objectives_total as f64 };
            match merged.get(&scored.key()) {
                Some(prev) if prev.outcome >= scored.outcome => {}
                _ => {
                    merged.insert(scored.key(), scored);
                }
            }
        }
    }
    lifecycle.advance(MissionPhase::Debriefed)?;
    Ok(MissionReport {
        mission,
        precedents: merged.into_values().collect(),
        missing_logs,
        objectives_completed: completions.len(),
        objectives_total,
    })
}
