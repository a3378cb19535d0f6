//! Ethics gating and collaborative decision making.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{MissionId, NodeId, OptionId};
use crate::membership::{aggregate_votes, Election, Proposal, Topology};

use super::knowledge::{evaluate_situation, Evaluation, PrecedentRecord, SituationSignature};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionOption {
    pub id: OptionId,
    /// Action class, e.g. `continue`, `abort`, `sacrifice`, `reroute`.
    pub action: String,
    #[serde(default)]
    pub sacrifice: BTreeSet<NodeId>,
}

impl DecisionOption {
    pub fn new(id: u32, action: &str) -> Self {
        Self { id: OptionId(id), action: action.to_string(), sacrifice: BTreeSet::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrincipleRule {
    /// No more than this many drones may be sacrificed by one decision.
    MaxSacrifice(usize),
    /// This action class is never acceptable.
    ForbiddenAction(String),
}

/// Owner-set ethical principle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Principle {
    pub id: String,
    pub rule: PrincipleRule,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EthicsVerdict {
    Pass,
    Veto(String),
}

/// First principle the option breaks, if any.
pub fn check_ethics(option: &DecisionOption, principles: &[Principle]) -> EthicsVerdict {
    for p in principles {
        let broken = match &p.rule {
            PrincipleRule::MaxSacrifice(max) => option.sacrifice.len() > *max,
            PrincipleRule::ForbiddenAction(a) => &option.action == a,
        };
        if broken {
            return EthicsVerdict::Veto(p.id.clone());
        }
    }
    EthicsVerdict::Pass
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecisionParams {
    /// Minimum Jaccard similarity for a non-exact precedent.
    pub sigma: f64,
    /// Minimum outcome score for adopting a precedent without a vote.
    pub adopt_score: f64,
}

impl Default for DecisionParams {
    fn default() -> Self {
        Self { sigma: 0.8, adopt_score: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DecisionPath {
    /// Adopted from the knowledge base.
    Precedent,
    /// Trial path: aggregated from proposals.
    Vote,
    /// No proposals arrived; the lowest viable option was taken.
    Fallback,
}

impl DecisionPath {
    pub fn name(&self) -> &'static str {
        match self {
            DecisionPath::Precedent => "precedent",
            DecisionPath::Vote => "vote",
            DecisionPath::Fallback => "fallback",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub option: DecisionOption,
    pub path: DecisionPath,
    /// Outcome is filled in at debrief.
    pub draft: PrecedentRecord,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecisionError {
    #[error("every option was vetoed")]
    NoViableOption,
}

/// Decide among `options`. A precedent scoring at least `adopt_score` is
/// adopted when it names a viable option; otherwise proposals are
/// aggregated for the topology. Vetoed options are removed before voting,
/// so every drone falls back to its best remaining option.
#[allow(clippy::too_many_arguments)]
pub fn formulate_decision<'a>(
    sig: &SituationSignature,
    options: &[DecisionOption],
    knowledge: impl IntoIterator<Item = &'a PrecedentRecord>,
    topology: Topology,
    proposals: &BTreeMap<NodeId, Proposal>,
    weights: &BTreeMap<NodeId, f64>,
    roles: &Election,
    principles: &[Principle],
    params: &DecisionParams,
    mission: MissionId,
    tick: u64,
) -> Result<Decision, DecisionError> {
    let viable: BTreeMap<OptionId, &DecisionOption> = options
        .iter()
        .filter(|o| check_ethics(o, principles) == EthicsVerdict::Pass)
        .map(|o| (o.id, o))
        .collect();
    if viable.is_empty() {
        return Err(DecisionError::NoViableOption);
    }
    let draft = |o: &DecisionOption| PrecedentRecord { signature: sig.clone(), decision: o.id, outcome: 0.0, mission, tick };

    if let Evaluation::Precedent { record, .. } = evaluate_situation(sig, knowledge, params.sigma) {
        if record.outcome >= params.adopt_score {
            if let Some(o) = viable.get(&record.decision) {
                return Ok(Decision { option: (*o).clone(), path: DecisionPath::Precedent, draft: draft(o) });
            }
        }
    }

    let filtered: BTreeMap<NodeId, Proposal> = proposals
        .iter()
        .map(|(d, p)| {
            let scores = p.scores.iter().filter(|(o, _)| viable.contains_key(o)).map(|(o, s)| (*o, *s)).collect();
            (*d, Proposal { scores })
        })
        .filter(|(_, p)| !p.scores.is_empty())
        .collect();
    let (chosen, path) = match aggregate_votes(topology, &filtered, weights, roles) {
        Ok(o) => (o, DecisionPath::Vote),
        Err(_) => (*viable.keys().next().expect("non-empty"), DecisionPath::Fallback),
    };
    let o = viable[&chosen];
    Ok(Decision { option: o.clone(), path, draft: draft(o) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sig() -> SituationSignature {
        SituationSignature::new(["event:drone_capture", "severity:high"]).unwrap()
    }

    fn options() -> Vec<DecisionOption> {
        let mut sac = DecisionOption::new(2, "sacrifice");
        sac.sacrifice = [NodeId(1), NodeId(2), NodeId(3)].into();
        vec![DecisionOption::new(0, "continue"), DecisionOption::new(1, "abort"), sac]
    }

    fn run(
        knowledge: &[PrecedentRecord],
        proposals: &BTreeMap<NodeId, Proposal>,
        principles: &[Principle],
    ) -> Result<Decision, DecisionError> {
        formulate_decision(
            &sig(),
            &options(),
            knowledge,
            Topology::Distributed,
            proposals,
            &BTreeMap::new(),
            &Election::default(),
            principles,
            &DecisionParams::default(),
            MissionId(1),
            50,
        )
    }

    #[test]
    fn ethics_rules() {
        assert_eq!(check_ethics(&options()[2], &[]), EthicsVerdict::Pass);
        let cap = Principle { id: "cap2".into(), rule: PrincipleRule::MaxSacrifice(2) };
        assert_eq!(check_ethics(&options()[2], &[cap.clone()]), EthicsVerdict::Veto("cap2".into()));
        assert_eq!(check_ethics(&options()[0], &[cap]), EthicsVerdict::Pass);
    }

    #[test]
    fn strong_precedent_skips_vote() {
        let kb = [PrecedentRecord { signature: sig(), decision: OptionId(1), outcome: 0.9, mission: MissionId(0), tick: 3 }];
        let votes: BTreeMap<NodeId, Proposal> = [(NodeId(1), Proposal::single(OptionId(0)))].into();
        let d = run(&kb, &votes, &[]).unwrap();
        assert_eq!(d.path, DecisionPath::Precedent);
        assert_eq!(d.option.id, OptionId(1));
    }

    #[test]
    fn weak_precedent_goes_to_vote() {
        let kb = [PrecedentRecord { signature: sig(), decision: OptionId(1), outcome: 0.3, mission: MissionId(0), tick: 3 }];
        let votes: BTreeMap<NodeId, Proposal> = (0..3).map(|i| (NodeId(i), Proposal::single(OptionId(0)))).collect();
        let d = run(&kb, &votes, &[]).unwrap();
        assert_eq!(d.path, DecisionPath::Vote);
        assert_eq!(d.option.id, OptionId(0));
        assert_eq!(d.draft.outcome, 0.0);
    }

    #[test]
    fn all_vetoed() {
        let forbid: Vec<Principle> = ["continue", "abort", "sacrifice"]
            .iter()
            .map(|a| Principle { id: format!("no-{a}"), rule: PrincipleRule::ForbiddenAction(a.to_string()) })
            .collect();
        assert_eq!(run(&[], &BTreeMap::new(), &forbid), Err(DecisionError::NoViableOption));
    }

    proptest! {
        #[test]
        fn chosen_option_passes_ethics(cap in 0usize..4, forbid in proptest::option::of(0usize..3),
                                       votes in proptest::collection::vec(proptest::collection::vec(0.0..1.0f64, 3), 0..8)) {
            let mut principles = vec![Principle { id: "cap".into(), rule: PrincipleRule::MaxSacrifice(cap) }];
            if let Some(f) = forbid {
                principles.push(Principle { id: "f".into(), rule: PrincipleRule::ForbiddenAction(options()[f].action.clone()) });
            }
            let proposals: BTreeMap<NodeId, Proposal> = votes.iter().enumerate().map(|(i, s)| {
                (NodeId(i as u32), Proposal { scores: s.iter().enumerate().map(|(o, v)| (OptionId(o as u32), *v)).collect() })
            }).collect();
            match run(&[], &proposals, &principles) {
                Ok(d) => prop_assert_eq!(check_ethics(&d.option, &principles), EthicsVerdict::Pass),
                Err(e) => prop_assert_eq!(e, DecisionError::NoViableOption),
            }
        }
    }
}
