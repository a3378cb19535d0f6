//! Swarm-level operations: contribution accounting, mission assessment,
//! ethics, precedent-based decisions and collaborative learning.

mod assess;
mod decide;
mod knowledge;
mod ledger;

pub use assess::{assess_mission, success_probability, FleetMember, MissionAssessment, Objective, Recommendation};
pub use decide::{
    check_ethics, formulate_decision, Decision, DecisionError, DecisionOption, DecisionParams, DecisionPath,
    EthicsVerdict, Principle, PrincipleRule,
};
pub use knowledge::{
    evaluate_situation, jaccard, learn, rendezvous_holders, Evaluation, KnowledgeBase, KnowledgeShards,
    PrecedentRecord, SignatureError, SituationSignature, REPLICAS,
};
pub use ledger::{detect_free_riders, ContributionLedger, LedgerParams, WindowClose};
