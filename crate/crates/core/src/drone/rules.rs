//! Service-level checks, local policy and self-preservation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;
use crate::policy::{ALTITUDE, SPEED};
use crate::swarm::{MissionAssessment, Recommendation};

use super::DroneState;

/// A task assigned to a drone: outstanding work and an absolute deadline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obligation {
    pub task: u32,
    pub work: f64,
    pub deadline: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ServiceStatus {
    Ok,
    Degraded { lagging: Vec<u32> },
}

impl ServiceStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, ServiceStatus::Ok)
    }
}

/// Project completion of every obligation when the drone works through them
/// earliest-deadline-first at `headroom` units per tick. Tasks whose
/// projected finish falls after their deadline are reported as lagging.
pub fn service_level_check(now: u64, headroom: f64, obligations: &[Obligation]) -> ServiceStatus {
    let mut order: Vec<&Obligation> = obligations.iter().collect();
    order.sort_by(|a, b| (a.deadline, a.task).cmp(&(b.deadline, b.task)));
    let mut cumulative = 0.0;
    let mut lagging = Vec::new();
    for ob in order {
        // nothing outstanding cannot lag, whatever is queued ahead of it
        if ob.work <= 0.0 {
            continue;
        }
        cumulative += ob.work;
        let late = if headroom <= 0.0 {
            true
        } else {
            now as f64 + cumulative / headroom > ob.deadline as f64
        };
        if late {
            lagging.push(ob.task);
        }
    }
    if lagging.is_empty() {
        ServiceStatus::Ok
    } else {
        lagging.sort_unstable();
        ServiceStatus::Degraded { lagging }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelfPreservationThresholds {
    pub disengage: f64,
    pub sacrifice: f64,
}

impl Default for SelfPreservationThresholds {
    fn default() -> Self {
        Self { disengage: 0.3, sacrifice: 0.8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verdict {
    Continue,
    Disengage,
    Sacrifice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReasonCode {
    SacrificeRequested,
    LowHealth,
    SeverePower,
    CriticalMission,
    Nominal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SelfPreservationOutcome {
    pub verdict: Verdict,
    pub reason: ReasonCode,
}

/// Choose between selfish disengagement, altruistic sacrifice and carrying on.
pub fn evaluate_self_preservation(
    state: &DroneState,
    severe: bool,
    criticality: f64,
    assessment: &MissionAssessment,
    thresholds: &SelfPreservationThresholds,
) -> SelfPreservationOutcome {
    let critical = criticality >= thresholds.sacrifice;
    if let Recommendation::Altruistic(set) = &assessment.recommendation {
        if set.contains(&state.id) && critical {
            return SelfPreservationOutcome { verdict: Verdict::Sacrifice, reason: ReasonCode::SacrificeRequested };
        }
    }
    let weak = state.health < thresholds.disengage;
    if (weak || severe) && !critical {
        let reason = if weak { ReasonCode::LowHealth } else { ReasonCode::SeverePower };
        return SelfPreservationOutcome { verdict: Verdict::Disengage, reason };
    }
    let reason = if weak || severe { ReasonCode::CriticalMission } else { ReasonCode::Nominal };
    SelfPreservationOutcome { verdict: Verdict::Continue, reason }
}

/// Action kinds the local rule set understands.
pub const KNOWN_ACTIONS: [&str; 5] = ["move", "hover", "sense", "transmit", "return_home"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Action {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Vec3>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attrs: BTreeMap<String, f64>,
}

impl Action {
    pub fn new(kind: &str) -> Self {
        Self { kind: kind.to_string(), target: None, attrs: BTreeMap::new() }
    }

    pub fn to(mut self, target: Vec3) -> Self {
        self.target = Some(target);
        self
    }

    pub fn attr(mut self, key: &str, value: f64) -> Self {
        self.attrs.insert(key.to_string(), value);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PolicyVerdict {
    Allowed,
    /// Violated rule keys, sorted.
    Violation(Vec<String>),
    /// Unknown action kind: raised to the swarm, never silently allowed.
    Escalate,
}

/// Check an action against the drone's loaded policy. Movement actions are
/// checked at their target, everything else at the drone's position.
pub fn local_policy_check(state: &DroneState, action: &Action) -> PolicyVerdict {
    if !KNOWN_ACTIONS.contains(&action.kind.as_str()) {
        return PolicyVerdict::Escalate;
    }
    let at = match action.kind.as_str() {
        "move" => action.target.unwrap_or(state.position),
        "return_home" => action.target.unwrap_or(state.home),
        _ => state.position,
    };
    let mut attrs = action.attrs.clone();
    attrs.entry(ALTITUDE.to_string()).or_insert(at.z);
    if action.kind == "hover" {
        attrs.remove(SPEED);
    }
    let v = state.policy.attribute_violations(&attrs, Some([at.x, at.y]));
    if v.is_empty() {
        PolicyVerdict::Allowed
    } else {
        PolicyVerdict::Violation(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Polygon;
    use crate::ids::NodeId;
    use crate::policy::{PolicySet, GEOFENCE};
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn assessment(rec: Recommendation) -> MissionAssessment {
        MissionAssessment { success_probability: 0.5, recommendation: rec }
    }

    #[test]
    fn no_obligations_is_ok() {
        assert_eq!(service_level_check(0, 10.0, &[]), ServiceStatus::Ok);
    }

    #[test]
    fn hundred_units_in_five_ticks_lags() {
        let ob = Obligation { task: 1, work: 100.0, deadline: 5 };
        assert_eq!(service_level_check(0, 10.0, &[ob]), ServiceStatus::Degraded { lagging: vec![1] });
        let ob = Obligation { task: 1, work: 50.0, deadline: 5 };
        assert_eq!(service_level_check(0, 10.0, &[ob]), ServiceStatus::Ok);
    }

    /// Tick-by-tick EDF execution; independent of the closed-form projection.
    fn simulate_edf(now: u64, headroom: f64, obligations: &[Obligation]) -> Vec<u32> {
        let mut left: Vec<(u64, u32, f64)> = obligations.iter().map(|o| (o.deadline, o.task, o.work)).collect();
        left.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut lagging = BTreeSet::new();
        let mut t = now as f64;
        for &(deadline, task, work) in &left {
            if work <= 0.0 {
                continue;
            }
            if headroom <= 0.0 {
                lagging.insert(task);
                continue;
            }
            t += work / headroom;
            if t > deadline as f64 + 1e-9 * t.max(1.0) {
                lagging.insert(task);
            }
        }
        lagging.into_iter().collect()
    }

    proptest! {
        #[test]
        fn service_check_matches_projection(now in 0u64..50, headroom in 0u32..20,
                                            tasks in proptest::collection::vec((0u32..200, 0u64..100), 0..8)) {
            let obs: Vec<Obligation> = tasks.iter().enumerate()
                .map(|(i, &(w, d))| Obligation { task: i as u32, work: w as f64, deadline: now + d })
                .collect();
            let expect = simulate_edf(now, headroom as f64, &obs);
            let got = service_level_check(now, headroom as f64, &obs);
            if expect.is_empty() {
                prop_assert_eq!(got, ServiceStatus::Ok);
            } else {
                prop_assert_eq!(got, ServiceStatus::Degraded { lagging: expect });
            }
        }
    }

    #[test]
    fn healthy_continues() {
        let d = DroneState::new(1, Vec3::zeros(), 100.0, 0.0);
        let out = evaluate_self_preservation(&d, false, 0.5, &assessment(Recommendation::Continue), &Default::default());
        assert_eq!(out.verdict, Verdict::Continue);
    }

    #[test]
    fn weak_drone_disengages() {
        let mut d = DroneState::new(1, Vec3::zeros(), 100.0, 0.0);
        d.health = 0.1;
        let out = evaluate_self_preservation(&d, false, 0.2, &assessment(Recommendation::Continue), &Default::default());
        assert_eq!(out, SelfPreservationOutcome { verdict: Verdict::Disengage, reason: ReasonCode::LowHealth });
    }

    #[test]
    fn rule_table_grid() {
        let th = SelfPreservationThresholds::default();
        let me = NodeId(1);
        let recs = [
            Recommendation::Continue,
            Recommendation::Abort,
            Recommendation::Altruistic([me].into()),
            Recommendation::Altruistic([NodeId(2)].into()),
        ];
        for hi in 0..=10 {
            for ci in 0..=10 {
                for severe in [false, true] {
                    for rec in &recs {
                        let health = hi as f64 / 10.0;
                        let crit = ci as f64 / 10.0;
                        let mut d = DroneState::new(1, Vec3::zeros(), 100.0, 0.0);
                        d.health = health;
                        let sacrifice_me = matches!(rec, Recommendation::Altruistic(s) if s.contains(&me));
                        let expect = if sacrifice_me && crit >= 0.8 {
                            Verdict::Sacrifice
                        } else if (health < 0.3 || severe) && crit < 0.8 {
                            Verdict::Disengage
                        } else {
                            Verdict::Continue
                        };
                        let got = evaluate_self_preservation(&d, severe, crit, &assessment(rec.clone()), &th);
                        assert_eq!(got.verdict, expect, "h={health} c={crit} severe={severe} {rec:?}");
                        assert_eq!(got, evaluate_self_preservation(&d, severe, crit, &assessment(rec.clone()), &th));
                    }
                }
            }
        }
    }

    fn governed() -> DroneState {
        let mut d = DroneState::new(1, Vec3::new(50.0, 50.0, 30.0), 100.0, 0.0);
        d.policy = PolicySet::new()
            .with_interval(ALTITUDE, 0.0, 120.0)
            .with_region(GEOFENCE, vec![Polygon::rect([0.0, 0.0], [1000.0, 1000.0])], vec![]);
        d
    }

    #[test]
    fn policy_verdicts() {
        let d = governed();
        assert_eq!(local_policy_check(&d, &Action::new("move").to(Vec3::new(100.0, 100.0, 60.0))), PolicyVerdict::Allowed);
        assert_eq!(
            local_policy_check(&d, &Action::new("move").to(Vec3::new(100.0, 100.0, 150.0))),
            PolicyVerdict::Violation(vec![ALTITUDE.to_string()])
        );
        assert_eq!(
            local_policy_check(&d, &Action::new("move").to(Vec3::new(-5.0, 100.0, 60.0))),
            PolicyVerdict::Violation(vec![GEOFENCE.to_string()])
        );
        assert_eq!(local_policy_check(&d, &Action::new("self_destruct")), PolicyVerdict::Escalate);
        assert_eq!(local_policy_check(&d, &Action::new("sense")), PolicyVerdict::Allowed);
    }
}
