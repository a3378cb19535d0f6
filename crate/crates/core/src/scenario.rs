//! Declarative scenario files (TOML).
//!
//! Parsing is strict: unknown keys are errors, every default is written
//! into the returned spec, and out-of-range parameters are rejected before
//! any run starts. `dump` emits a self-contained file that parses back to
//! the same spec.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::drone::{EnergyModel, SelfPreservationThresholds};
use crate::fleet::CongestionParams;
use crate::geometry::Vec3;
use crate::gfms::FleetObjective;
use crate::ids::{Capability, NodeId, OrgId};
use crate::membership::SwarmConfig;
use crate::policy::{Constraint, PolicySet};
use crate::swarm::{DecisionParams, LedgerParams, Principle};

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub world: WorldSpec,
    #[serde(default)]
    pub stop: StopSpec,
    pub swarm: SwarmConfig,
    #[serde(default)]
    pub network: NetworkSpec,
    #[serde(default)]
    pub energy: EnergyModel,
    #[serde(default)]
    pub params: ModelParams,
    pub mission: MissionSpec,
    pub drones: Vec<DroneSpec>,
    /// Drones outside the roster that may ask to enrol mid-flight.
    #[serde(default)]
    pub candidates: Vec<DroneSpec>,
    #[serde(default)]
    pub timeline: Vec<TimedEvent>,
}

fn default_seed() -> u64 {
    42
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldSpec {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub tick_seconds: f64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self { min: [-5000.0, -5000.0, 0.0], max: [5000.0, 5000.0, 500.0], tick_seconds: 1.0 }
    }
}

impl WorldSpec {
    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| self.min[i] <= p[i] && p[i] <= self.max[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StopSpec {
    pub tick_limit: u64,
}

impl Default for StopSpec {
    fn default() -> Self {
        Self { tick_limit: 5000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSpec {
    pub p_loss: f64,
    pub hop_latency: u64,
    pub drone_range: f64,
    pub gcs_id: u32,
    pub gcs_position: Vec3,
    pub gcs_range: f64,
    pub upload_retries: usize,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self {
            p_loss: 0.0,
            hop_latency: 1,
            drone_range: 400.0,
            gcs_id: 1000,
            gcs_position: Vec3::zeros(),
            gcs_range: 1500.0,
            upload_retries: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelParams {
    /// Ticks between power reports.
    pub report_interval: u64,
    pub ledger: LedgerParams,
    pub decision: DecisionParams,
    /// Minimum predicted success to carry on without intervention.
    pub continue_threshold: f64,
    pub self_preservation: SelfPreservationThresholds,
    pub avoidance_margin: f64,
    pub congestion: CongestionParams,
    /// Lifetime of attestation tokens in ticks.
    pub attestation_ttl: u64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            report_interval: 10,
            ledger: LedgerParams::default(),
            decision: DecisionParams::default(),
            continue_threshold: 0.6,
            self_preservation: SelfPreservationThresholds::default(),
            avoidance_margin: 5.0,
            congestion: CongestionParams::default(),
            attestation_ttl: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MissionSpec {
    #[serde(default = "default_mission")]
    pub id: u64,
    pub org: OrgId,
    /// The ground system's permission to commence.
    #[serde(default = "yes")]
    pub permission: bool,
    pub objectives: Vec<FleetObjective>,
    #[serde(default)]
    pub drone_objectives: BTreeMap<String, Vec<u32>>,
    #[serde(default)]
    pub principles: Vec<Principle>,
    #[serde(default)]
    pub airspace: PolicySet,
    #[serde(default)]
    pub security: PolicySet,
    #[serde(default)]
    pub baseline: PolicySet,
    #[serde(default)]
    pub commitments: Vec<String>,
    /// Organisation preference order for roster selection.
    #[serde(default)]
    pub preferences: Vec<u32>,
}

fn default_mission() -> u64 {
    1
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DroneSpec {
    pub id: u32,
    /// Defaults to the mission organisation.
    #[serde(default)]
    pub org: Option<OrgId>,
    pub position: Vec3,
    #[serde(default = "default_capacity")]
    pub capacity_j: f64,
    #[serde(default = "default_reserve")]
    pub reserve_j: f64,
    /// Work units per tick.
    #[serde(default = "default_compute")]
    pub compute: f64,
    #[serde(default = "default_speed")]
    pub max_speed: f64,
    #[serde(default = "default_sensor")]
    pub sensor_range: f64,
    #[serde(default)]
    pub capabilities: BTreeMap<Capability, f64>,
    /// Fraction of assigned work actually delivered.
    #[serde(default = "one")]
    pub contribution: f64,
    #[serde(default = "yes")]
    pub available: bool,
    /// Holds a valid attestation token.
    #[serde(default = "yes")]
    pub attested: bool,
    #[serde(default)]
    pub policy: PolicySet,
}

fn default_capacity() -> f64 {
    500_000.0
}

fn default_reserve() -> f64 {
    50_000.0
}

fn default_compute() -> f64 {
    10.0
}

fn default_speed() -> f64 {
    10.0
}

fn default_sensor() -> f64 {
    100.0
}

fn one() -> f64 {
    1.0
}

/// Timed injection. Every variant fires at `tick`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TimedEvent {
    Capture { tick: u64, drone: u32 },
    Jamming { tick: u64, end: u64, center: Vec3, radius: f64 },
    Obstacle { tick: u64, id: u32, position: Vec3, radius: f64 },
    Enrol { tick: u64, drone: u32 },
    Leave { tick: u64, drone: u32 },
    Injunction { tick: u64, rule: String, constraint: Constraint },
    Command {
        tick: u64,
        drone: u32,
        action: String,
        #[serde(default)]
        target: Option<Vec3>,
        #[serde(default)]
        attrs: BTreeMap<String, f64>,
    },
}

impl TimedEvent {
    pub fn tick(&self) -> u64 {
        match self {
            TimedEvent::Capture { tick, .. }
            | TimedEvent::Jamming { tick, .. }
            | TimedEvent::Obstacle { tick, .. }
            | TimedEvent::Enrol { tick, .. }
            | TimedEvent::Leave { tick, .. }
            | TimedEvent::Injunction { tick, .. }
            | TimedEvent::Command { tick, .. } => *tick,
        }
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(before.len(), |i| before.len() - i - 1) + 1;
    (line, column)
}

/// Parse, materialise defaults and validate.
pub fn parse_scenario(text: &str) -> Result<ScenarioSpec, ScenarioError> {
    let mut spec: ScenarioSpec = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((1, 1), |s| line_col(text, s.start));
        ScenarioError::Parse { line, column, message: e.message().to_string() }
    })?;
    spec.materialise();
    spec.validate()?;
    Ok(spec)
}

/// Self-contained TOML for a spec.
pub fn dump(spec: &ScenarioSpec) -> String {
    toml::to_string(spec).expect("scenario specs always serialise")
}

impl ScenarioSpec {
    fn materialise(&mut self) {
        let org = self.mission.org.clone();
        for d in self.drones.iter_mut().chain(self.candidates.iter_mut()) {
            d.org.get_or_insert_with(|| org.clone());
        }
        self.mission.airspace = std::mem::take(&mut self.mission.airspace).canonical();
        self.mission.security = std::mem::take(&mut self.mission.security).canonical();
        self.mission.baseline = std::mem::take(&mut self.mission.baseline).canonical();
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        let w = &self.world;
        if !(w.tick_seconds > 0.0 && w.tick_seconds.is_finite()) {
            return bad("world.tick_seconds must be positive".into());
        }
        if (0..3).any(|i| !(w.min[i] < w.max[i])) {
            return bad("world.min must be below world.max on every axis".into());
        }
        if !(1..=10_000_000).contains(&self.stop.tick_limit) {
            return bad("stop.tick_limit must be in 1..=10000000".into());
        }
        self.swarm.validate().map_err(ScenarioError::Invalid)?;
        let n = &self.network;
        if !unit(n.p_loss) {
            return bad("network.p_loss must be in [0, 1]".into());
        }
        if n.hop_latency == 0 || !(n.drone_range > 0.0) || !(n.gcs_range > 0.0) || n.upload_retries > 100 {
            return bad("network latency, ranges and retries must be positive and bounded".into());
        }
        if !self.energy.is_valid() {
            return bad("energy coefficients must be finite and non-negative".into());
        }
        let p = &self.params;
        if p.report_interval == 0 || p.ledger.window == 0 || p.ledger.windows_to_flag == 0 {
            return bad("report interval, ledger window and windows_to_flag must be at least 1".into());
        }
        if ![p.ledger.tau, p.decision.sigma, p.decision.adopt_score, p.continue_threshold].into_iter().all(unit) {
            return bad("tau, sigma, adopt_score and continue_threshold must be in [0, 1]".into());
        }
        let sp = &p.self_preservation;
        if !(unit(sp.disengage) && unit(sp.sacrifice)) {
            return bad("self_preservation thresholds must be in [0, 1]".into());
        }
        if !(p.avoidance_margin >= 0.0) || !(p.congestion.distance > 0.0) || p.attestation_ttl == 0 {
            return bad("avoidance margin, congestion distance and attestation ttl out of range".into());
        }

        let mut ids = BTreeSet::from([n.gcs_id]);
        for d in self.drones.iter().chain(&self.candidates) {
            if !ids.insert(d.id) {
                return bad(format!("node id {} defined twice", d.id));
            }
            if !(d.capacity_j > 0.0 && d.reserve_j >= 0.0 && d.reserve_j < d.capacity_j) {
                return bad(format!("drone {}: need 0 <= reserve_j < capacity_j", d.id));
            }
            if !(d.compute > 0.0 && d.max_speed > 0.0 && d.sensor_range > 0.0) {
                return bad(format!("drone {}: compute, max_speed and sensor_range must be positive", d.id));
            }
            if !unit(d.contribution) {
                return bad(format!("drone {}: contribution must be in [0, 1]", d.id));
            }
            if d.capabilities.values().any(|v| !(*v > 0.0)) {
                return bad(format!("drone {}: capability capacities must be positive", d.id));
            }
            if !w.contains(&d.position) {
                return bad(format!("drone {} starts outside the world", d.id));
            }
            if !d.policy.is_valid() {
                return bad(format!("drone {}: invalid policy", d.id));
            }
        }
        if self.drones.is_empty() {
            return bad("at least one drone is required".into());
        }
        let drones: BTreeSet<u32> = self.drones.iter().map(|d| d.id).collect();
        let candidates: BTreeSet<u32> = self.candidates.iter().map(|d| d.id).collect();

        let m = &self.mission;
        if m.objectives.is_empty() {
            return bad("at least one objective is required".into());
        }
        let mut objective_ids = BTreeSet::new();
        for o in &m.objectives {
            if !objective_ids.insert(o.id) {
                return bad(format!("objective id {} defined twice", o.id));
            }
            if !(unit(o.criticality) && o.required > 0.0 && o.work > 0.0 && o.energy >= 0.0) {
                return bad(format!("objective {}: criticality in [0, 1], positive required and work", o.id));
            }
            if !w.contains(&o.area) {
                return bad(format!("objective {} lies outside the world", o.id));
            }
        }
        for (d, objs) in &m.drone_objectives {
            let ok = d.parse::<u32>().is_ok_and(|id| drones.contains(&id));
            if !ok || objs.iter().any(|o| !objective_ids.contains(o)) {
                return bad(format!("drone_objectives entry '{d}' references an unknown drone or objective"));
            }
        }
        if m.preferences.iter().any(|d| !drones.contains(d)) {
            return bad("preferences reference an unknown drone".into());
        }
        if !(m.airspace.is_valid() && m.security.is_valid() && m.baseline.is_valid()) {
            return bad("invalid mission policy set".into());
        }
        for pr in &m.principles {
            if let crate::swarm::PrincipleRule::ForbiddenAction(a) = &pr.rule {
                if a.is_empty() {
                    return bad(format!("principle {} forbids an empty action", pr.id));
                }
            }
        }

        let mut last = 0;
        for e in &self.timeline {
            if e.tick() < last {
                return bad("timeline must be sorted by tick".into());
            }
            last = e.tick();
            if e.tick() > self.stop.tick_limit {
                return bad(format!("timeline event at tick {} is past the tick limit", e.tick()));
            }
            let known = |id: &u32, set: &BTreeSet<u32>| set.contains(id);
            let ok = match e {
                TimedEvent::Capture { drone, .. } | TimedEvent::Leave { drone, .. } | TimedEvent::Command { drone, .. } => {
                    known(drone, &drones) || known(drone, &candidates)
                }
                TimedEvent::Enrol { drone, .. } => known(drone, &candidates),
                TimedEvent::Jamming { tick, end, radius, .. } => tick <= end && *radius > 0.0,
                TimedEvent::Obstacle { radius, position, .. } => *radius > 0.0 && w.contains(position),
                TimedEvent::Injunction { constraint, .. } => constraint.is_valid(),
            };
            if !ok {
                return bad(format!("timeline event at tick {} references an unknown id or is out of range", e.tick()));
            }
        }
        Ok(())
    }

    pub fn gcs(&self) -> NodeId {
        NodeId(self.network.gcs_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "minimal"

[swarm]
sod_type = "static"
topology = "centralised"

[mission]
org = "acme"

[[mission.objectives]]
id = 0
capability = "camera"
required = 1.0
work = 20.0
area = [100.0, 0.0, 50.0]

[[drones]]
id = 1
position = [0.0, 0.0, 50.0]
capabilities = { camera = 2.0 }
"#;

    #[test]
    fn minimal_gets_defaults() {
        let s = parse_scenario(MINIMAL).unwrap();
        assert_eq!(s.seed, 42);
        assert_eq!(s.params.ledger.tau, 0.5);
        assert_eq!(s.drones[0].org, Some(OrgId::new("acme")));
        assert_eq!(s.network.upload_retries, 3);
        assert!(s.mission.permission);
    }

    #[test]
    fn unknown_key_is_named() {
        let text = MINIMAL.replace("name = \"minimal\"", "name = \"minimal\"\ndorne_count = 3");
        match parse_scenario(&text) {
            Err(ScenarioError::Parse { line, message, .. }) => {
                assert!(message.contains("dorne_count"), "{message}");
                assert_eq!(line, 3);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dump_round_trip() {
        let s = parse_scenario(MINIMAL).unwrap();
        let again = parse_scenario(&dump(&s)).unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn out_of_range_rejected() {
        let text = MINIMAL.replace("[swarm]", "[network]\np_loss = 1.5\n\n[swarm]");
        assert!(matches!(parse_scenario(&text), Err(ScenarioError::Invalid(_))));
    }

    #[test]
    fn timeline_must_be_sorted_and_known() {
        let unsorted = format!(
            "{MINIMAL}\n[[timeline]]\nkind = \"capture\"\ntick = 9\ndrone = 1\n\n[[timeline]]\nkind = \"leave\"\ntick = 3\ndrone = 1\n"
        );
        assert!(matches!(parse_scenario(&unsorted), Err(ScenarioError::Invalid(_))));
        let unknown = format!("{MINIMAL}\n[[timeline]]\nkind = \"capture\"\ntick = 9\ndrone = 7\n");
        assert!(matches!(parse_scenario(&unknown), Err(ScenarioError::Invalid(_))));
        let bad_field = format!("{MINIMAL}\n[[timeline]]\nkind = \"capture\"\ntick = 9\ndrone = 1\nextra = 2\n");
        assert!(matches!(parse_scenario(&bad_field), Err(ScenarioError::Parse { .. })));
    }
}
