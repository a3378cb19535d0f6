//! Scenario execution: the event handler that drives every layer on the
//! kernel, plus replay.

mod report;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use thiserror::Error;

use crate::drone::{
    detect_and_avoid, evaluate_self_preservation, local_policy_check, service_level_check, Action, Activity,
    DroneError, DroneState, DroneStatus, EnergyModel, Leadership, Obligation, Obstacle, PolicyVerdict, Ring, Verdict,
};
use crate::fleet::{
    allowed_speed, balance_onto, check_airspace, detect_congestion, plan_route, verify_trust, AttestationStore,
    LoadCandidate, LoadError, Route, SessionTable, Task, TimedRoute, TrustLevel,
};
use crate::geometry::Vec3;
use crate::gfms::{
    commence, debrief, required_sessions, roster_covers, select_drones, upload_brief, CommenceVerdict, Inventory,
    Lifecycle, MissionBrief, MissionPhase, MissionReport, Selection,
};
use crate::ids::{MissionId, NodeId, OptionId};
use crate::kernel::{EventHandler, EventKind, Kernel, MetricsSummary, SimEvent, SimTime, TelemetryLog, SWARM_ENTITY};
use crate::membership::{elect, ElectionCandidate, EnrolCandidate, EnrolVerdict, Membership, Proposal, Topology};
use crate::radio::{Delivery, JammingRegion, NetMessage, NetParams, PayloadKind, RadioNode, RadioWorld};
use crate::policy::{Constraint, ALTITUDE};
use crate::scenario::{DroneSpec, ScenarioSpec, TimedEvent};
use crate::swarm::{
    assess_mission, detect_free_riders, formulate_decision, rendezvous_holders, success_probability,
    ContributionLedger, DecisionOption, FleetMember, KnowledgeShards, MissionAssessment, Objective, PrecedentRecord,
    Recommendation, SituationSignature,
};

pub use report::{DecisionEntry, DroneEntry, MessageCount, Outcome, RunOutput, RunReport, VerdictEntry};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RunError {
    /// An internal invariant broke; this is a bug in the simulator.
    #[error("internal error: invariant '{invariant}' violated at tick {tick}: {detail}")]
    Internal { invariant: &'static str, tick: u64, detail: String },
}

/// Relative tolerance of the per-tick energy audit.
pub const ENERGY_TOLERANCE: f64 = 1e-9;

const REPORT_BYTES: u32 = 64;
const PROPOSAL_BYTES: u32 = 128;
const REPLICA_BYTES: u32 = 256;
const NOTICE_BYTES: u32 = 32;

#[derive(Debug, Clone, PartialEq)]
struct Leg {
    to: Vec3,
    objective: Option<u32>,
    detour: bool,
}

#[derive(Debug, Clone)]
struct Unit {
    state: DroneState,
    contribution: f64,
    plan: VecDeque<Leg>,
    working: Option<u32>,
    peer_obstacles: BTreeMap<u32, Obstacle>,
    work_delivered: f64,
    messages_sent: u64,
    left: bool,
}

impl Unit {
    fn from_spec(d: &DroneSpec) -> Self {
        let mut state = DroneState::new(d.id, d.position, d.capacity_j, d.reserve_j);
        state.org = d.org.clone().unwrap_or_default();
        state.compute_capacity = d.compute;
        state.max_speed = d.max_speed;
        state.sensor_range = d.sensor_range;
        state.capabilities = d.capabilities.clone();
        state.policy = d.policy.clone();
        state.status = DroneStatus::Standby;
        Self {
            state,
            contribution: d.contribution,
            plan: VecDeque::new(),
            working: None,
            peer_obstacles: BTreeMap::new(),
            work_delivered: 0.0,
            messages_sent: 0,
            left: false,
        }
    }

    fn objectives(&self) -> Vec<u32> {
        self.working.into_iter().chain(self.plan.iter().filter_map(|l| l.objective)).collect()
    }
}

/// A decision waiting for a re-election to finish.
#[derive(Debug, Clone)]
struct PendingDecision {
    signature: SituationSignature,
}

struct Simulation {
    spec: ScenarioSpec,
    model: EnergyModel,
    gcs: NodeId,
    world: RadioWorld,
    units: BTreeMap<NodeId, Unit>,
    candidates: BTreeMap<NodeId, DroneSpec>,
    inventory: Inventory,
    brief: MissionBrief,
    lifecycle: Lifecycle,
    membership: Membership,
    sessions: SessionTable,
    attestations: AttestationStore,
    ledger: ContributionLedger,
    shards: KnowledgeShards,
    roster: Vec<NodeId>,
    ever_members: BTreeSet<NodeId>,
    obstacles: BTreeMap<u32, Obstacle>,
    progress: BTreeMap<u32, f64>,
    completed: BTreeMap<u32, u64>,
    pending: Option<PendingDecision>,
    last_assessment: MissionAssessment,
    outcome: Option<(Outcome, String)>,
    recalled: bool,
    finished: bool,
    error: Option<RunError>,
    next_message: u64,
    // report material
    messages: BTreeMap<String, MessageCount>,
    gcs_deliveries: u64,
    gcs_deliveries_during_jam: u64,
    decisions: Vec<DecisionEntry>,
    free_rider_windows: BTreeMap<NodeId, u64>,
    sacrifices: BTreeSet<NodeId>,
    captured: BTreeSet<NodeId>,
    enrolments: Vec<VerdictEntry>,
    commands: Vec<VerdictEntry>,
    reelections: u64,
    avoidances: u64,
    replans: u64,
    congestion_flags: u64,
    energy_audits: u64,
    max_energy_error: f64,
    mission_report: Option<MissionReport>,
}

impl Simulation {
    fn new(spec: &ScenarioSpec, knowledge: &[PrecedentRecord]) -> Self {
        let spec = spec.clone();
        let gcs = spec.gcs();
        let mut world = RadioWorld::new(NetParams { p_loss: spec.network.p_loss, hop_latency: spec.network.hop_latency });
        world.insert(RadioNode::ground_station(gcs.0, spec.network.gcs_position, spec.network.gcs_range));
        let mut inventory = Inventory::default();
        let mut units = BTreeMap::new();
        let mut attestations = AttestationStore::new();
        for d in &spec.drones {
            let u = Unit::from_spec(d);
            inventory.add(u.state.clone(), d.available);
            if d.attested {
                attestations.issue(NodeId(d.id), spec.params.attestation_ttl);
            }
            world.insert(RadioNode::drone(d.id, d.position, spec.network.drone_range));
            units.insert(NodeId(d.id), u);
        }
        for d in &spec.candidates {
            if d.attested {
                attestations.issue(NodeId(d.id), spec.params.attestation_ttl);
            }
        }
        let m = &spec.mission;
        let brief = MissionBrief {
            mission: MissionId(m.id),
            org: m.org.clone(),
            objectives: m.objectives.clone(),
            drone_objectives: m
                .drone_objectives
                .iter()
                .map(|(k, v)| (NodeId(k.parse().expect("validated")), v.clone()))
                .collect(),
            airspace: m.airspace.clone(),
            principles: m.principles.clone(),
            security: m.security.clone(),
            commitments: m.commitments.clone(),
            baseline: m.baseline.clone(),
            knowledge: knowledge.to_vec(),
        };
        let membership = Membership::new(spec.swarm, m.org.clone(), m.baseline.clone());
        Self {
            model: spec.energy,
            gcs,
            world,
            units,
            candidates: spec.candidates.iter().map(|d| (NodeId(d.id), d.clone())).collect(),
            inventory,
            brief,
            lifecycle: Lifecycle::default(),
            membership,
            sessions: SessionTable::new(),
            attestations,
            ledger: ContributionLedger::new(spec.params.ledger),
            shards: KnowledgeShards::new(),
            roster: Vec::new(),
            ever_members: BTreeSet::new(),
            obstacles: BTreeMap::new(),
            progress: BTreeMap::new(),
            completed: BTreeMap::new(),
            pending: None,
            last_assessment: MissionAssessment { success_probability: 1.0, recommendation: Recommendation::Continue },
            outcome: None,
            recalled: false,
            finished: false,
            error: None,
            next_message: 0,
            messages: BTreeMap::new(),
            gcs_deliveries: 0,
            gcs_deliveries_during_jam: 0,
            decisions: Vec::new(),
            free_rider_windows: BTreeMap::new(),
            sacrifices: BTreeSet::new(),
            captured: BTreeSet::new(),
            enrolments: Vec::new(),
            commands: Vec::new(),
            reelections: 0,
            avoidances: 0,
            replans: 0,
            congestion_flags: 0,
            energy_audits: 0,
            max_energy_error: 0.0,
            mission_report: None,
            spec,
        }
    }

    fn tick_seconds(&self) -> f64 {
        self.spec.world.tick_seconds
    }

    fn topology(&self) -> Topology {
        self.spec.swarm.topology()
    }

    fn fail_internal(&mut self, invariant: &'static str, tick: u64, detail: String) {
        if self.error.is_none() {
            self.error = Some(RunError::Internal { invariant, tick, detail });
        }
        self.finished = true;
    }

    fn audit(&mut self, id: NodeId, tick: u64) {
        let Some(u) = self.units.get(&id) else { return };
        let err = u.state.energy.conservation_error();
        self.energy_audits += 1;
        self.max_energy_error = self.max_energy_error.max(err);
        if err > ENERGY_TOLERANCE {
            self.fail_internal("energy-conservation", tick, format!("drone {id} relative error {err:e}"));
        }
    }

    fn jam_active(&self, now: SimTime) -> bool {
        self.spec.timeline.iter().any(|e| match e {
            TimedEvent::Jamming { tick, end, .. } => *tick <= now.0 && now.0 <= *end,
            _ => false,
        })
    }

    /// Unicast with radio energy, loss and accounting. Returns delivery.
    fn send(&mut self, kernel: &mut Kernel, src: NodeId, dst: NodeId, payload: PayloadKind, size: u32) -> bool {
        let now = kernel.now();
        self.next_message += 1;
        let mut msg = NetMessage::unicast(self.next_message, src, dst, payload, size);
        if let Some(u) = self.units.get_mut(&src) {
            u.messages_sent += 1;
            if u.state.consume(&self.model, Activity::Radio, size as f64, 1, self.spec.world.tick_seconds).is_err() {
                self.recall_unit(src);
            }
        }
        let delivered = matches!(self.world.deliver(&mut msg, now, kernel.fork_rng(src)), Ok(Delivery::Delivered { .. }));
        let c = self.messages.entry(payload.name().to_string()).or_default();
        c.sent += 1;
        if delivered {
            c.delivered += 1;
            if dst == self.gcs {
                self.gcs_deliveries += 1;
                if self.jam_active(now) {
                    self.gcs_deliveries_during_jam += 1;
                }
            }
        }
        self.audit(src, now.0);
        delivered
    }

    fn count_messages(&mut self, payload: PayloadKind, sent: u64, delivered: u64) {
        let c = self.messages.entry(payload.name().to_string()).or_default();
        c.sent += sent;
        c.delivered += delivered;
    }

    fn abort(&mut self, reason: impl Into<String>) {
        if self.outcome.is_none() {
            self.outcome = Some((Outcome::Aborted, reason.into()));
        }
        self.recall_all();
    }

    fn recall_all(&mut self) {
        self.recalled = true;
        let ids: Vec<NodeId> = self.units.keys().copied().collect();
        for id in ids {
            self.recall_unit(id);
        }
    }

    fn recall_unit(&mut self, id: NodeId) {
        if let Some(u) = self.units.get_mut(&id) {
            u.plan.clear();
            u.working = None;
            if u.state.status == DroneStatus::Active {
                u.state.status = DroneStatus::Returning;
            }
        }
    }

    // ---------------------------------------------------------------- pre-flight

    fn preflight(&mut self, kernel: &mut Kernel) -> String {
        match self.preflight_inner(kernel) {
            Ok(()) => format!("commenced,roster={:?}", self.roster.iter().map(|d| d.0).collect::<Vec<_>>()),
            Err(reason) => {
                self.outcome = Some((Outcome::Aborted, reason.clone()));
                self.finished = true;
                format!("preflight_abort,{reason}")
            }
        }
    }

    fn preflight_inner(&mut self, kernel: &mut Kernel) -> Result<(), String> {
        let now = kernel.now();
        self.lifecycle.advance(MissionPhase::BriefGenerated).map_err(|e| e.to_string())?;
        let vocab = self.inventory.capability_vocabulary();
        self.brief.validate(&vocab).map_err(|e| format!("brief: {e}"))?;
        let prefs: Vec<NodeId> = self.spec.mission.preferences.iter().map(|d| NodeId(*d)).collect();
        let mut roster = match select_drones(&self.brief, &self.inventory, &prefs) {
            Selection::Roster(r) => r,
            Selection::Infeasible(c) => return Err(format!("roster infeasible: {c:?}")),
        };
        self.lifecycle.advance(MissionPhase::RosterSelected).map_err(|e| e.to_string())?;

        // Upload, dropping drones that never ACK and reselecting as needed.
        let mut acked: BTreeSet<NodeId> = BTreeSet::new();
        loop {
            let pending: Vec<NodeId> = roster.iter().filter(|d| !acked.contains(d)).copied().collect();
            let up = upload_brief(&pending, self.gcs, &self.world, now, self.spec.network.upload_retries, kernel.rng_streams());
            self.count_messages(PayloadKind::BriefUpload, up.messages, up.acked.len() as u64);
            acked.extend(up.acked.iter().copied());
            if up.timed_out.is_empty() {
                break;
            }
            for d in &up.timed_out {
                self.inventory.mark_unavailable(*d);
            }
            roster.retain(|d| !up.timed_out.contains(d));
            if roster_covers(&self.brief, &self.inventory, &roster) {
                break;
            }
            match select_drones(&self.brief, &self.inventory, &prefs) {
                Selection::Roster(r) => roster = r,
                Selection::Infeasible(c) => return Err(format!("upload timeouts left the roster infeasible: {c:?}")),
            }
        }
        roster.retain(|d| acked.contains(d));
        self.inventory.reserve(&roster, self.brief.mission).map_err(|e| e.to_string())?;
        for d in &roster {
            self.shards.seed(*d, &self.brief.knowledge);
        }
        self.lifecycle.advance(MissionPhase::BriefUploaded).map_err(|e| e.to_string())?;

        // Only the roster flies.
        let flying: BTreeSet<NodeId> = roster.iter().copied().collect();
        let grounded: Vec<NodeId> = self.units.keys().filter(|d| !flying.contains(d)).copied().collect();
        for d in grounded {
            self.world.remove(d);
            self.units.remove(&d);
        }
        self.membership.found(roster.iter().copied(), now.0);
        self.ever_members.extend(roster.iter().copied());
        self.roster = roster.clone();
        self.run_election(now).ok_or("no healthy member to elect")?;

        let pairs = required_sessions(self.topology(), &self.membership.roles, &roster, &self.world, now)
            .ok_or("swarm is not radio-connected")?;
        for (a, b) in pairs {
            let (ta, tb) = (self.trust_level(a, now.0), self.trust_level(b, now.0));
            let sent_before = self.sessions.messages_sent;
            let r = self.sessions.establish_secure_channel(a, b, ta, tb, &self.world, now, kernel.rng_streams());
            let sent = self.sessions.messages_sent - sent_before;
            self.count_messages(PayloadKind::Handshake, sent, if r.is_ok() { HANDSHAKE_OK } else { 0 }.min(sent));
            r.map_err(|e| format!("channel {a}-{b}: {e}"))?;
        }
        self.lifecycle.advance(MissionPhase::ChannelsEstablished).map_err(|e| e.to_string())?;

        match commence(&mut self.lifecycle, self.spec.mission.permission) {
            CommenceVerdict::Commenced => {}
            CommenceVerdict::Refused(r) => return Err(format!("commencement refused: {r:?}")),
        }
        self.membership.commence();

        for d in &roster {
            let u = self.units.get_mut(d).expect("roster unit");
            u.state.status = DroneStatus::Active;
            u.state.max_speed = allowed_speed(u.state.max_speed, &self.brief.airspace);
            self.ledger.track(*d);
        }
        let all: Vec<u32> = self.brief.objectives.iter().map(|o| o.id).collect();
        let pinned = self.brief.drone_objectives.clone();
        let mut free = all.clone();
        for (d, objs) in &pinned {
            if flying.contains(d) {
                for o in objs {
                    if free.contains(o) {
                        free.retain(|x| x != o);
                        self.append_objective(*d, *o);
                    }
                }
            }
        }
        let orphans = self.assign(&free);
        if !orphans.is_empty() {
            return Err(format!("objectives {orphans:?} cannot be assigned"));
        }
        let unroutable = self.replan_all_routes();
        if !unroutable.is_empty() {
            return Err(format!("no airspace-compliant route for drones {unroutable:?}"));
        }
        self.check_congestion(now.0);

        let tick = now.0;
        for d in &roster {
            kernel.schedule_in(1, EventKind::FlightStep, *d);
            kernel.schedule_in(self.spec.params.report_interval, EventKind::PeriodicReport, *d);
        }
        kernel.schedule_in(self.spec.params.ledger.window, EventKind::ContributionWindow, SWARM_ENTITY);
        for (i, e) in self.spec.timeline.clone().iter().enumerate() {
            let at = SimTime(e.tick().max(tick + 1));
            let idx = i as u32;
            let (kind, target) = match e {
                TimedEvent::Capture { drone, .. } => (EventKind::DroneCapture, NodeId(*drone)),
                TimedEvent::Jamming { .. } => (EventKind::JammingStart { region: idx }, SWARM_ENTITY),
                TimedEvent::Obstacle { id, .. } => (EventKind::ObstacleAppears { obstacle: *id }, SWARM_ENTITY),
                TimedEvent::Enrol { drone, .. } => (EventKind::EnrolRequest, NodeId(*drone)),
                TimedEvent::Leave { drone, .. } => (EventKind::LeaveRequest, NodeId(*drone)),
                TimedEvent::Injunction { .. } => (EventKind::AirspaceInjunction { injunction: idx }, SWARM_ENTITY),
                TimedEvent::Command { drone, .. } => (EventKind::ActionRequest { action: idx }, NodeId(*drone)),
            };
            kernel.schedule(at, kind, target).expect("future tick");
            if let TimedEvent::Jamming { end, .. } = e {
                kernel.schedule(SimTime((*end + 1).max(at.0)), EventKind::JammingStop { region: idx }, SWARM_ENTITY).expect("future");
            }
        }
        Ok(())
    }

    fn trust_level(&self, id: NodeId, now: u64) -> TrustLevel {
        let Some(u) = self.units.get(&id) else { return TrustLevel::Untrusted };
        verify_trust(id, &u.state.org, &u.state.policy, &self.brief.org, &self.brief.baseline, &self.attestations, now).level
    }

    fn run_election(&mut self, _now: SimTime) -> Option<()> {
        let pool = self.membership.leadership_pool();
        let cands: Vec<ElectionCandidate> = pool
            .iter()
            .filter_map(|id| self.units.get(id))
            .filter(|u| u.state.status.is_airborne() || u.state.status == DroneStatus::Standby)
            .map(|u| ElectionCandidate {
                id: u.state.id,
                compute: u.state.compute_capacity,
                position: u.state.position,
                healthy: u.state.health >= self.spec.params.self_preservation.disengage,
            })
            .collect();
        let mut roles = elect(self.topology(), &cands).ok()?;
        // members outside the leadership pool still belong to a cluster
        if let Topology::Decentralised(_) = self.topology() {
            let heads: Vec<NodeId> = roles.heads().collect();
            for id in self.membership.active_ids() {
                if roles.clusters.contains_key(&id) || roles.head_of(id).is_some() {
                    continue;
                }
                let Some(p) = self.units.get(&id).map(|u| u.state.position) else { continue };
                let best = heads.iter().min_by(|a, b| {
                    let da = (self.units[a].state.position - p).norm();
                    let db = (self.units[b].state.position - p).norm();
                    da.total_cmp(&db).then(a.cmp(b))
                });
                if let Some(h) = best {
                    roles.clusters.get_mut(h).expect("head").insert(id);
                }
            }
        }
        for u in self.units.values_mut() {
            u.state.leadership = if roles.master == Some(u.state.id) {
                Leadership::Master
            } else if roles.clusters.contains_key(&u.state.id) {
                Leadership::ClusterHead
            } else {
                Leadership::None
            };
        }
        self.membership.roles = roles;
        Some(())
    }

    // ---------------------------------------------------------------- planning

    fn append_objective(&mut self, d: NodeId, o: u32) {
        let area = self.objective(o).area;
        if let Some(u) = self.units.get_mut(&d) {
            u.plan.push_back(Leg { to: area, objective: Some(o), detour: false });
        }
    }

    fn objective(&self, id: u32) -> &crate::gfms::FleetObjective {
        self.brief.objectives.iter().find(|o| o.id == id).expect("known objective")
    }

    fn remaining_work(&self, o: u32) -> f64 {
        (self.objective(o).work - self.progress.get(&o).copied().unwrap_or(0.0)).max(0.0)
    }

    /// Balance `objectives` over the eligible active members. Returns the
    /// objectives nobody can take.
    fn assign(&mut self, objectives: &[u32]) -> Vec<u32> {
        let (restricted, open): (Vec<u32>, Vec<u32>) =
            objectives.iter().copied().filter(|o| !self.completed.contains_key(o)).partition(|o| self.restricted(*o));
        if open.is_empty() {
            return restricted;
        }
        let free_riders = self.membership.free_riders().clone();
        let fleet: Vec<LoadCandidate> = self
            .units
            .values()
            .filter(|u| matches!(u.state.status, DroneStatus::Active | DroneStatus::Sacrificing) && !u.left)
            .map(|u| LoadCandidate {
                id: u.state.id,
                capacity: u.state.compute_capacity,
                usable_energy: u.state.energy.usable(),
                capabilities: u.state.capabilities.iter().filter(|(_, v)| **v > 0.0).map(|(c, _)| c.clone()).collect(),
                healthy: u.state.health >= self.spec.params.self_preservation.disengage,
                severe: u.state.status != DroneStatus::Sacrificing && u.state.is_power_severe(&self.model),
                trusted: true,
                free_rider: free_riders.contains(&u.state.id),
            })
            .collect();
        let committed: BTreeMap<NodeId, f64> = self
            .units
            .iter()
            .map(|(id, u)| (*id, u.objectives().iter().map(|x| self.remaining_work(*x)).sum()))
            .collect();
        let mut tasks: Vec<Task> = open
            .iter()
            .map(|o| Task {
                id: *o,
                cost: self.remaining_work(*o).max(1e-9),
                capability: Some(self.objective(*o).capability.clone()),
            })
            .collect();
        let mut orphans = restricted;
        loop {
            match balance_onto(&tasks, &fleet, &committed, &self.model) {
                Ok(a) => {
                    for t in &tasks {
                        self.append_objective(a.task_to_drone[&t.id], t.id);
                    }
                    break;
                }
                Err(LoadError::InfeasibleTask(o)) => {
                    orphans.push(o);
                    tasks.retain(|t| t.id != o);
                }
            }
        }
        orphans.sort_unstable();
        orphans
    }

    /// Order each drone's objective legs by the route planner.
    /// Returns the drones left without a compliant route.
    fn replan_all_routes(&mut self) -> Vec<NodeId> {
        let ids: Vec<NodeId> = self.units.keys().copied().collect();
        ids.into_iter().filter(|id| !self.replan_route(*id)).collect()
    }

    /// Take-off and landing are vertical moves outside the planned route, so
    /// ground points are lifted into the altitude band before any check.
    fn cruise_point(&self, p: Vec3) -> Vec3 {
        match self.brief.airspace.get(ALTITUDE) {
            Some(Constraint::Interval([lo, hi])) => Vec3::new(p.x, p.y, p.z.clamp(*lo, *hi)),
            _ => p,
        }
    }

    fn restricted(&self, o: u32) -> bool {
        !self.brief.airspace.point_violations(&self.objective(o).area).is_empty()
    }

    /// Returns false when no compliant route exists.
    fn replan_route(&mut self, id: NodeId) -> bool {
        let Some(u) = self.units.get(&id) else { return true };
        let objs: Vec<u32> = u.plan.iter().filter_map(|l| l.objective).collect();
        if objs.is_empty() {
            return true;
        }
        let areas: Vec<Vec3> = objs.iter().map(|o| self.objective(*o).area).collect();
        match plan_route(self.cruise_point(u.state.position), &areas, u.state.max_speed, &self.brief.airspace, &self.model) {
            Ok(route) => {
                let mut left: Vec<u32> = objs.clone();
                let mut plan = VecDeque::new();
                for wp in route.waypoints.iter().skip(1) {
                    let pos = left.iter().position(|o| self.objective(*o).area == *wp).expect("route visits areas");
                    let o = left.remove(pos);
                    plan.push_back(Leg { to: *wp, objective: Some(o), detour: false });
                }
                self.units.get_mut(&id).expect("unit").plan = plan;
                true
            }
            Err(_) => false,
        }
    }

    fn unit_route(&self, u: &Unit) -> Route {
        let mut wps = vec![self.cruise_point(u.state.position)];
        wps.extend(u.plan.iter().map(|l| l.to));
        wps.push(self.cruise_point(u.state.home));
        Route::new(wps, u.state.max_speed, &self.model)
    }

    fn check_congestion(&mut self, tick: u64) {
        let feed: Vec<TimedRoute> = self
            .units
            .values()
            .filter(|u| u.state.status.is_airborne())
            .map(|u| TimedRoute::from_route(u.state.id.0, &self.unit_route(u), tick, self.tick_seconds()))
            .collect();
        for r in &feed {
            let others: Vec<TimedRoute> = feed.iter().filter(|o| o.id != r.id).cloned().collect();
            let rep = detect_congestion(&others, r, &self.spec.params.congestion);
            self.congestion_flags += rep.flagged.len() as u64;
        }
    }

    // ---------------------------------------------------------------- flight

    fn flight_step(&mut self, kernel: &mut Kernel, id: NodeId) -> String {
        let now = kernel.now();
        let ts = self.tick_seconds();
        let Some(u) = self.units.get(&id) else { return "gone".into() };
        if !u.state.status.is_airborne() {
            return format!("idle,{}", u.state.status.name());
        }

        // Selfish disengagement on SEVERE power.
        if u.state.status == DroneStatus::Active && u.state.is_power_severe(&self.model) {
            let verdict = evaluate_self_preservation(
                &u.state,
                true,
                self.brief.criticality(),
                &self.last_assessment,
                &self.spec.params.self_preservation,
            );
            if verdict.verdict == Verdict::Disengage {
                let orphans = self.units[&id].objectives();
                self.recall_unit(id);
                self.send_to_leader(kernel, id, PayloadKind::ServiceNotice, NOTICE_BYTES);
                let left = self.assign(&orphans);
                self.note_orphans(left);
            }
        }

        let u = self.units.get_mut(&id).expect("unit");
        let mut event;
        if let Some(o) = u.working {
            let need = (self.brief.objectives.iter().find(|x| x.id == o).expect("objective").work
                - self.progress.get(&o).copied().unwrap_or(0.0))
            .max(0.0);
            let asked = u.state.compute_capacity.min(need);
            let done = (u.state.compute_capacity * u.contribution).min(need);
            let hover = u.state.step_flight(&self.model, &u.state.position.clone(), 1, ts);
            let work = hover.and_then(|_| u.state.consume(&self.model, Activity::Compute, done, 1, ts));
            match work {
                Ok(_) => {
                    u.work_delivered += done;
                    self.ledger.assign(id, asked);
                    self.ledger.report(id, done);
                    let p = self.progress.entry(o).or_insert(0.0);
                    *p += done;
                    event = format!("work,{o},{done:.6}");
                    if *p + 1e-9 >= self.objective(o).work {
                        self.completed.entry(o).or_insert(now.0);
                        self.units.get_mut(&id).expect("unit").working = None;
                        event.push_str(",complete");
                    }
                }
                Err(_) => event = self.on_depleted(id),
            }
        } else {
            let u = self.units.get_mut(&id).expect("unit");
            let target = match u.plan.front() {
                Some(l) => Some(l.clone()),
                None if u.state.status == DroneStatus::Active && !self.recalled => None,
                None => {
                    if u.state.status == DroneStatus::Active {
                        u.state.status = DroneStatus::Returning;
                    }
                    Some(Leg { to: u.state.home, objective: None, detour: false })
                }
            };
            match target {
                None => {
                    // idle member loiters, available for reassignment
                    let here = u.state.position;
                    event = match u.state.step_flight(&self.model, &here, 1, ts) {
                        Ok(_) => "loiter".into(),
                        Err(_) => self.on_depleted(id),
                    };
                }
                Some(leg) => event = self.fly_leg(kernel, id, leg),
            }
        }

        let done_all = self.completed.len() == self.brief.objectives.len();
        if done_all && self.outcome.is_none() {
            self.outcome = Some((Outcome::Completed, "all objectives completed".into()));
            self.recall_all();
        }
        if let Some(u) = self.units.get(&id) {
            let pos = u.state.position;
            self.world.set_position(id, pos);
            let airborne = u.state.status.is_airborne();
            let payload = format!(
                "{},{:.6},{:.6},{:.6},{:.6},{}",
                event,
                pos.x,
                pos.y,
                pos.z,
                u.state.energy.remaining(),
                u.state.status.name()
            );
            self.audit(id, now.0);
            if airborne {
                kernel.schedule_in(1, EventKind::FlightStep, id);
            }
            self.check_all_down(now);
            return payload;
        }
        event
    }

    fn fly_leg(&mut self, kernel: &mut Kernel, id: NodeId, leg: Leg) -> String {
        let now = kernel.now();
        let ts = self.tick_seconds();
        let margin = self.spec.params.avoidance_margin;
        if !leg.detour {
            let u = &self.units[&id];
            let sensed: Vec<Obstacle> = self
                .obstacles
                .values()
                .filter(|o| (o.position - u.state.position).norm() <= u.state.sensor_range + o.radius)
                .cloned()
                .collect();
            let peer: Vec<Obstacle> = u.peer_obstacles.values().cloned().collect();
            if let Some(av) = detect_and_avoid(&u.state, &leg.to, &sensed, &peer, margin, now.0) {
                self.avoidances += 1;
                let u = self.units.get_mut(&id).expect("unit");
                if u.plan.is_empty() {
                    // heading home: keep the home leg explicit
                    u.plan.push_front(Leg { to: leg.to, objective: None, detour: false });
                }
                u.plan.push_front(Leg { to: av.waypoints[1], objective: None, detour: true });
                u.plan.push_front(Leg { to: av.waypoints[0], objective: None, detour: true });
                if let Some(b) = av.broadcast {
                    self.broadcast_obstacle(kernel, id, b.to_obstacle());
                }
                let first = self.units[&id].plan.front().cloned().expect("detour");
                return format!("avoid,{}|{}", av.obstacle, self.fly_leg(kernel, id, first));
            }
        }
        let u = self.units.get_mut(&id).expect("unit");
        match u.state.step_flight(&self.model, &leg.to, 1, ts) {
            Ok(step) => {
                if step.arrived {
                    if u.plan.front() == Some(&leg) {
                        u.plan.pop_front();
                    }
                    if let Some(o) = leg.objective {
                        if !self.completed.contains_key(&o) {
                            self.units.get_mut(&id).expect("unit").working = Some(o);
                        }
                    }
                    let u = self.units.get_mut(&id).expect("unit");
                    if u.plan.is_empty()
                        && u.working.is_none()
                        && u.state.status == DroneStatus::Returning
                        && (u.state.position - u.state.home).norm() < 1e-9
                    {
                        u.state.status = if u.left { DroneStatus::Departed } else { DroneStatus::Home };
                        u.state.velocity = Vec3::zeros();
                    }
                    format!("arrive,{:.3}", step.travelled)
                } else {
                    format!("fly,{:.3}", step.travelled)
                }
            }
            Err(DroneError::Depleted { .. }) => self.on_depleted(id),
            Err(e) => format!("error,{e}"),
        }
    }

    fn on_depleted(&mut self, id: NodeId) -> String {
        let orphans = self.units.get(&id).map(|u| u.objectives()).unwrap_or_default();
        if let Some(u) = self.units.get_mut(&id) {
            u.plan.clear();
            u.working = None;
        }
        let _ = self.membership.leave(id, 0, &mut self.sessions);
        self.ledger.settle(id);
        let left = self.assign(&orphans);
        self.note_orphans(left);
        "depleted".into()
    }

    fn note_orphans(&mut self, orphans: Vec<u32>) {
        if !orphans.is_empty() && self.outcome.is_none() {
            self.outcome = Some((Outcome::Failed, format!("objectives {orphans:?} have no capable drone left")));
            self.recall_all();
        }
    }

    fn broadcast_obstacle(&mut self, kernel: &mut Kernel, src: NodeId, obstacle: Obstacle) {
        let now = kernel.now();
        self.next_message += 1;
        let msg = NetMessage::broadcast(self.next_message, src, PayloadKind::ObstacleDetected, 48);
        if let Some(u) = self.units.get_mut(&src) {
            u.messages_sent += 1;
            let _ = u.state.consume(&self.model, Activity::Radio, 48.0, 1, self.spec.world.tick_seconds);
        }
        let got = self.world.broadcast(&msg, now, kernel.fork_rng(src)).unwrap_or_default();
        let delivered: Vec<NodeId> = got.iter().filter(|(_, d)| d.is_delivered()).map(|(n, _)| *n).collect();
        self.count_messages(PayloadKind::ObstacleDetected, got.len() as u64, delivered.len() as u64);
        for n in delivered {
            if let Some(u) = self.units.get_mut(&n) {
                u.peer_obstacles.insert(obstacle.id, obstacle.clone());
            }
        }
        self.audit(src, now.0);
    }

    fn leader_of(&self, id: NodeId) -> Option<NodeId> {
        let roles = &self.membership.roles;
        match self.topology() {
            Topology::Centralised => roles.master.filter(|m| *m != id),
            Topology::Decentralised(_) => roles.head_of(id).filter(|h| *h != id),
            Topology::Distributed => None,
        }
    }

    fn send_to_leader(&mut self, kernel: &mut Kernel, id: NodeId, payload: PayloadKind, size: u32) -> bool {
        match self.leader_of(id) {
            Some(l) => self.send(kernel, id, l, payload, size),
            None => true,
        }
    }

    fn check_all_down(&mut self, now: SimTime) {
        if self.finished || self.lifecycle.phase() != MissionPhase::Commenced {
            return;
        }
        if self.units.values().any(|u| u.state.status.is_airborne()) {
            return;
        }
        if self.outcome.is_none() {
            self.outcome = Some((Outcome::Failed, "no drone left airborne".into()));
        }
        self.finish(now);
    }

    fn finish(&mut self, _now: SimTime) {
        if self.lifecycle.phase() == MissionPhase::Commenced {
            self.lifecycle.advance(MissionPhase::Returned).expect("commenced");
            let returned: BTreeSet<NodeId> = self
                .units
                .values()
                .filter(|u| matches!(u.state.status, DroneStatus::Home | DroneStatus::Departed))
                .map(|u| u.state.id)
                .collect();
            let members: Vec<NodeId> = self.ever_members.iter().copied().collect();
            match debrief(
                &mut self.lifecycle,
                self.brief.mission,
                &members,
                &returned,
                &self.shards,
                &self.completed,
                self.brief.objectives.len(),
            ) {
                Ok(r) => self.mission_report = Some(r),
                Err(e) => self.fail_internal("debrief", 0, e.to_string()),
            }
        }
        self.finished = true;
    }

    // ---------------------------------------------------------------- periodic

    fn periodic_report(&mut self, kernel: &mut Kernel, id: NodeId) -> String {
        let now = kernel.now();
        let Some(u) = self.units.get(&id) else { return "gone".into() };
        if !u.state.status.is_airborne() {
            return "idle".into();
        }
        let load = if u.working.is_some() { u.state.compute_capacity } else { 0.0 };
        let rep = u.state.snapshot_report(&self.model, now.0, load);
        let obligations: Vec<Obligation> = u
            .objectives()
            .iter()
            .map(|o| Obligation { task: *o, work: self.remaining_work(*o), deadline: self.spec.stop.tick_limit })
            .collect();
        let headroom = u.state.compute_capacity * u.contribution;
        let service = service_level_check(now.0, headroom, &obligations);
        let to_gcs = self.send(kernel, id, self.gcs, PayloadKind::PowerReport, REPORT_BYTES);
        if !service.is_ok() {
            self.send_to_leader(kernel, id, PayloadKind::ServiceNotice, NOTICE_BYTES);
        }
        if self.units.get(&id).is_some_and(|u| u.state.status.is_airborne()) {
            kernel.schedule_in(self.spec.params.report_interval, EventKind::PeriodicReport, id);
        }
        format!("{},gcs={},service={}", rep.encode(), to_gcs as u8, service.is_ok() as u8)
    }

    fn contribution_window(&mut self, kernel: &mut Kernel) -> String {
        let now = kernel.now();
        let w = self.ledger.close_window();
        let flagged = detect_free_riders(&self.ledger, self.spec.params.ledger.windows_to_flag);
        for d in &flagged {
            self.free_rider_windows.entry(*d).or_insert(w.index);
        }
        self.membership.set_free_riders(&flagged);
        let (fleet, objs) = self.fleet_snapshot();
        self.last_assessment = assess_mission(&fleet, &objs, self.spec.params.continue_threshold);
        let mut payload = format!(
            "window,{},ratios={:?},flagged={:?},p={:.6}",
            w.index,
            w.ratios.iter().map(|(d, r)| format!("{d}:{r:.4}")).collect::<Vec<_>>(),
            flagged.iter().map(|d| d.0).collect::<Vec<_>>(),
            self.last_assessment.success_probability
        );
        if self.outcome.is_none() && self.last_assessment.recommendation != Recommendation::Continue {
            let sig = SituationSignature::new(["event:low_success_prediction", "severity:high", "phase:in_flight"])
                .expect("vocabulary");
            payload.push('|');
            payload.push_str(&self.decide(kernel, sig));
        }
        if !self.finished && self.outcome.is_none() {
            kernel.schedule_in(self.spec.params.ledger.window, EventKind::ContributionWindow, SWARM_ENTITY);
        }
        let _ = now;
        payload
    }

    /// Fleet snapshot over open objectives for mission assessment.
    fn fleet_snapshot(&self) -> (Vec<FleetMember>, Vec<Objective>) {
        let objs: Vec<Objective> = self
            .brief
            .objectives
            .iter()
            .filter(|o| !self.completed.contains_key(&o.id))
            .map(|o| o.as_assessment())
            .collect();
        let fleet = self
            .units
            .values()
            .filter(|u| matches!(u.state.status, DroneStatus::Active | DroneStatus::Sacrificing) && !u.left)
            .map(|u| FleetMember {
                id: u.state.id,
                healthy: u.state.health >= self.spec.params.self_preservation.disengage,
                severe: u.state.status != DroneStatus::Sacrificing && u.state.is_power_severe(&self.model),
                capabilities: u.state.capabilities.clone(),
                usable_energy: u.state.energy.usable(),
                remaining_energy: u.state.energy.remaining(),
            })
            .collect();
        (fleet, objs)
    }

    // ---------------------------------------------------------------- decisions

    fn decide(&mut self, kernel: &mut Kernel, sig: SituationSignature) -> String {
        let now = kernel.now();
        let (fleet, objs) = self.fleet_snapshot();
        let th = self.spec.params.continue_threshold;
        let assessment = assess_mission(&fleet, &objs, th);
        let p = assessment.success_probability;
        let mut options = vec![DecisionOption::new(0, "continue"), DecisionOption::new(1, "abort")];
        let mut p_sac = 0.0;
        if let Recommendation::Altruistic(set) = &assessment.recommendation {
            let mut o = DecisionOption::new(2, "sacrifice");
            o.sacrifice = set.clone();
            p_sac = success_probability(&fleet, &objs, set);
            options.push(o);
        }
        self.last_assessment = assessment.clone();

        // Each member evaluates the options and sends its proposal.
        let voters: Vec<NodeId> = self
            .membership
            .active_ids()
            .into_iter()
            .filter(|d| self.units.get(d).is_some_and(|u| u.state.status.is_airborne()))
            .collect();
        let mut proposals = BTreeMap::new();
        for d in &voters {
            let rng = kernel.fork_rng(*d);
            let mut scores = BTreeMap::new();
            scores.insert(OptionId(0), p + rng.range_f64(-0.05, 0.05));
            scores.insert(OptionId(1), (th - p).max(0.0) + rng.range_f64(-0.05, 0.05));
            if options.len() == 3 {
                let n = options[2].sacrifice.len() as f64;
                scores.insert(OptionId(2), p_sac - 0.05 * n + rng.range_f64(-0.05, 0.05));
            }
            if self.send_to_leader(kernel, *d, PayloadKind::Proposal, PROPOSAL_BYTES) {
                proposals.insert(*d, Proposal { scores });
            }
        }
        let weights = self.membership.weights();
        let knowledge = self.shards.all_records();
        let decision = formulate_decision(
            &sig,
            &options,
            &knowledge,
            self.topology(),
            &proposals,
            &weights,
            &self.membership.roles,
            &self.brief.principles,
            &self.spec.params.decision,
            self.brief.mission,
            now.0,
        );
        let Ok(decision) = decision else {
            self.decisions.push(DecisionEntry {
                tick: now.0,
                signature: sig.to_string(),
                option: u32::MAX,
                action: "abort".into(),
                path: "vetoed".into(),
            });
            self.abort("every option vetoed");
            return "decision,vetoed".into();
        };
        self.decisions.push(DecisionEntry {
            tick: now.0,
            signature: sig.to_string(),
            option: decision.option.id.0,
            action: decision.option.action.clone(),
            path: decision.path.name().into(),
        });

        // Collaborative learning: replicate the draft onto its holders.
        let origin = self
            .membership
            .roles
            .master
            .or_else(|| self.membership.roles.heads().next())
            .or_else(|| voters.first().copied());
        if let Some(origin) = origin {
            for h in rendezvous_holders(&decision.draft.signature.digest(), &voters) {
                if h == origin || self.send(kernel, origin, h, PayloadKind::KnowledgeReplica, REPLICA_BYTES) {
                    self.shards.insert(h, decision.draft.clone());
                }
            }
        }

        match decision.option.action.as_str() {
            "abort" => self.abort("swarm decided to abort"),
            "sacrifice" => {
                let criticality = self.brief.criticality();
                for d in &decision.option.sacrifice {
                    let Some(u) = self.units.get_mut(d) else { continue };
                    let severe = u.state.is_power_severe(&self.model);
                    let v = evaluate_self_preservation(
                        &u.state,
                        severe,
                        criticality,
                        &assessment,
                        &self.spec.params.self_preservation,
                    );
                    if v.verdict == Verdict::Sacrifice && u.state.status == DroneStatus::Active {
                        u.state.status = DroneStatus::Sacrificing;
                        u.state.energy.reserve = 0.0;
                        self.sacrifices.insert(*d);
                    }
                }
            }
            _ => {}
        }
        format!("decision,{},{},{}", decision.option.id, decision.option.action, decision.path.name())
    }

    // ---------------------------------------------------------------- injections

    fn capture(&mut self, kernel: &mut Kernel, id: NodeId) -> String {
        let now = kernel.now();
        let Some(u) = self.units.get(&id) else { return "unknown".into() };
        if !u.state.status.is_airborne() {
            return "not_airborne".into();
        }
        let orphans = u.objectives();
        let _ = self.world.apply_capture(id);
        let compromised = self.sessions.compromise(id).len();
        let outcome = self.membership.leave(id, now.0, &mut self.sessions);
        self.ledger.settle(id);
        self.shards.remove_holder(id);
        self.captured.insert(id);
        let u = self.units.get_mut(&id).expect("unit");
        u.plan.clear();
        u.working = None;
        u.state.status = DroneStatus::Captured;
        u.state.velocity = Vec3::zeros();
        let left = self.assign(&orphans);
        self.note_orphans(left);
        let severity = if outcome.as_ref().is_ok_and(|o| o.reelect) { "severity:high" } else { "severity:low" };
        let sig = SituationSignature::new(["event:drone_capture", severity, "phase:in_flight"]).expect("vocabulary");
        let reelect = outcome.as_ref().is_ok_and(|o| o.reelect);
        let mut payload = format!("capture,{id},compromised={compromised},reelect={}", reelect as u8);
        if reelect {
            self.pending = Some(PendingDecision { signature: sig });
            kernel.schedule_in(0, EventKind::Reelection, SWARM_ENTITY);
        } else if self.outcome.is_none() {
            payload.push('|');
            payload.push_str(&self.decide(kernel, sig));
        }
        self.check_all_down(now);
        payload
    }

    fn reelection(&mut self, kernel: &mut Kernel) -> String {
        let now = kernel.now();
        let ok = self.run_election(now).is_some();
        if ok {
            self.reelections += 1;
            let members: Vec<NodeId> = self
                .membership
                .active_ids()
                .into_iter()
                .filter(|d| self.units.get(d).is_some_and(|u| u.state.status.is_airborne()))
                .collect();
            if let Some(pairs) = required_sessions(self.topology(), &self.membership.roles, &members, &self.world, now) {
                for (a, b) in pairs {
                    let (ta, tb) = (self.trust_level(a, now.0), self.trust_level(b, now.0));
                    let before = self.sessions.messages_sent;
                    let r = self.sessions.establish_secure_channel(a, b, ta, tb, &self.world, now, kernel.rng_streams());
                    let sent = self.sessions.messages_sent - before;
                    self.count_messages(PayloadKind::Handshake, sent, if r.is_ok() { HANDSHAKE_OK } else { 0 }.min(sent));
                }
            }
        }
        let mut payload = format!(
            "reelection,master={:?},heads={:?}",
            self.membership.roles.master.map(|m| m.0),
            self.membership.roles.heads().map(|h| h.0).collect::<Vec<_>>()
        );
        if let Some(p) = self.pending.take() {
            if self.outcome.is_none() {
                payload.push('|');
                payload.push_str(&self.decide(kernel, p.signature));
            }
        }
        payload
    }

    fn enrol(&mut self, kernel: &mut Kernel, id: NodeId) -> String {
        let now = kernel.now();
        let Some(spec) = self.candidates.get(&id).cloned() else { return "unknown".into() };
        if self.units.contains_key(&id) {
            return "duplicate".into();
        }
        let mut unit = Unit::from_spec(&spec);
        self.world.insert(RadioNode::drone(id.0, spec.position, self.spec.network.drone_range));
        let cand = EnrolCandidate { id, org: unit.state.org.clone(), policy: unit.state.policy.clone() };
        let cand_trust =
            verify_trust(id, &unit.state.org, &unit.state.policy, &self.brief.org, &self.brief.baseline, &self.attestations, now.0)
                .level;
        let trust: BTreeMap<NodeId, TrustLevel> =
            self.membership.active_ids().into_iter().map(|m| (m, self.trust_level(m, now.0))).collect();
        let sessions = &mut self.sessions;
        let world = &self.world;
        let rngs = kernel.rng_streams();
        let before = sessions.messages_sent;
        let verdict = self.membership.enrol(&cand, now.0, &self.attestations, |c, members| {
            members.iter().any(|m| {
                world.contains(*m)
                    && sessions
                        .establish_secure_channel(c, *m, cand_trust, trust.get(m).copied().unwrap_or(TrustLevel::Untrusted), world, now, rngs)
                        .is_ok()
            })
        });
        let sent = self.sessions.messages_sent - before;
        self.count_messages(PayloadKind::Handshake, sent, 0);
        let text = match &verdict {
            EnrolVerdict::Admitted(ring) => {
                unit.state.status = DroneStatus::Active;
                unit.state.ring = *ring;
                unit.state.max_speed = allowed_speed(unit.state.max_speed, &self.brief.airspace);
                self.units.insert(id, unit);
                self.ledger.track(id);
                self.ever_members.insert(id);
                kernel.schedule_in(1, EventKind::FlightStep, id);
                kernel.schedule_in(self.spec.params.report_interval, EventKind::PeriodicReport, id);
                format!("admitted_{}", if *ring == Ring::Core { "core" } else { "extended" })
            }
            EnrolVerdict::Rejected(r) => {
                self.world.remove(id);
                format!("rejected_{r:?}").to_lowercase()
            }
        };
        if let Err(inv) = self.membership.check_invariants() {
            self.fail_internal(inv, now.0, format!("after enrolment of {id}"));
        }
        self.enrolments.push(VerdictEntry { tick: now.0, drone: id.0, verdict: text.clone() });
        format!("enrol,{id},{text}")
    }

    fn leave(&mut self, kernel: &mut Kernel, id: NodeId) -> String {
        let now = kernel.now();
        let Ok(out) = self.membership.leave(id, now.0, &mut self.sessions) else { return "not_member".into() };
        self.ledger.settle(id);
        let orphans = self.units.get(&id).map(|u| u.objectives()).unwrap_or_default();
        self.recall_unit(id);
        if let Some(u) = self.units.get_mut(&id) {
            u.left = true;
        }
        let left = self.assign(&orphans);
        self.note_orphans(left);
        if out.reelect {
            kernel.schedule_in(0, EventKind::Reelection, SWARM_ENTITY);
        }
        format!("leave,{id},sessions_closed={},reelect={}", out.sessions_closed, out.reelect as u8)
    }

    fn injunction(&mut self, idx: usize) -> String {
        let TimedEvent::Injunction { rule, constraint, .. } = self.spec.timeline[idx].clone() else { return "bad".into() };
        self.brief.airspace.insert(&rule, constraint);
        let ids: Vec<NodeId> = self.units.keys().copied().collect();
        let mut replanned = 0;
        let mut recalled = Vec::new();
        for id in ids {
            let u = &self.units[&id];
            if !u.state.status.is_airborne() {
                continue;
            }
            let speed = allowed_speed(u.state.max_speed, &self.brief.airspace);
            self.units.get_mut(&id).expect("unit").state.max_speed = speed;
            let u = &self.units[&id];
            if u.working.is_some() && !self.brief.airspace.point_violations(&u.state.position).is_empty() {
                recalled.push(id);
                continue;
            }
            let route = self.unit_route(u);
            if check_airspace(&route, &self.brief.airspace).is_compliant() {
                continue;
            }
            if self.replan_route(id) {
                replanned += 1;
            } else {
                recalled.push(id);
            }
        }
        self.replans += replanned;
        for id in &recalled {
            let orphans = self.units[id].objectives();
            self.recall_unit(*id);
            let left = self.assign(&orphans);
            self.note_orphans(left);
        }
        format!("injunction,{rule},replanned={replanned},recalled={}", recalled.len())
    }

    fn command(&mut self, id: NodeId, idx: usize) -> String {
        let TimedEvent::Command { action, target, attrs, tick, .. } = self.spec.timeline[idx].clone() else {
            return "bad".into();
        };
        let Some(u) = self.units.get(&id) else { return "unknown".into() };
        let act = Action { kind: action.clone(), target, attrs };
        let verdict = local_policy_check(&u.state, &act);
        let text = match &verdict {
            PolicyVerdict::Allowed => "allowed".to_string(),
            PolicyVerdict::Violation(rules) => format!("violation:{}", rules.join("+")),
            PolicyVerdict::Escalate => "escalate".to_string(),
        };
        if verdict == PolicyVerdict::Allowed && u.state.status.is_airborne() {
            match action.as_str() {
                "move" => {
                    if let Some(t) = target {
                        self.units.get_mut(&id).expect("unit").plan.push_front(Leg { to: t, objective: None, detour: true });
                    }
                }
                "return_home" => {
                    let orphans = u.objectives();
                    self.recall_unit(id);
                    let left = self.assign(&orphans);
                    self.note_orphans(left);
                }
                _ => {}
            }
        }
        self.commands.push(VerdictEntry { tick, drone: id.0, verdict: text.clone() });
        format!("command,{id},{action},{text}")
    }
}

/// Handshake messages delivered when a channel comes up.
const HANDSHAKE_OK: u64 = crate::fleet::HANDSHAKE_MESSAGES as u64;

impl EventHandler for Simulation {
    fn handle(&mut self, event: &SimEvent, kernel: &mut Kernel) -> String {
        let id = event.target;
        match event.kind {
            EventKind::Lifecycle => self.preflight(kernel),
            EventKind::FlightStep => self.flight_step(kernel, id),
            EventKind::PeriodicReport => self.periodic_report(kernel, id),
            EventKind::ContributionWindow => self.contribution_window(kernel),
            EventKind::DroneCapture => self.capture(kernel, id),
            EventKind::Reelection => self.reelection(kernel),
            EventKind::EnrolRequest => self.enrol(kernel, id),
            EventKind::LeaveRequest => self.leave(kernel, id),
            EventKind::JammingStart { region } => match &self.spec.timeline[region as usize] {
                TimedEvent::Jamming { tick, end, center, radius } => {
                    let r = JammingRegion { center: *center, radius: *radius, start: *tick, end: *end };
                    self.world.add_jamming(region, r);
                    format!("jam_start,{region}")
                }
                _ => "bad".into(),
            },
            EventKind::JammingStop { region } => {
                self.world.remove_jamming(region);
                format!("jam_stop,{region}")
            }
            EventKind::ObstacleAppears { obstacle } => {
                let found = self.spec.timeline.iter().find_map(|e| match e {
                    TimedEvent::Obstacle { id, position, radius, .. } if *id == obstacle => Some((*position, *radius)),
                    _ => None,
                });
                match found {
                    Some((p, r)) => {
                        self.obstacles.insert(obstacle, Obstacle::new(obstacle, p, r));
                        format!("obstacle,{obstacle}")
                    }
                    None => "bad".into(),
                }
            }
            EventKind::AirspaceInjunction { injunction } => self.injunction(injunction as usize),
            EventKind::ActionRequest { action } => self.command(id, action as usize),
            EventKind::MessageDelivery { .. } | EventKind::SensorDetection { .. } => String::new(),
        }
    }

    fn finished(&self) -> bool {
        self.finished
    }

    fn summarize(&self, summary: &mut MetricsSummary) {
        let (outcome, _) = self.outcome.clone().unwrap_or((Outcome::Failed, String::new()));
        summary.set("mission.outcome", format!("{outcome:?}").to_lowercase());
        summary.set("mission.objectives_completed", self.completed.len());
        summary.set("mission.objectives_total", self.brief.objectives.len());
        summary.set("decisions.total", self.decisions.len());
        for (k, c) in &self.messages {
            summary.set(format!("messages.{k}.sent"), c.sent);
            summary.set(format!("messages.{k}.delivered"), c.delivered);
        }
        let total: f64 = self.units.values().map(|u| u.state.energy.total_consumed()).sum();
        summary.set("energy.consumed_j", format!("{total:.6}"));
    }
}

/// Run `spec` to its stop condition. `knowledge` is the snapshot carried
/// by the brief.
pub fn run(spec: &ScenarioSpec, knowledge: &[PrecedentRecord]) -> Result<RunOutput, RunError> {
    let mut sim = Simulation::new(spec, knowledge);
    let mut kernel = Kernel::new(spec.seed);
    kernel.schedule(SimTime::ZERO, EventKind::Lifecycle, SWARM_ENTITY).expect("t=0");
    let mut summary = kernel.run_until(SimTime(spec.stop.tick_limit), &mut sim);
    if let Some(e) = sim.error.clone() {
        return Err(e);
    }
    let ticks = kernel.now().0;
    if sim.outcome.is_none() {
        let done = sim.completed.len() == sim.brief.objectives.len();
        sim.outcome = Some(if done {
            (Outcome::Completed, "all objectives completed".into())
        } else {
            (Outcome::Failed, "tick limit reached".into())
        });
    }
    sim.finish(kernel.now());
    if let Some(e) = sim.error.clone() {
        return Err(e);
    }
    sim.summarize(&mut summary);
    let telemetry: TelemetryLog = kernel.into_telemetry();
    let (outcome, reason) = sim.outcome.clone().expect("set above");
    let total = sim.brief.objectives.len();
    let report = RunReport {
        scenario: spec.name.clone(),
        seed: spec.seed,
        outcome,
        reason,
        ticks,
        phase: sim.lifecycle.phase().name().into(),
        completion: if total == 0 { 0.0 } else { sim.completed.len() as f64 / total as f64 },
        objectives_completed: sim.completed.len(),
        objectives_total: total,
        telemetry_digest: telemetry.digest(),
        events: telemetry.len() as u64,
        reelections: sim.reelections,
        avoidances: sim.avoidances,
        replans: sim.replans,
        congestion_flags: sim.congestion_flags,
        gcs_deliveries: sim.gcs_deliveries,
        gcs_deliveries_during_jam: sim.gcs_deliveries_during_jam,
        energy_audits: sim.energy_audits,
        max_energy_error: sim.max_energy_error,
        free_riders: sim.free_rider_windows.keys().map(|d| d.0).collect(),
        sacrifices: sim.sacrifices.iter().map(|d| d.0).collect(),
        captured: sim.captured.iter().map(|d| d.0).collect(),
        new_precedents: sim.mission_report.as_ref().map_or(0, |m| m.precedents.len()),
        free_rider_windows: sim.free_rider_windows.iter().map(|(d, w)| (d.to_string(), *w)).collect(),
        messages: sim.messages.clone(),
        decisions: sim.decisions.clone(),
        enrolments: sim.enrolments.clone(),
        commands: sim.commands.clone(),
        drones: sim
            .units
            .values()
            .map(|u| DroneEntry {
                id: u.state.id.0,
                status: u.state.status.name().into(),
                ring: match u.state.ring {
                    Ring::Core => "core".into(),
                    Ring::Extended => "extended".into(),
                },
                capacity: u.state.energy.capacity(),
                remaining: u.state.energy.remaining(),
                consumed_hover: u.state.energy.consumed(Activity::Hover),
                consumed_cruise: u.state.energy.consumed(Activity::Cruise),
                consumed_compute: u.state.energy.consumed(Activity::Compute),
                consumed_radio: u.state.energy.consumed(Activity::Radio),
                work_delivered: u.work_delivered,
                messages_sent: u.messages_sent,
            })
            .collect(),
    };
    Ok(RunOutput { report, telemetry, summary, mission_report: sim.mission_report.take() })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReplayVerdict {
    Verified,
    /// Index (0-based) of the first record that differs, with both sides.
    Divergence { index: usize, expected: Option<String>, found: Option<String> },
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error(transparent)]
    Telemetry(#[from] crate::kernel::TelemetryError),
    #[error(transparent)]
    Run(#[from] RunError),
}

/// Re-execute `spec` and compare record by record with `log_text`.
pub fn replay(log_text: &str, spec: &ScenarioSpec, knowledge: &[PrecedentRecord]) -> Result<ReplayVerdict, ReplayError> {
    let logged = TelemetryLog::parse(log_text)?;
    let fresh = run(spec, knowledge)?.telemetry;
    let n = logged.records.len().max(fresh.records.len());
    for i in 0..n {
        let a = fresh.records.get(i);
        let b = logged.records.get(i);
        if a != b {
            return Ok(ReplayVerdict::Divergence {
                index: i,
                expected: a.map(|r| r.to_string()),
                found: b.map(|r| r.to_string()),
            });
        }
    }
    Ok(ReplayVerdict::Verified)
}
