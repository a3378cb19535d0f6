//! Simulated wireless medium.
//!
//! Links are symmetric: `a` and `b` are neighbours iff their distance is at
//! most `min(range_a, range_b)` and neither endpoint sits inside a jamming
//! region active at the current tick. Routing is minimum-hop with the
//! lexicographically smallest node-id path among equals.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec3;
use crate::ids::{NodeId, OrgId};
use crate::kernel::{RngStream, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Drone,
    GroundStation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadioNode {
    pub id: NodeId,
    pub position: Vec3,
    pub range: f64,
    pub org: OrgId,
    pub kind: NodeKind,
}

impl RadioNode {
    pub fn drone(id: u32, position: Vec3, range: f64) -> Self {
        Self { id: NodeId(id), position, range, org: OrgId::default(), kind: NodeKind::Drone }
    }

    pub fn ground_station(id: u32, position: Vec3, range: f64) -> Self {
        Self { id: NodeId(id), position, range, org: OrgId::default(), kind: NodeKind::GroundStation }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JammingRegion {
    pub center: Vec3,
    pub radius: f64,
    pub start: u64,
    pub end: u64,
}

impl JammingRegion {
    pub fn is_valid(&self) -> bool {
        self.radius > 0.0 && self.start <= self.end && self.center.iter().all(|c| c.is_finite())
    }

    pub fn active_at(&self, tick: SimTime) -> bool {
        self.start <= tick.0 && tick.0 <= self.end
    }

    pub fn covers(&self, p: &Vec3) -> bool {
        (p - self.center).norm() <= self.radius
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetParams {
    /// Independent per-hop loss probability.
    pub p_loss: f64,
    /// Ticks per hop.
    pub hop_latency: u64,
}

impl Default for NetParams {
    fn default() -> Self {
        Self { p_loss: 0.0, hop_latency: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Destination {
    Node(NodeId),
    Broadcast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PayloadKind {
    PowerReport,
    ObstacleDetected,
    Handshake,
    KnowledgeReplica,
    Proposal,
    ServiceNotice,
    Escalation,
    BriefUpload,
}

impl PayloadKind {
    pub fn name(&self) -> &'static str {
        match self {
            PayloadKind::PowerReport => "power_report",
            PayloadKind::ObstacleDetected => "obstacle_detected",
            PayloadKind::Handshake => "handshake",
            PayloadKind::KnowledgeReplica => "knowledge_replica",
            PayloadKind::Proposal => "proposal",
            PayloadKind::ServiceNotice => "service_notice",
            PayloadKind::Escalation => "escalation",
            PayloadKind::BriefUpload => "brief_upload",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetMessage {
    pub id: u64,
    pub source: NodeId,
    pub destination: Destination,
    pub payload: PayloadKind,
    pub size: u32,
    pub session: Option<u64>,
    pub hops: Vec<NodeId>,
}

impl NetMessage {
    pub fn unicast(id: u64, source: NodeId, dest: NodeId, payload: PayloadKind, size: u32) -> Self {
        Self { id, source, destination: Destination::Node(dest), payload, size, session: None, hops: Vec::new() }
    }

    pub fn broadcast(id: u64, source: NodeId, payload: PayloadKind, size: u32) -> Self {
        Self { id, source, destination: Destination::Broadcast, payload, size, session: None, hops: Vec::new() }
    }

    pub fn is_well_formed(&self) -> bool {
        let unique: BTreeSet<_> = self.hops.iter().collect();
        self.size > 0 && unique.len() == self.hops.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delivery {
    Delivered { at: SimTime, hops: usize },
    Lost { at_hop: usize },
    Unreachable,
}

impl Delivery {
    pub fn is_delivered(&self) -> bool {
        matches!(self, Delivery::Delivered { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RouteResult {
    Path(Vec<NodeId>),
    Unreachable,
}

impl RouteResult {
    pub fn hops(&self) -> Option<usize> {
        match self {
            RouteResult::Path(p) => Some(p.len() - 1),
            RouteResult::Unreachable => None,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NetError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node {0} is not a drone")]
    NotADrone(NodeId),
    #[error("malformed message {0}")]
    MalformedMessage(u64),
}

/// Snapshot of every radio node plus active and scheduled jamming.
#[derive(Debug, Clone, Default)]
pub struct RadioWorld {
    nodes: BTreeMap<NodeId, RadioNode>,
    jamming: BTreeMap<u32, JammingRegion>,
    pub params: NetParams,
}

impl RadioWorld {
    pub fn new(params: NetParams) -> Self {
        Self { nodes: BTreeMap::new(), jamming: BTreeMap::new(), params }
    }

    pub fn insert(&mut self, node: RadioNode) {
        assert!(node.range > 0.0, "radio range must be positive");
        self.nodes.insert(node.id, node);
    }

    pub fn node(&self, id: NodeId) -> Option<&RadioNode> {
        self.nodes.get(&id)
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.nodes.contains_key(&id)
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.keys().copied()
    }

    pub fn set_position(&mut self, id: NodeId, position: Vec3) {
        if let Some(n) = self.nodes.get_mut(&id) {
            n.position = position;
        }
    }

    pub fn remove(&mut self, id: NodeId) -> Option<RadioNode> {
        self.nodes.remove(&id)
    }

    pub fn add_jamming(&mut self, id: u32, region: JammingRegion) {
        self.jamming.insert(id, region);
    }

    pub fn remove_jamming(&mut self, id: u32) -> Option<JammingRegion> {
        self.jamming.remove(&id)
    }

    pub fn is_jammed(&self, id: NodeId, tick: SimTime) -> bool {
        self.nodes
            .get(&id)
            .is_some_and(|n| self.jamming.values().any(|j| j.active_at(tick) && j.covers(&n.position)))
    }

    fn link(&self, a: &RadioNode, b: &RadioNode, tick: SimTime) -> bool {
        a.id != b.id
            && (a.position - b.position).norm() <= a.range.min(b.range)
            && !self.jamming.values().any(|j| j.active_at(tick) && (j.covers(&a.position) || j.covers(&b.position)))
    }

    pub fn link_up(&self, a: NodeId, b: NodeId, tick: SimTime) -> bool {
        match (self.nodes.get(&a), self.nodes.get(&b)) {
            (Some(x), Some(y)) => self.link(x, y, tick),
            _ => false,
        }
    }

    pub fn neighbors(&self, node: NodeId, tick: SimTime) -> Result<BTreeSet<NodeId>, NetError> {
        let me = self.nodes.get(&node).ok_or(NetError::UnknownNode(node))?;
        Ok(self.nodes.values().filter(|o| self.link(me, o, tick)).map(|o| o.id).collect())
    }

    fn adjacency(&self, tick: SimTime) -> BTreeMap<NodeId, Vec<NodeId>> {
        let nodes: Vec<&RadioNode> = self.nodes.values().collect();
        let mut adj: BTreeMap<NodeId, Vec<NodeId>> = nodes.iter().map(|n| (n.id, Vec::new())).collect();
        for (i, a) in nodes.iter().enumerate() {
            for b in &nodes[i + 1..] {
                if self.link(a, b, tick) {
                    adj.get_mut(&a.id).unwrap().push(b.id);
                    adj.get_mut(&b.id).unwrap().push(a.id);
                }
            }
        }
        // nodes are visited in id order so each list is already sorted
        adj
    }

    /// Hop distances from `origin` to every reachable node.
    pub fn hop_distances(&self, origin: NodeId, tick: SimTime) -> Result<BTreeMap<NodeId, usize>, NetError> {
        if !self.contains(origin) {
            return Err(NetError::UnknownNode(origin));
        }
        Ok(bfs(&self.adjacency(tick), origin))
    }

    pub fn route(&self, source: NodeId, dest: NodeId, tick: SimTime) -> Result<RouteResult, NetError> {
        for id in [source, dest] {
            if !self.contains(id) {
                return Err(NetError::UnknownNode(id));
            }
        }
        let adj = self.adjacency(tick);
        let dist = bfs(&adj, dest);
        let Some(&d0) = dist.get(&source) else {
            return Ok(RouteResult::Unreachable);
        };
        let mut path = vec![source];
        let mut cur = source;
        for step in (0..d0).rev() {
            // smallest-id neighbour one hop closer gives the lexicographically
            // smallest shortest path
            cur = *adj[&cur].iter().find(|n| dist.get(n) == Some(&step)).expect("bfs layer");
            path.push(cur);
        }
        Ok(RouteResult::Path(path))
    }

    /// Maximum finite hop distance between any two of `members`.
    pub fn diameter(&self, members: &[NodeId], tick: SimTime) -> usize {
        let adj = self.adjacency(tick);
        members
            .iter()
            .filter(|m| adj.contains_key(m))
            .map(|&m| {
                let d = bfs(&adj, m);
                members.iter().filter_map(|o| d.get(o)).copied().max().unwrap_or(0)
            })
            .max()
            .unwrap_or(0)
    }

    /// Send a unicast message along its minimum-hop route. Each hop is lost
    /// independently with probability `p_loss`, drawn from the sender's
    /// stream. The hop list of `msg` is filled with the path.
    pub fn deliver(&self, msg: &mut NetMessage, now: SimTime, rng: &mut RngStream) -> Result<Delivery, NetError> {
        if !msg.is_well_formed() {
            return Err(NetError::MalformedMessage(msg.id));
        }
        let Destination::Node(dest) = msg.destination else {
            return Err(NetError::MalformedMessage(msg.id));
        };
        let path = match self.route(msg.source, dest, now)? {
            RouteResult::Path(p) => p,
            RouteResult::Unreachable => return Ok(Delivery::Unreachable),
        };
        let hops = path.len() - 1;
        msg.hops = path;
        for hop in 0..hops {
            if rng.chance(self.params.p_loss) {
                return Ok(Delivery::Lost { at_hop: hop });
            }
        }
        Ok(Delivery::Delivered { at: now.after(hops as u64 * self.params.hop_latency), hops })
    }

    /// One-hop broadcast to every current neighbour, each copy lost
    /// independently.
    pub fn broadcast(&self, msg: &NetMessage, now: SimTime, rng: &mut RngStream) -> Result<Vec<(NodeId, Delivery)>, NetError> {
        if !msg.is_well_formed() {
            return Err(NetError::MalformedMessage(msg.id));
        }
        let neighbours = self.neighbors(msg.source, now)?;
        Ok(neighbours
            .into_iter()
            .map(|n| {
                let d = if rng.chance(self.params.p_loss) {
                    Delivery::Lost { at_hop: 0 }
                } else {
                    Delivery::Delivered { at: now.after(self.params.hop_latency), hops: 1 }
                };
                (n, d)
            })
            .collect())
    }

    /// Remove a captured drone from the link graph. Session compromise and
    /// swarm notification are the caller's job.
    pub fn apply_capture(&mut self, node: NodeId) -> Result<RadioNode, NetError> {
        match self.nodes.get(&node) {
            None => Err(NetError::UnknownNode(node)),
            Some(n) if n.kind != NodeKind::Drone => Err(NetError::NotADrone(node)),
            Some(_) => Ok(self.nodes.remove(&node).expect("present")),
        }
    }
}

fn bfs(adj: &BTreeMap<NodeId, Vec<NodeId>>, origin: NodeId) -> BTreeMap<NodeId, usize> {
    let mut dist = BTreeMap::new();
    dist.insert(origin, 0usize);
    let mut q = VecDeque::from([origin]);
    while let Some(u) = q.pop_front() {
        let du = dist[&u];
        for &v in adj.get(&u).map(Vec::as_slice).unwrap_or(&[]) {
            if let std::collections::btree_map::Entry::Vacant(e) = dist.entry(v) {
                e.insert(du + 1);
                q.push_back(v);
            }
        }
    }
    dist
}
