//! Simulated secure sessions: a three-message handshake over the radio
//! medium with bounded retries.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::ids::NodeId;
use crate::kernel::{short_digest, RngStreams, SimTime};
use crate::radio::{NetError, NetMessage, PayloadKind, RadioWorld, RouteResult};

use super::trust::TrustLevel;

pub const HANDSHAKE_MESSAGES: usize = 3;
pub const HANDSHAKE_RETRIES: usize = 3;
const HANDSHAKE_BYTES: u32 = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SessionState {
    Active,
    Compromised,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SecureSession {
    pub id: u64,
    /// Unordered pair, stored smaller id first.
    pub endpoints: (NodeId, NodeId),
    /// Opaque key identifier.
    pub key_id: String,
    pub established: SimTime,
    pub state: SessionState,
}

impl SecureSession {
    pub fn involves(&self, node: NodeId) -> bool {
        self.endpoints.0 == node || self.endpoints.1 == node
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ChannelError {
    #[error("handshake between {0} and {1} failed after all retries")]
    HandshakeFailed(NodeId, NodeId),
    #[error("{0} cannot reach {1}")]
    Unreachable(NodeId, NodeId),
    #[error("{0} is not trusted enough for a channel")]
    TrustDenied(NodeId),
    #[error(transparent)]
    Net(#[from] NetError),
}

fn pair(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Every session of one simulation instance.
#[derive(Debug, Clone, Default)]
pub struct SessionTable {
    sessions: BTreeMap<u64, SecureSession>,
    active: BTreeMap<(NodeId, NodeId), u64>,
    next_id: u64,
    next_message: u64,
    /// Handshake messages sent, including lost ones.
    pub messages_sent: u64,
}

impl SessionTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, id: u64) -> Option<&SecureSession> {
        self.sessions.get(&id)
    }

    pub fn sessions(&self) -> impl Iterator<Item = &SecureSession> {
        self.sessions.values()
    }

    pub fn active_between(&self, a: NodeId, b: NodeId) -> Option<&SecureSession> {
        self.active.get(&pair(a, b)).and_then(|id| self.sessions.get(id))
    }

    pub fn active_count(&self) -> usize {
        self.active.len()
    }

    /// Run the handshake between `a` and `b`. Both ends must be at least
    /// Conditionally trusted and mutually reachable. Each attempt sends
    /// a→b, b→a, a→b; the first lost message aborts the attempt. After
    /// `1 + HANDSHAKE_RETRIES` failed attempts the channel is refused.
    /// An existing Active session for the pair is returned unchanged.
    #[allow(clippy::too_many_arguments)]
    pub fn establish_secure_channel(
        &mut self,
        a: NodeId,
        b: NodeId,
        trust_a: TrustLevel,
        trust_b: TrustLevel,
        world: &RadioWorld,
        now: SimTime,
        rngs: &mut RngStreams,
    ) -> Result<u64, ChannelError> {
        for (node, level) in [(a, trust_a), (b, trust_b)] {
            if level < TrustLevel::Conditional {
                return Err(ChannelError::TrustDenied(node));
            }
        }
        if let RouteResult::Unreachable = world.route(a, b, now)? {
            return Err(ChannelError::Unreachable(a, b));
        }
        if let Some(&id) = self.active.get(&pair(a, b)) {
            return Ok(id);
        }
        for _attempt in 0..=HANDSHAKE_RETRIES {
            let mut at = now;
            let mut ok = true;
            for step in 0..HANDSHAKE_MESSAGES {
                let (src, dst) = if step % 2 == 0 { (a, b) } else { (b, a) };
                self.next_message += 1;
                self.messages_sent += 1;
                let mut msg = NetMessage::unicast(self.next_message, src, dst, PayloadKind::Handshake, HANDSHAKE_BYTES);
                match world.deliver(&mut msg, at, rngs.fork(src))? {
                    crate::radio::Delivery::Delivered { at: t, .. } => at = t,
                    _ => {
                        ok = false;
                        break;
                    }
                }
            }
            if ok {
                let id = self.next_id;
                self.next_id += 1;
                let key_id = short_digest(format!("{}:{}:{}:{}", a, b, id, at).as_bytes());
                let endpoints = pair(a, b);
                self.sessions.insert(id, SecureSession { id, endpoints, key_id, established: at, state: SessionState::Active });
                self.active.insert(endpoints, id);
                return Ok(id);
            }
        }
        Err(ChannelError::HandshakeFailed(a, b))
    }

    fn set_state(&mut self, node: NodeId, state: SessionState) -> Vec<u64> {
        let mut touched = Vec::new();
        for s in self.sessions.values_mut() {
            if s.involves(node) && s.state == SessionState::Active {
                s.state = state;
                self.active.remove(&s.endpoints);
                touched.push(s.id);
            }
        }
        touched
    }

    /// Mark every Active session of a captured node Compromised.
    pub fn compromise(&mut self, node: NodeId) -> Vec<u64> {
        self.set_state(node, SessionState::Compromised)
    }

    /// Close every Active session of a departing node.
    pub fn close(&mut self, node: NodeId) -> Vec<u64> {
        self.set_state(node, SessionState::Closed)
    }

    /// At most one Active session per pair, and the index agrees with the
    /// session records.
    pub fn is_consistent(&self) -> bool {
        let mut seen = BTreeMap::new();
        for s in self.sessions.values().filter(|s| s.state == SessionState::Active) {
            if seen.insert(s.endpoints, s.id).is_some() {
                return false;
            }
        }
        seen == self.active
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;
    use crate::radio::{NetParams, RadioNode};
    use proptest::prelude::*;

    fn world(p_loss: f64) -> RadioWorld {
        let mut w = RadioWorld::new(NetParams { p_loss, hop_latency: 1 });
        w.insert(RadioNode::drone(1, Vec3::zeros(), 100.0));
        w.insert(RadioNode::drone(2, Vec3::new(50.0, 0.0, 0.0), 100.0));
        w.insert(RadioNode::drone(3, Vec3::new(1000.0, 0.0, 0.0), 100.0));
        w
    }

    const T: TrustLevel = TrustLevel::Trusted;

    #[test]
    fn lossless_handshake_succeeds() {
        let w = world(0.0);
        let mut t = SessionTable::new();
        let mut r = RngStreams::new(1);
        let id = t.establish_secure_channel(NodeId(1), NodeId(2), T, T, &w, SimTime(0), &mut r).unwrap();
        let s = t.get(id).unwrap();
        assert_eq!(s.state, SessionState::Active);
        assert_eq!(s.established, SimTime(3));
        assert_eq!(t.messages_sent, 3);
        // second request reuses the session
        assert_eq!(t.establish_secure_channel(NodeId(2), NodeId(1), T, T, &w, SimTime(5), &mut r), Ok(id));
    }

    #[test]
    fn unreachable_and_untrusted() {
        let w = world(0.0);
        let mut t = SessionTable::new();
        let mut r = RngStreams::new(1);
        assert_eq!(
            t.establish_secure_channel(NodeId(1), NodeId(3), T, T, &w, SimTime(0), &mut r),
            Err(ChannelError::Unreachable(NodeId(1), NodeId(3)))
        );
        assert_eq!(
            t.establish_secure_channel(NodeId(1), NodeId(2), T, TrustLevel::Untrusted, &w, SimTime(0), &mut r),
            Err(ChannelError::TrustDenied(NodeId(2)))
        );
    }

    #[test]
    fn total_loss_fails_after_four_attempts() {
        let w = world(1.0);
        let mut t = SessionTable::new();
        let mut r = RngStreams::new(1);
        assert_eq!(
            t.establish_secure_channel(NodeId(1), NodeId(2), T, T, &w, SimTime(0), &mut r),
            Err(ChannelError::HandshakeFailed(NodeId(1), NodeId(2)))
        );
        assert_eq!(t.messages_sent, 4);
    }

    #[test]
    fn compromised_never_reactivates() {
        let w = world(0.0);
        let mut t = SessionTable::new();
        let mut r = RngStreams::new(1);
        let id = t.establish_secure_channel(NodeId(1), NodeId(2), T, T, &w, SimTime(0), &mut r).unwrap();
        assert_eq!(t.compromise(NodeId(2)), vec![id]);
        let id2 = t.establish_secure_channel(NodeId(1), NodeId(2), T, T, &w, SimTime(1), &mut r).unwrap();
        assert_ne!(id, id2);
        assert_eq!(t.get(id).unwrap().state, SessionState::Compromised);
        assert!(t.is_consistent());
    }

    proptest! {
        #[test]
        fn at_most_one_active_per_pair(ops in proptest::collection::vec((1u32..5, 1u32..5, 0u8..3), 0..60), seed in 0u64..100) {
            let mut w = RadioWorld::new(NetParams { p_loss: 0.3, hop_latency: 1 });
            for i in 1..5 {
                w.insert(RadioNode::drone(i, Vec3::new(i as f64 * 10.0, 0.0, 0.0), 100.0));
            }
            let mut t = SessionTable::new();
            let mut r = RngStreams::new(seed);
            for (a, b, op) in ops {
                match op {
                    0 if a != b => { let _ = t.establish_secure_channel(NodeId(a), NodeId(b), T, T, &w, SimTime(0), &mut r); }
                    1 => { t.compromise(NodeId(a)); }
                    _ => { t.close(NodeId(b)); }
                }
                prop_assert!(t.is_consistent());
            }
        }
    }
}
