//! Attestation tokens and trust verdicts.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ids::{NodeId, OrgId};
use crate::policy::{harmonise_policy, PolicySet};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttestationToken {
    pub subject: NodeId,
    /// Last tick the token is valid for.
    pub expires: u64,
    #[serde(default)]
    pub revoked: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AttestationStore {
    tokens: BTreeMap<NodeId, AttestationToken>,
}

impl AttestationStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn issue(&mut self, subject: NodeId, expires: u64) {
        self.tokens.insert(subject, AttestationToken { subject, expires, revoked: false });
    }

    pub fn revoke(&mut self, subject: NodeId) {
        if let Some(t) = self.tokens.get_mut(&subject) {
            t.revoked = true;
        }
    }

    pub fn is_valid(&self, subject: NodeId, now: u64) -> bool {
        self.tokens.get(&subject).is_some_and(|t| !t.revoked && now <= t.expires)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TrustLevel {
    Untrusted,
    Conditional,
    Trusted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrustVerdict {
    pub subject: NodeId,
    pub level: TrustLevel,
    pub token_valid: bool,
    pub same_org: bool,
    pub policy_compatible: bool,
}

/// Trusted needs a valid token, the swarm's organisation and a policy that
/// harmonises with the baseline; a foreign organisation with the other two
/// is Conditional; anything else is Untrusted.
pub fn verify_trust(
    subject: NodeId,
    subject_org: &OrgId,
    subject_policy: &PolicySet,
    swarm_org: &OrgId,
    baseline: &PolicySet,
    attestations: &AttestationStore,
    now: u64,
) -> TrustVerdict {
    let token_valid = attestations.is_valid(subject, now);
    let same_org = subject_org == swarm_org;
    let policy_compatible = harmonise_policy(subject_policy, baseline).is_compatible();
    let level = match (token_valid, policy_compatible, same_org) {
        (true, true, true) => TrustLevel::Trusted,
        (true, true, false) => TrustLevel::Conditional,
        _ => TrustLevel::Untrusted,
    };
    TrustVerdict { subject, level, token_valid, same_org, policy_compatible }
}
