//! Situation signatures, precedent records and their replicated storage.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ids::{MissionId, NodeId, OptionId};
use crate::kernel::full_digest;

/// Token prefixes of the signature vocabulary.
const PREFIXES: [&str; 4] = ["event:", "rule:", "severity:", "phase:"];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SignatureError {
    #[error("a situation signature needs at least one token")]
    Empty,
    #[error("token '{0}' is outside the signature vocabulary")]
    BadToken(String),
    #[error("malformed precedent line: {0}")]
    BadRecord(String),
}

/// Non-empty set of categorical tokens such as `event:drone_capture` or
/// `severity:high`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SituationSignature(BTreeSet<String>);

impl SituationSignature {
    pub fn new<I, S>(tokens: I) -> Result<Self, SignatureError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = tokens.into_iter().map(Into::into).collect();
        if set.is_empty() {
            return Err(SignatureError::Empty);
        }
        for t in &set {
            let ok = PREFIXES.iter().any(|p| {
                t.strip_prefix(p)
                    .is_some_and(|rest| !rest.is_empty() && rest.chars().all(|c| c.is_ascii_alphanumeric() || "_-.".contains(c)))
            });
            if !ok {
                return Err(SignatureError::BadToken(t.clone()));
            }
        }
        Ok(Self(set))
    }

    pub fn tokens(&self) -> &BTreeSet<String> {
        &self.0
    }

    /// SHA-256 of the sorted, comma-joined tokens.
    pub fn digest(&self) -> String {
        full_digest(self.to_string().as_bytes())
    }
}

impl fmt::Display for SituationSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let joined: Vec<&str> = self.0.iter().map(String::as_str).collect();
        f.write_str(&joined.join(","))
    }
}

pub fn jaccard(a: &SituationSignature, b: &SituationSignature) -> f64 {
    let inter = a.0.intersection(&b.0).count();
    let union = a.0.union(&b.0).count();
    inter as f64 / union as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrecedentRecord {
    pub signature: SituationSignature,
    pub decision: OptionId,
    /// In `[0, 1]`; drafts carry 0 until debrief scores them.
    pub outcome: f64,
    pub mission: MissionId,
    pub tick: u64,
}

impl PrecedentRecord {
    /// Identity used for deduplication and content addressing.
    pub fn key(&self) -> (String, OptionId, MissionId) {
        (self.signature.digest(), self.decision, self.mission)
    }

    /// `mission \t tick \t decision \t outcome \t tokens`.
    pub fn to_line(&self) -> String {
        format!("{}\t{}\t{}\t{:.6}\t{}", self.mission, self.tick, self.decision, self.outcome, self.signature)
    }

    pub fn from_line(line: &str) -> Result<Self, SignatureError> {
        let bad = || SignatureError::BadRecord(line.to_string());
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(bad());
        }
        let outcome: f64 = f[3].parse().map_err(|_| bad())?;
        if !(0.0..=1.0).contains(&outcome) {
            return Err(bad());
        }
        Ok(Self {
            mission: MissionId(f[0].parse().map_err(|_| bad())?),
            tick: f[1].parse().map_err(|_| bad())?,
            decision: OptionId(f[2].parse().map_err(|_| bad())?),
            outcome,
            signature: SituationSignature::new(f[4].split(','))?,
        })
    }
}

/// Flat collection of precedents (one drone shard, or a whole store).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct KnowledgeBase {
    pub records: Vec<PrecedentRecord>,
}

impl KnowledgeBase {
    pub fn new(records: Vec<PrecedentRecord>) -> Self {
        Self { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Evaluation {
    Precedent { record: PrecedentRecord, similarity: f64 },
    Novel,
}

fn better(a: &PrecedentRecord, b: &PrecedentRecord) -> bool {
    a.outcome
        .total_cmp(&b.outcome)
        .then(a.mission.cmp(&b.mission))
        .then(b.tick.cmp(&a.tick))
        .is_gt()
}

/// Look for a precedent: exact signature matches first, otherwise records
/// at Jaccard similarity `sigma` or more. The best record has the highest
/// outcome, then the most recent mission, then the lowest tick.
pub fn evaluate_situation<'a>(
    sig: &SituationSignature,
    records: impl IntoIterator<Item = &'a PrecedentRecord>,
    sigma: f64,
) -> Evaluation {
    let mut exact: Option<&PrecedentRecord> = None;
    let mut similar: Option<(&PrecedentRecord, f64)> = None;
    for r in records {
        if &r.signature == sig {
            if exact.is_none_or(|e| better(r, e)) {
                exact = Some(r);
            }
        } else {
            let s = jaccard(sig, &r.signature);
            if s >= sigma && similar.is_none_or(|(e, _)| better(r, e)) {
                similar = Some((r, s));
            }
        }
    }
    match (exact, similar) {
        (Some(r), _) => Evaluation::Precedent { record: r.clone(), similarity: 1.0 },
        (None, Some((r, s))) => Evaluation::Precedent { record: r.clone(), similarity: s },
        (None, None) => Evaluation::Novel,
    }
}

pub const REPLICAS: usize = 3;

fn rendezvous_score(digest: &str, drone: NodeId) -> u64 {
    let mut h = Sha256::new();
    h.update(digest.as_bytes());
    h.update(b":");
    h.update(drone.0.to_be_bytes());
    let out = h.finalize();
    u64::from_be_bytes(out[..8].try_into().expect("8 bytes"))
}

/// The `min(REPLICAS, n)` members with the highest rendezvous score for
/// `digest`, ties to the lower id; returned in id order.
pub fn rendezvous_holders(digest: &str, members: &[NodeId]) -> Vec<NodeId> {
    let mut scored: Vec<(u64, NodeId)> = members.iter().map(|&m| (rendezvous_score(digest, m), m)).collect();
    scored.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    scored.dedup_by_key(|s| s.1);
    let mut out: Vec<NodeId> = scored.into_iter().take(REPLICAS).map(|(_, m)| m).collect();
    out.sort_unstable();
    out
}

/// Per-drone precedent shards.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeShards {
    shards: BTreeMap<NodeId, Vec<PrecedentRecord>>,
}

impl KnowledgeShards {
    pub fn new() -> Self {
        Self::default()
    }

    /// Store a replica unless the holder already has that record.
    pub fn insert(&mut self, holder: NodeId, record: PrecedentRecord) -> bool {
        let shard = self.shards.entry(holder).or_default();
        if shard.iter().any(|r| r.key() == record.key()) {
            return false;
        }
        shard.push(record);
        true
    }

    pub fn seed(&mut self, holder: NodeId, records: &[PrecedentRecord]) {
        for r in records {
            self.insert(holder, r.clone());
        }
    }

    pub fn shard(&self, holder: NodeId) -> &[PrecedentRecord] {
        self.shards.get(&holder).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Drop a lost drone's shard; returns what it held.
    pub fn remove_holder(&mut self, holder: NodeId) -> Vec<PrecedentRecord> {
        self.shards.remove(&holder).unwrap_or_default()
    }

    pub fn holders(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.shards.keys().copied()
    }

    /// Every distinct record across surviving shards.
    pub fn all_records(&self) -> Vec<PrecedentRecord> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for r in self.shards.values().flatten() {
            if seen.insert(r.key()) {
                out.push(r.clone());
            }
        }
        out
    }

    pub fn lookup(&self, key: &(String, OptionId, MissionId)) -> Option<&PrecedentRecord> {
        self.shards.values().flatten().find(|r| &r.key() == key)
    }
}

/// Replicate `record` onto its rendezvous holders among `members`
/// (storage only; the simulator ships the replicas over the radio).
pub fn learn(record: &PrecedentRecord, members: &[NodeId], shards: &mut KnowledgeShards) -> Vec<NodeId> {
    let holders = rendezvous_holders(&record.signature.digest(), members);
    for &h in &holders {
        shards.insert(h, record.clone());
    }
    holders
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sig(tokens: &[&str]) -> SituationSignature {
        SituationSignature::new(tokens.iter().copied()).unwrap()
    }

    fn rec(tokens: &[&str], decision: u32, outcome: f64, mission: u64, tick: u64) -> PrecedentRecord {
        PrecedentRecord { signature: sig(tokens), decision: OptionId(decision), outcome, mission: MissionId(mission), tick }
    }

    #[test]
    fn signature_vocabulary() {
        assert_eq!(SituationSignature::new(Vec::<String>::new()), Err(SignatureError::Empty));
        assert!(matches!(SituationSignature::new(["colour:red"]), Err(SignatureError::BadToken(_))));
        assert!(SituationSignature::new(["event:drone_capture", "severity:high"]).is_ok());
    }

    #[test]
    fn empty_kb_is_novel() {
        assert_eq!(evaluate_situation(&sig(&["event:a"]), &[], 0.8), Evaluation::Novel);
    }

    #[test]
    fn exact_match_found() {
        let kb = [rec(&["event:a", "rule:b"], 2, 0.9, 1, 5)];
        assert!(matches!(evaluate_situation(&sig(&["event:a", "rule:b"]), &kb, 0.8), Evaluation::Precedent { ref record, .. } if record.decision == OptionId(2)));
    }

    #[test]
    fn jaccard_half_is_novel() {
        let kb = [rec(&["event:a", "event:b", "event:d"], 2, 0.9, 1, 5)];
        let s = sig(&["event:a", "event:b", "event:c"]);
        assert_eq!(jaccard(&s, &kb[0].signature), 0.5);
        assert_eq!(evaluate_situation(&s, &kb, 0.8), Evaluation::Novel);
    }

    #[test]
    fn ranking_and_exact_preference() {
        let s = &["event:a", "rule:x", "severity:high", "phase:commenced", "event:b"];
        let kb = [
            rec(s, 1, 0.7, 1, 10),
            rec(s, 2, 0.7, 2, 30),
            rec(s, 3, 0.7, 2, 20),
            rec(&["event:a", "rule:x", "severity:high", "phase:commenced", "event:b", "event:c"], 4, 1.0, 3, 0),
        ];
        let Evaluation::Precedent { record, similarity } = evaluate_situation(&sig(s), &kb, 0.8) else { panic!() };
        assert_eq!(record.decision, OptionId(3));
        assert_eq!(similarity, 1.0);
    }

    #[test]
    fn record_line_round_trip() {
        let r = rec(&["event:a", "severity:low"], 7, 0.75, 3, 120);
        assert_eq!(PrecedentRecord::from_line(&r.to_line()).unwrap(), r);
        assert!(PrecedentRecord::from_line("1\t2\t3").is_err());
    }

    #[test]
    fn replica_counts() {
        let r = rec(&["event:a"], 1, 0.5, 1, 1);
        let mut shards = KnowledgeShards::new();
        assert_eq!(learn(&r, &[NodeId(4)], &mut shards), vec![NodeId(4)]);
        let ten: Vec<NodeId> = (0..10).map(NodeId).collect();
        let holders = learn(&r, &ten, &mut shards);
        assert_eq!(holders.len(), 3);
        // recompute: highest hash scores
        let mut by_score: Vec<(u64, NodeId)> = ten
            .iter()
            .map(|&d| {
                let h = Sha256::digest(format!("{}:", r.signature.digest()).into_bytes().into_iter().chain(d.0.to_be_bytes()).collect::<Vec<u8>>());
                (u64::from_be_bytes(h[..8].try_into().unwrap()), d)
            })
            .collect();
        by_score.sort_by(|a, b| b.cmp(a));
        let mut expect: Vec<NodeId> = by_score[..3].iter().map(|x| x.1).collect();
        expect.sort();
        assert_eq!(holders, expect);
        assert_eq!(learn(&r, &ten, &mut KnowledgeShards::new()), holders);
    }

    proptest! {
        /// Any single holder loss leaves every record retrievable.
        #[test]
        fn survives_one_capture(n in 3u32..12, records in proptest::collection::vec((0u32..5, 0u64..4), 1..20), victim in 0u32..12) {
            let members: Vec<NodeId> = (0..n).map(NodeId).collect();
            let mut shards = KnowledgeShards::new();
            let recs: Vec<PrecedentRecord> = records.iter().enumerate()
                .map(|(i, &(d, m))| rec(&[&format!("event:e{i}")], d, 0.5, m, i as u64)).collect();
            for r in &recs {
                learn(r, &members, &mut shards);
            }
            shards.remove_holder(NodeId(victim % n));
            for r in &recs {
                prop_assert!(shards.lookup(&r.key()).is_some());
            }
        }
    }
}
