//! Persistent cross-mission knowledge store.
//!
//! ```text
//! # sodsim-knowledge v1 checksum=sha256
//! <precedent line>
//! ...
//! # checksum <sha256 of every precedent line, each ending in \n>
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::ids::{MissionId, OptionId};
use crate::kernel::full_digest;
use crate::swarm::PrecedentRecord;

use super::MissionReport;

pub const STORE_FORMAT_VERSION: u32 = 1;
const HEADER: &str = "# sodsim-knowledge v1 checksum=sha256";
const TRAILER: &str = "# checksum ";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("knowledge store i/o: {0}")]
    Io(#[from] io::Error),
    #[error("knowledge store is corrupt: {0}")]
    Corrupt(String),
}

type Key = (String, OptionId, MissionId);

/// Content-addressed by (signature digest, decision, mission).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct KnowledgeStore {
    records: BTreeMap<Key, PrecedentRecord>,
}

impl KnowledgeStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// The full store, which is what the next brief carries.
    pub fn snapshot(&self) -> Vec<PrecedentRecord> {
        self.records.values().cloned().collect()
    }

    /// Append the report's precedents; keys already present are left
    /// alone, so re-consolidating a report changes nothing. Returns the
    /// number of records added.
    pub fn consolidate(&mut self, report: &MissionReport) -> usize {
        let mut added = 0;
        for r in &report.precedents {
            if let std::collections::btree_map::Entry::Vacant(v) = self.records.entry(r.key()) {
                v.insert(r.clone());
                added += 1;
            }
        }
        added
    }

    pub fn to_text(&self) -> String {
        let body: String = self.records.values().map(|r| format!("{}\n", r.to_line())).collect();
        format!("{HEADER}\n{body}{TRAILER}{}\n", full_digest(body.as_bytes()))
    }

    pub fn parse(text: &str) -> Result<Self, StoreError> {
        let corrupt = |m: &str| StoreError::Corrupt(m.to_string());
        let mut lines: Vec<&str> = text.lines().collect();
        if lines.first() != Some(&HEADER) {
            return Err(corrupt("bad header"));
        }
        let trailer = lines.pop().and_then(|l| l.strip_prefix(TRAILER)).ok_or_else(|| corrupt("missing checksum"))?;
        let body: String = lines[1..].iter().map(|l| format!("{l}\n")).collect();
        if full_digest(body.as_bytes()) != trailer {
            return Err(corrupt("checksum mismatch"));
        }
        let mut records = BTreeMap::new();
        for l in &lines[1..] {
            let r = PrecedentRecord::from_line(l).map_err(|e| StoreError::Corrupt(e.to_string()))?;
            records.insert(r.key(), r);
        }
        Ok(Self { records })
    }

    /// Missing file means an empty store.
    pub fn load(path: &Path) -> Result<Self, StoreError> {
        match fs::read_to_string(path) {
            Ok(text) => Self::parse(&text),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Self::new()),
            Err(e) => Err(e.into()),
        }
    }

    /// Write through a temporary file and rename.
    pub fn save(&self, path: &Path) -> Result<(), StoreError> {
        let tmp = sibling(path, "tmp");
        fs::write(&tmp, self.to_text())?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    /// Load, consolidate and save under an exclusive advisory lock on
    /// `<path>.lock`. Returns the updated store.
    pub fn consolidate_file(path: &Path, report: &MissionReport) -> Result<Self, StoreError> {
        let lock = OpenOptions::new().create(true).truncate(false).write(true).open(sibling(path, "lock"))?;
        lock.lock()?;
        let result = (|| {
            let mut store = Self::load(path)?;
            store.consolidate(report);
            store.save(path)?;
            Ok(store)
        })();
        File::unlock(&lock)?;
        result
    }
}

fn sibling(path: &Path, ext: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::swarm::SituationSignature;

    fn report(mission: u64, n: u32) -> MissionReport {
        let precedents = (0..n)
            .map(|i| PrecedentRecord {
                signature: SituationSignature::new([format!("event:e{i}")]).unwrap(),
                decision: OptionId(i % 2),
                outcome: 0.5,
                mission: MissionId(mission),
                tick: i as u64,
            })
            .collect();
        MissionReport { mission: MissionId(mission), precedents, missing_logs: vec![], objectives_completed: 0, objectives_total: 0 }
    }

    #[test]
    fn idempotent_and_additive() {
        let mut s = KnowledgeStore::new();
        assert_eq!(s.consolidate(&report(1, 3)), 3);
        let once = s.clone();
        assert_eq!(s.consolidate(&report(1, 3)), 0);
        assert_eq!(s, once);
        s.consolidate(&report(2, 4));
        assert_eq!(s.len(), 7);
        let snap = s.snapshot();
        assert!(report(1, 3).precedents.iter().all(|p| snap.contains(p)));
    }

    #[test]
    fn file_round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kb.txt");
        let s = KnowledgeStore::consolidate_file(&path, &report(1, 2)).unwrap();
        assert_eq!(KnowledgeStore::load(&path).unwrap(), s);
        let again = KnowledgeStore::consolidate_file(&path, &report(1, 2)).unwrap();
        assert_eq!(again, s);

        let text = fs::read_to_string(&path).unwrap().replace("0.500000", "0.900000");
        fs::write(&path, text).unwrap();
        assert!(matches!(KnowledgeStore::load(&path), Err(StoreError::Corrupt(_))));
    }

    #[test]
    fn missing_file_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        assert!(KnowledgeStore::load(&dir.path().join("none")).unwrap().is_empty());
    }
}
