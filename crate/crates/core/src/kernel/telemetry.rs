//! Telemetry log and metrics summary formats.
//!
//! Telemetry is newline-delimited, one record per processed event:
//!
//! ```text
//! # sodsim-telemetry v1 seed=42
//! <tick>\t<seq>\t<entity>\t<kind>\t<payload-digest>
//! ```
//!
//! The payload digest is the first 16 hex digits of SHA-256 over the event's
//! payload text.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ids::NodeId;

pub const TELEMETRY_FORMAT_VERSION: u32 = 1;
const HEADER_PREFIX: &str = "# sodsim-telemetry v";

/// Short stable digest (16 hex digits of SHA-256).
pub fn short_digest(bytes: &[u8]) -> String {
    let full = Sha256::digest(bytes);
    let mut out = String::with_capacity(16);
    for b in &full[..8] {
        let _ = write!(out, "{b:02x}");
    }
    out
}

/// Full SHA-256 hex digest.
pub fn full_digest(bytes: &[u8]) -> String {
    let full = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in full.iter() {
        let _ = write!(out, "{b:02x}");
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TelemetryRecord {
    pub tick: u64,
    pub seq: u64,
    pub entity: NodeId,
    pub kind: String,
    pub digest: String,
}

impl fmt::Display for TelemetryRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t{}\t{}\t{}", self.tick, self.seq, self.entity, self.kind, self.digest)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TelemetryError {
    #[error("telemetry format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: String, expected: u32 },
    #[error("malformed telemetry header")]
    MissingHeader,
    #[error("malformed telemetry record at line {line}")]
    Malformed { line: usize },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TelemetryLog {
    pub seed: u64,
    pub records: Vec<TelemetryRecord>,
}

impl TelemetryLog {
    pub fn new(seed: u64) -> Self {
        Self { seed, records: Vec::new() }
    }

    pub fn push(&mut self, record: TelemetryRecord) {
        self.records.push(record);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(64 + self.records.len() * 48);
        let _ = writeln!(out, "{HEADER_PREFIX}{TELEMETRY_FORMAT_VERSION} seed={}", self.seed);
        for r in &self.records {
            let _ = writeln!(out, "{r}");
        }
        out
    }

    /// SHA-256 over the serialized log.
    pub fn digest(&self) -> String {
        full_digest(self.to_text().as_bytes())
    }

    pub fn parse(text: &str) -> Result<Self, TelemetryError> {
        let mut lines = text.lines();
        let header = lines.next().ok_or(TelemetryError::MissingHeader)?;
        let rest = header.strip_prefix(HEADER_PREFIX).ok_or(TelemetryError::MissingHeader)?;
        let mut parts = rest.split_whitespace();
        let version = parts.next().ok_or(TelemetryError::MissingHeader)?;
        if version != TELEMETRY_FORMAT_VERSION.to_string() {
            return Err(TelemetryError::VersionMismatch { found: version.to_string(), expected: TELEMETRY_FORMAT_VERSION });
        }
        let seed = parts
            .next()
            .and_then(|s| s.strip_prefix("seed="))
            .and_then(|s| s.parse().ok())
            .ok_or(TelemetryError::MissingHeader)?;
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let malformed = || TelemetryError::Malformed { line: i + 2 };
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 5 {
                return Err(malformed());
            }
            records.push(TelemetryRecord {
                tick: f[0].parse().map_err(|_| malformed())?,
                seq: f[1].parse().map_err(|_| malformed())?,
                entity: NodeId(f[2].parse().map_err(|_| malformed())?),
                kind: f[3].to_string(),
                digest: f[4].to_string(),
            });
        }
        Ok(Self { seed, records })
    }
}

/// Flat key/value run summary, rendered as `key = value` lines in key order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MetricsSummary {
    entries: BTreeMap<String, String>,
}

impl MetricsSummary {
    pub fn set(&mut self, key: impl Into<String>, value: impl fmt::Display) {
        self.entries.insert(key.into(), value.to_string());
    }

    pub fn add(&mut self, key: &str, delta: u64) {
        let cur: u64 = self.entries.get(key).and_then(|v| v.parse().ok()).unwrap_or(0);
        self.entries.insert(key.to_string(), (cur + delta).to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get_u64(&self, key: &str) -> u64 {
        self.get(key).and_then(|v| v.parse().ok()).unwrap_or(0)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn parse(text: &str) -> Option<Self> {
        let mut entries = BTreeMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line.split_once(" = ")?;
            entries.insert(k.to_string(), v.to_string());
        }
        Some(Self { entries })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_text_round_trip() {
        let mut log = TelemetryLog::new(42);
        log.push(TelemetryRecord { tick: 3, seq: 0, entity: NodeId(2), kind: "flight_step".into(), digest: short_digest(b"x") });
        let parsed = TelemetryLog::parse(&log.to_text()).unwrap();
        assert_eq!(parsed, log);
    }

    #[test]
    fn version_mismatch_detected() {
        let err = TelemetryLog::parse("# sodsim-telemetry v9 seed=1\n").unwrap_err();
        assert!(matches!(err, TelemetryError::VersionMismatch { .. }));
    }

    #[test]
    fn summary_text_round_trip() {
        let mut m = MetricsSummary::default();
        m.set("clock", 100);
        m.add("events.total", 2);
        m.add("events.total", 3);
        assert_eq!(MetricsSummary::parse(&m.to_text()).unwrap(), m);
        assert_eq!(m.get_u64("events.total"), 5);
    }
}
