//! Run report, metrics table and artifact files.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::gfms::MissionReport;
use crate::kernel::{MetricsSummary, TelemetryLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Completed,
    Aborted,
    Failed,
}

impl Outcome {
    /// Process exit status for the CLI.
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Completed => 0,
            Outcome::Aborted => 10,
            Outcome::Failed => 11,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MessageCount {
    pub sent: u64,
    pub delivered: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionEntry {
    pub tick: u64,
    pub signature: String,
    pub option: u32,
    pub action: String,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictEntry {
    pub tick: u64,
    pub drone: u32,
    pub verdict: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroneEntry {
    pub id: u32,
    pub status: String,
    pub ring: String,
    pub capacity: f64,
    pub remaining: f64,
    pub consumed_hover: f64,
    pub consumed_cruise: f64,
    pub consumed_compute: f64,
    pub consumed_radio: f64,
    pub work_delivered: f64,
    pub messages_sent: u64,
}

impl DroneEntry {
    pub fn consumed(&self) -> f64 {
        self.consumed_hover + self.consumed_cruise + self.consumed_compute + self.consumed_radio
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub outcome: Outcome,
    pub reason: String,
    pub ticks: u64,
    pub phase: String,
    pub completion: f64,
    pub objectives_completed: usize,
    pub objectives_total: usize,
    pub telemetry_digest: String,
    pub events: u64,
    pub reelections: u64,
    pub avoidances: u64,
    pub replans: u64,
    pub congestion_flags: u64,
    pub gcs_deliveries: u64,
    pub gcs_deliveries_during_jam: u64,
    pub energy_audits: u64,
    pub max_energy_error: f64,
    pub free_riders: Vec<u32>,
    pub sacrifices: Vec<u32>,
    pub captured: Vec<u32>,
    pub new_precedents: usize,
    /// Drone id → contribution window in which it was first flagged.
    pub free_rider_windows: BTreeMap<String, u64>,
    pub messages: BTreeMap<String, MessageCount>,
    pub decisions: Vec<DecisionEntry>,
    pub enrolments: Vec<VerdictEntry>,
    pub commands: Vec<VerdictEntry>,
    pub drones: Vec<DroneEntry>,
}

impl RunReport {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("reports always serialise")
    }

    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    /// One row per drone plus a `fleet` total row.
    pub fn metrics_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header = [
            "drone",
            "status",
            "ring",
            "capacity_j",
            "remaining_j",
            "hover_j",
            "cruise_j",
            "compute_j",
            "radio_j",
            "work_delivered",
            "messages_sent",
        ];
        w.write_record(header).expect("in-memory");
        let row = |id: String, status: &str, ring: &str, v: [f64; 7], msgs: u64| -> Vec<String> {
            let mut r = vec![id, status.to_string(), ring.to_string()];
            r.extend(v.iter().map(|x| format!("{x:.6}")));
            r.push(msgs.to_string());
            r
        };
        let mut total = [0.0; 7];
        let mut msgs = 0;
        for d in &self.drones {
            let v = [
                d.capacity,
                d.remaining,
                d.consumed_hover,
                d.consumed_cruise,
                d.consumed_compute,
                d.consumed_radio,
                d.work_delivered,
            ];
            for (t, x) in total.iter_mut().zip(v) {
                *t += x;
            }
            msgs += d.messages_sent;
            w.write_record(row(d.id.to_string(), &d.status, &d.ring, v, d.messages_sent)).expect("in-memory");
        }
        w.write_record(row("fleet".into(), self.outcome_name(), "", total, msgs)).expect("in-memory");
        String::from_utf8(w.into_inner().expect("in-memory")).expect("utf-8")
    }

    pub fn outcome_name(&self) -> &'static str {
        match self.outcome {
            Outcome::Completed => "completed",
            Outcome::Aborted => "aborted",
            Outcome::Failed => "failed",
        }
    }
}

/// Everything one run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub telemetry: TelemetryLog,
    pub summary: MetricsSummary,
    pub mission_report: Option<MissionReport>,
}

impl RunOutput {
    /// Write `telemetry.log`, `metrics.csv`, `report.toml`, `summary.txt`
    /// and (after a debrief) `mission_report.txt` into `dir`.
    pub fn write_artifacts(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("telemetry.log"), self.telemetry.to_text())?;
        fs::write(dir.join("metrics.csv"), self.report.metrics_csv())?;
        fs::write(dir.join("report.toml"), self.report.to_toml())?;
        fs::write(dir.join("summary.txt"), self.summary.to_text())?;
        if let Some(m) = &self.mission_report {
            fs::write(dir.join("mission_report.txt"), m.to_text())?;
        }
        Ok(())
    }
}
