//! Per-window contribution accounting and free-rider detection.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::ids::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LedgerParams {
    /// Window length in ticks.
    pub window: u64,
    /// Contribution ratio below which a window counts as low.
    pub tau: f64,
    /// Consecutive low windows before a drone is a free rider.
    pub windows_to_flag: u32,
}

impl Default for LedgerParams {
    fn default() -> Self {
        Self { window: 100, tau: 0.5, windows_to_flag: 3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
struct Tally {
    assigned: f64,
    delivered: f64,
}

/// Ratios computed when a window closes.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowClose {
    pub index: u64,
    pub ratios: BTreeMap<NodeId, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContributionLedger {
    pub params: LedgerParams,
    current: BTreeMap<NodeId, Tally>,
    counters: BTreeMap<NodeId, u32>,
    closed_windows: u64,
}

impl ContributionLedger {
    pub fn new(params: LedgerParams) -> Self {
        Self { params, current: BTreeMap::new(), counters: BTreeMap::new(), closed_windows: 0 }
    }

    /// Register a drone so it is accounted even in windows without work.
    pub fn track(&mut self, drone: NodeId) {
        self.current.entry(drone).or_default();
        self.counters.entry(drone).or_insert(0);
    }

    pub fn assign(&mut self, drone: NodeId, units: f64) {
        self.track(drone);
        self.current.get_mut(&drone).expect("tracked").assigned += units.max(0.0);
    }

    /// Book delivered work. Deliveries beyond the assigned amount are not
    /// credited, so delivered never exceeds assigned.
    pub fn report(&mut self, drone: NodeId, units: f64) {
        self.track(drone);
        let t = self.current.get_mut(&drone).expect("tracked");
        t.delivered = (t.delivered + units.max(0.0)).min(t.assigned);
    }

    /// Apply a batch of delivered-work reports.
    pub fn update_contributions(&mut self, reports: &[(NodeId, f64)]) {
        for &(d, u) in reports {
            self.report(d, u);
        }
    }

    pub fn assigned(&self, drone: NodeId) -> f64 {
        self.current.get(&drone).map_or(0.0, |t| t.assigned)
    }

    pub fn delivered(&self, drone: NodeId) -> f64 {
        self.current.get(&drone).map_or(0.0, |t| t.delivered)
    }

    pub fn counter(&self, drone: NodeId) -> u32 {
        self.counters.get(&drone).copied().unwrap_or(0)
    }

    pub fn closed_windows(&self) -> u64 {
        self.closed_windows
    }

    /// Close the window: `ratio = delivered / assigned` (1 when nothing was
    /// assigned); a ratio under tau bumps the drone's low counter, anything
    /// else resets it. Tallies restart at zero.
    pub fn close_window(&mut self) -> WindowClose {
        let mut ratios = BTreeMap::new();
        for (&d, t) in &mut self.current {
            let r = if t.assigned <= 0.0 { 1.0 } else { t.delivered / t.assigned };
            let c = self.counters.entry(d).or_insert(0);
            if r < self.params.tau {
                *c += 1;
            } else {
                *c = 0;
            }
            ratios.insert(d, r);
            *t = Tally::default();
        }
        self.closed_windows += 1;
        WindowClose { index: self.closed_windows, ratios }
    }

    /// Settle and stop tracking a departed drone.
    pub fn settle(&mut self, drone: NodeId) {
        self.current.remove(&drone);
        self.counters.remove(&drone);
    }

    pub fn counters(&self) -> &BTreeMap<NodeId, u32> {
        &self.counters
    }
}

/// Drones with at least `windows` consecutive low windows.
pub fn detect_free_riders(ledger: &ContributionLedger, windows: u32) -> BTreeSet<NodeId> {
    ledger.counters.iter().filter(|(_, &c)| c >= windows).map(|(d, _)| *d).collect()
}
