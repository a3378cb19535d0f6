//! Deterministic discrete-event engine.
//!
//! The kernel owns the virtual clock, the pending event queue, the per-entity
//! random streams and the telemetry log. Events fire in `(fire_time, seq)`
//! order where `seq` is the insertion counter, so simultaneous events run in
//! the order they were scheduled.

mod rng;
mod telemetry;

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;

use thiserror::Error;

use crate::ids::NodeId;

pub use rng::{RngStream, RngStreams};
pub use telemetry::{
    full_digest, short_digest, MetricsSummary, TelemetryError, TelemetryLog, TelemetryRecord,
    TELEMETRY_FORMAT_VERSION,
};

/// Entity id used for swarm-wide (not drone-specific) events.
pub const SWARM_ENTITY: NodeId = NodeId(u32::MAX);

/// Virtual time in whole ticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn ticks(self) -> u64 {
        self.0
    }

    pub fn after(self, ticks: u64) -> SimTime {
        SimTime(self.0 + ticks)
    }

    /// Wall-clock seconds for a given tick duration.
    pub fn seconds(self, tick_seconds: f64) -> f64 {
        self.0 as f64 * tick_seconds
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Closed set of event descriptors understood by the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    MessageDelivery { message: u64 },
    SensorDetection { obstacle: u32 },
    JammingStart { region: u32 },
    JammingStop { region: u32 },
    EnrolRequest,
    DroneCapture,
    PeriodicReport,
    FlightStep,
    ObstacleAppears { obstacle: u32 },
    AirspaceInjunction { injunction: u32 },
    ContributionWindow,
    Reelection,
    LeaveRequest,
    ActionRequest { action: u32 },
    Lifecycle,
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::MessageDelivery { .. } => "message_delivery",
            EventKind::SensorDetection { .. } => "sensor_detection",
            EventKind::JammingStart { .. } => "jamming_start",
            EventKind::JammingStop { .. } => "jamming_stop",
            EventKind::EnrolRequest => "enrol_request",
            EventKind::DroneCapture => "drone_capture",
            EventKind::PeriodicReport => "periodic_report",
            EventKind::FlightStep => "flight_step",
            EventKind::ObstacleAppears { .. } => "obstacle_appears",
            EventKind::AirspaceInjunction { .. } => "airspace_injunction",
            EventKind::ContributionWindow => "contribution_window",
            EventKind::Reelection => "reelection",
            EventKind::LeaveRequest => "leave_request",
            EventKind::ActionRequest { .. } => "action_request",
            EventKind::Lifecycle => "lifecycle",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimEvent {
    pub fire_time: SimTime,
    pub seq: u64,
    pub kind: EventKind,
    pub target: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Queued {
    fire_time: SimTime,
    seq: u64,
    kind: EventKind,
    target: NodeId,
}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.fire_time, self.seq).cmp(&(other.fire_time, other.seq))
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KernelError {
    #[error("event at tick {requested} is in the past (now = {now})")]
    PastEvent { requested: SimTime, now: SimTime },
}

/// Reacts to fired events. The returned string is the event payload; its
/// digest goes into the telemetry record.
pub trait EventHandler {
    fn handle(&mut self, event: &SimEvent, kernel: &mut Kernel) -> String;

    /// Stop the run early (e.g. the mission reached a terminal phase).
    fn finished(&self) -> bool {
        false
    }

    /// Add handler-side metrics to the run summary.
    fn summarize(&self, _summary: &mut MetricsSummary) {}
}

impl<F> EventHandler for F
where
    F: FnMut(&SimEvent, &mut Kernel) -> String,
{
    fn handle(&mut self, event: &SimEvent, kernel: &mut Kernel) -> String {
        self(event, kernel)
    }
}

pub struct Kernel {
    now: SimTime,
    next_seq: u64,
    queue: BinaryHeap<Reverse<Queued>>,
    rngs: RngStreams,
    telemetry: TelemetryLog,
    processed: BTreeMap<&'static str, u64>,
}

impl Kernel {
    pub fn new(root_seed: u64) -> Self {
        Self {
            now: SimTime::ZERO,
            next_seq: 0,
            queue: BinaryHeap::new(),
            rngs: RngStreams::new(root_seed),
            telemetry: TelemetryLog::new(root_seed),
            processed: BTreeMap::new(),
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn root_seed(&self) -> u64 {
        self.rngs.root_seed()
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    /// Enqueue an event; returns its sequence number.
    pub fn schedule(&mut self, fire_time: SimTime, kind: EventKind, target: NodeId) -> Result<u64, KernelError> {
        if fire_time < self.now {
            return Err(KernelError::PastEvent { requested: fire_time, now: self.now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse(Queued { fire_time, seq, kind, target }));
        Ok(seq)
    }

    /// Schedule `delay` ticks from now; never fails.
    pub fn schedule_in(&mut self, delay: u64, kind: EventKind, target: NodeId) -> u64 {
        let at = self.now.after(delay);
        self.schedule(at, kind, target).expect("future event")
    }

    pub fn fork_rng(&mut self, entity: NodeId) -> &mut RngStream {
        self.rngs.fork(entity)
    }

    pub fn rng_streams(&mut self) -> &mut RngStreams {
        &mut self.rngs
    }

    pub fn telemetry(&self) -> &TelemetryLog {
        &self.telemetry
    }

    pub fn into_telemetry(self) -> TelemetryLog {
        self.telemetry
    }

    pub fn processed_count(&self) -> u64 {
        self.processed.values().sum()
    }

    /// Process every event with `fire_time <= t_end` (or until the handler
    /// reports it has finished). With an empty queue the clock simply
    /// advances to `t_end`.
    pub fn run_until<H: EventHandler + ?Sized>(&mut self, t_end: SimTime, handler: &mut H) -> MetricsSummary {
        let t_end = t_end.max(self.now);
        let mut stopped_early = false;
        while let Some(Reverse(next)) = self.queue.peek().copied() {
            if next.fire_time > t_end {
                break;
            }
            if handler.finished() {
                stopped_early = true;
                break;
            }
            self.queue.pop();
            debug_assert!(next.fire_time >= self.now);
            self.now = next.fire_time;
            let event = SimEvent { fire_time: next.fire_time, seq: next.seq, kind: next.kind, target: next.target };
            let payload = handler.handle(&event, self);
            *self.processed.entry(event.kind.name()).or_insert(0) += 1;
            self.telemetry.push(TelemetryRecord {
                tick: event.fire_time.0,
                seq: event.seq,
                entity: event.target,
                kind: event.kind.name().to_string(),
                digest: short_digest(payload.as_bytes()),
            });
        }
        if !stopped_early && !handler.finished() {
            self.now = t_end;
        }
        let mut summary = MetricsSummary::default();
        summary.set("clock", self.now.0);
        summary.set("events.total", self.processed_count());
        for (kind, n) in &self.processed {
            summary.set(format!("events.{kind}"), n);
        }
        handler.summarize(&mut summary);
        summary
    }
}
