//! Deterministic discrete-event network simulator.
//!
//! Schedules run as resumable state machines on a single-threaded event
//! loop. Time is abstract. The cost model charges per-message latency,
//! per-byte wire time, optional NIC injection serialization, a per-entry
//! cost for searching the posted-receive queue, and local time for failed
//! polls. Blocking waits cost nothing themselves; a rank that waits simply
//! has no events until the awaited completion arrives.

mod engine;
mod model;
mod trace;

pub use engine::{simulate_programs, RankProgram};
pub use model::{CostModel, SkewProfile};
pub use trace::{makespan, EventTrace, TraceError, TraceEvent, TraceRecord, TRACE_CSV_HEADER};

use thiserror::Error;

use crate::algorithms::{ScheduleKind, ScheduleMachine};
use crate::plan::{fill_all, ExchangePlan, PlanError, Rank};
use crate::transport::MatchQueueStats;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("cost parameter {name} must be finite and non-negative, got {value}")]
    BadCost { name: &'static str, value: f64 },
    #[error("skew profile has {got} offsets for {expected} ranks")]
    SkewLength { expected: usize, got: usize },
    #[error("deadlock: {}", describe_stuck(.stuck))]
    Deadlock { stuck: Vec<StuckRank> },
    #[error("message from {src} to {dst} has {bytes} bytes, receive capacity is {capacity}")]
    Truncation {
        src: Rank,
        dst: Rank,
        bytes: usize,
        capacity: usize,
    },
    #[error("rank {rank} addressed peer {peer} outside communicator")]
    InvalidPeer { rank: Rank, peer: Rank },
    #[error(transparent)]
    Plan(#[from] PlanError),
}

/// A rank left waiting when the event queue ran dry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StuckRank {
    pub rank: Rank,
    /// Peers of the requests still pending.
    pub pending_peers: Vec<Rank>,
}

fn describe_stuck(stuck: &[StuckRank]) -> String {
    stuck
        .iter()
        .map(|s| format!("rank {} waiting on {:?}", s.rank, s.pending_peers))
        .collect::<Vec<_>>()
        .join("; ")
}

/// Everything that parameterizes a simulation besides plan and schedule.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimConfig {
    pub cost: CostModel,
    pub skew: SkewProfile,
    /// Drives seeded skew profiles.
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RankSimStats {
    pub matching: MatchQueueStats,
    /// `gamma` times entries scanned.
    pub match_cost: f64,
    pub failed_polls: u64,
    pub max_posted_queue: usize,
    pub max_outstanding: usize,
    pub retired: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutcome {
    /// Start offset of each rank.
    pub starts: Vec<f64>,
    /// Last retirement minus start, per rank.
    pub finish: Vec<f64>,
    pub trace: EventTrace,
    pub recv_bufs: Vec<Vec<u8>>,
    pub stats: Vec<RankSimStats>,
}

impl SimOutcome {
    pub fn makespan(&self) -> f64 {
        self.finish.iter().copied().fold(0.0, f64::max)
    }

    pub fn total_match_cost(&self) -> f64 {
        self.stats.iter().map(|s| s.match_cost).sum()
    }

    pub fn total_failed_polls(&self) -> u64 {
        self.stats.iter().map(|s| s.failed_polls).sum()
    }
}

/// Simulates `kind` on `plan` with tagged send buffers.
pub fn simulate(
    plan: &ExchangePlan,
    kind: ScheduleKind,
    stride: usize,
    config: &SimConfig,
) -> Result<SimOutcome, SimError> {
    simulate_with_buffers(plan, kind, stride, config, &fill_all(plan))
}

/// Simulates `kind` on `plan` with caller-provided send buffers.
pub fn simulate_with_buffers(
    plan: &ExchangePlan,
    kind: ScheduleKind,
    stride: usize,
    config: &SimConfig,
    send_bufs: &[Vec<u8>],
) -> Result<SimOutcome, SimError> {
    let n = plan.n_ranks();
    let programs = (0..n)
        .map(|r| ScheduleMachine::new(kind, r, n, stride))
        .collect();
    simulate_programs(plan, programs, config, send_bufs)
}
