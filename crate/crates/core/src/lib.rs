//! Alltoallv exchange schedules over an abstract nonblocking transport.
//!
//! Five schedules are provided: pairwise exchange, fully nonblocking, and
//! three stride-windowed multi-pair variants (batched wait_all, refilling
//! wait_any, refilling test_any). Each is a transport-agnostic state machine
//! that runs either on real threads ([`transport::ThreadedWorld`]) or on the
//! deterministic network simulator in [`simnet`].

pub mod algorithms;
pub mod plan;
pub mod runner;
pub mod simnet;
pub mod stats;
pub mod transport;

pub use algorithms::{oracle_alltoallv, ScheduleKind, ScheduleMachine, DEFAULT_STRIDE};
pub use plan::{ExchangePlan, PlanError, Rank, RankBuffers};
pub use runner::{run, Backend, RunError, RunOutput, TimeUnit};
pub use simnet::{simulate, CostModel, EventTrace, SimConfig, SimError, SimOutcome, SkewProfile};
pub use stats::{RunStats, Selection, Summary};
