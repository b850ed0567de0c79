//! Benchmark harness for the alltoallv schedules: TOML configurations,
//! repeated runs with best-of-R selection, results CSV and a correctness
//! gate.

pub mod config;
pub mod harness;
pub mod verify;

pub use config::{ConfigError, RunConfig, SweepFile, TransportKind, Workload};
pub use harness::{results_csv, run_config, run_row, sweep, trace_config, write_results, HarnessError, ResultRow};
pub use verify::{verify, VerifyOptions, VerifyReport};
