//! Runs a schedule for every rank on either transport.

use std::fmt;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::algorithms::{execute, ExecError, ExecReport, ScheduleKind};
use crate::plan::{fill_pattern, ExchangePlan};
use crate::simnet::{simulate, SimConfig, SimError, SimOutcome};
use crate::transport::{ThreadedWorld, Transport};

#[derive(Debug, Clone, PartialEq)]
pub enum Backend {
    /// One OS thread per rank over the in-process transport.
    Threaded { stall_timeout: Duration },
    /// The discrete-event simulator.
    Simulated(SimConfig),
}

impl Backend {
    pub fn threaded() -> Self {
        Backend::Threaded {
            stall_timeout: Duration::from_secs(30),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Backend::Threaded { .. } => "threaded",
            Backend::Simulated(_) => "simnet",
        }
    }

    pub fn time_unit(&self) -> TimeUnit {
        match self {
            Backend::Threaded { .. } => TimeUnit::Nanos,
            Backend::Simulated(_) => TimeUnit::Sim,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeUnit {
    Nanos,
    Sim,
}

impl fmt::Display for TimeUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TimeUnit::Nanos => "ns",
            TimeUnit::Sim => "sim",
        })
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub recv_bufs: Vec<Vec<u8>>,
    /// Per-rank time from post-barrier start to last retirement.
    pub durations: Vec<f64>,
    pub time_unit: TimeUnit,
    /// Per-rank execution summaries (threaded backend only).
    pub reports: Vec<ExecReport>,
    /// Full simulator output (simulated backend only); its `recv_bufs`
    /// are moved into [`RunOutput::recv_bufs`].
    pub sim: Option<SimOutcome>,
}

/// Runs `kind` on `plan`. `stride` is ignored by schedules without one.
pub fn run(kind: ScheduleKind, plan: &ExchangePlan, backend: &Backend, stride: usize) -> Result<RunOutput, RunError> {
    match backend {
        Backend::Threaded { stall_timeout } => run_threaded(kind, plan, stride, *stall_timeout),
        Backend::Simulated(config) => {
            let mut outcome = simulate(plan, kind, stride, config)?;
            Ok(RunOutput {
                recv_bufs: std::mem::take(&mut outcome.recv_bufs),
                durations: outcome.finish.clone(),
                time_unit: TimeUnit::Sim,
                reports: Vec::new(),
                sim: Some(outcome),
            })
        }
    }
}

fn run_threaded(
    kind: ScheduleKind,
    plan: &ExchangePlan,
    stride: usize,
    stall_timeout: Duration,
) -> Result<RunOutput, RunError> {
    let per_rank = ThreadedWorld::new(plan.n_ranks())
        .with_stall_timeout(stall_timeout)
        .run(|mut ep| -> Result<_, ExecError> {
            let mut buffers = fill_pattern(plan, ep.rank());
            ep.barrier()?;
            let t0 = Instant::now();
            let report = execute(kind, stride, &mut ep, plan, &buffers.send_buf, &mut buffers.recv_buf, None)?;
            let elapsed = t0.elapsed();
            Ok((buffers.recv_buf, elapsed.as_nanos() as f64, report))
        });
    let mut out = RunOutput {
        recv_bufs: Vec::with_capacity(per_rank.len()),
        durations: Vec::with_capacity(per_rank.len()),
        time_unit: TimeUnit::Nanos,
        reports: Vec::with_capacity(per_rank.len()),
        sim: None,
    };
    for result in per_rank {
        let (buf, dur, report) = result?;
        out.recv_bufs.push(buf);
        out.durations.push(dur);
        out.reports.push(report);
    }
    Ok(out)
}
