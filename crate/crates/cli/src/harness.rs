//! Repeated runs, best-of-R statistics and results tables.

use std::io::Write;

use alltoallv_core::{run, EventTrace, RunError, RunStats, SimError, TimeUnit};
use thiserror::Error;

use crate::config::{ConfigError, RunConfig, TransportKind};

pub const RESULTS_CSV_HEADER: [&str; 13] = [
    "schedule",
    "transport",
    "n_ranks",
    "stride",
    "workload",
    "repeats",
    "seed",
    "time_unit",
    "min",
    "avg",
    "max",
    "makespan",
    "status",
];

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error("traces are only produced by the simnet transport")]
    TraceNeedsSimnet,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    /// True for mistakes in the configuration rather than failed runs.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            HarnessError::Config(_)
                | HarnessError::TraceNeedsSimnet
                | HarnessError::Run(RunError::Sim(
                    SimError::BadCost { .. } | SimError::SkewLength { .. } | SimError::Plan(_)
                ))
        )
    }
}

fn time_unit(transport: TransportKind) -> TimeUnit {
    match transport {
        TransportKind::Threaded => TimeUnit::Nanos,
        TransportKind::Simnet => TimeUnit::Sim,
    }
}

/// Runs `config.repeats` repetitions and aggregates them.
pub fn run_config(config: &RunConfig) -> Result<RunStats, HarnessError> {
    config.validate()?;
    let plan = config.plan()?;
    let mut repeats = Vec::with_capacity(config.repeats);
    for r in 0..config.repeats {
        let out = run(config.schedule, &plan, &config.backend(r), config.stride)?;
        repeats.push(out.durations);
    }
    Ok(RunStats::from_repeats(repeats, config.selection.into()))
}

/// Simulates repeat 0 of a simnet configuration and returns its trace.
pub fn trace_config(config: &RunConfig) -> Result<EventTrace, HarnessError> {
    config.validate()?;
    if config.transport != TransportKind::Simnet {
        return Err(HarnessError::TraceNeedsSimnet);
    }
    let plan = config.plan()?;
    let out = run(config.schedule, &plan, &config.backend(0), config.stride)?;
    Ok(out.sim.expect("simnet runs carry their outcome").trace)
}

/// One line of the results table.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub schedule: String,
    pub transport: String,
    pub n_ranks: usize,
    /// `None` for schedules without a stride.
    pub stride: Option<usize>,
    pub workload: String,
    pub repeats: usize,
    pub seed: u64,
    pub time_unit: TimeUnit,
    /// `None` when the configuration failed.
    pub stats: Option<RunStats>,
    pub status: String,
}

impl ResultRow {
    pub fn is_ok(&self) -> bool {
        self.stats.is_some()
    }

    fn record(&self) -> Vec<String> {
        let metric = |f: fn(&RunStats) -> f64| self.stats.as_ref().map(|s| f(s).to_string()).unwrap_or_default();
        vec![
            self.schedule.clone(),
            self.transport.clone(),
            self.n_ranks.to_string(),
            self.stride.map(|s| s.to_string()).unwrap_or_default(),
            self.workload.clone(),
            self.repeats.to_string(),
            self.seed.to_string(),
            self.time_unit.to_string(),
            metric(|s| s.min),
            metric(|s| s.avg),
            metric(|s| s.max),
            metric(|s| s.makespan),
            self.status.clone(),
        ]
    }
}

/// Runs one configuration and reports failures inside the row.
pub fn run_row(config: &RunConfig) -> ResultRow {
    let result = run_config(config);
    let status = match &result {
        Ok(_) => "ok".to_owned(),
        Err(e) => format!("error: {e}"),
    };
    ResultRow {
        schedule: config.schedule.name().to_owned(),
        transport: config.transport.name().to_owned(),
        n_ranks: config.n_ranks,
        stride: config.schedule.uses_stride().then_some(config.stride),
        workload: config.workload.label(config.n_ranks),
        repeats: config.repeats,
        seed: config.seed,
        time_unit: time_unit(config.transport),
        stats: result.ok(),
        status,
    }
}

/// One row per configuration, in order. A failed configuration does not
/// stop the sweep.
pub fn sweep(configs: &[RunConfig]) -> Vec<ResultRow> {
    configs.iter().map(run_row).collect()
}

/// Writes the results table as UTF-8 CSV with LF line endings.
pub fn write_results<W: Write>(rows: &[ResultRow], out: W) -> Result<(), HarnessError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(RESULTS_CSV_HEADER)?;
    for row in rows {
        w.write_record(row.record())?;
    }
    w.flush()?;
    Ok(())
}

pub fn results_csv(rows: &[ResultRow]) -> String {
    let mut buf = Vec::new();
    write_results(rows, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("results are UTF-8")
}
