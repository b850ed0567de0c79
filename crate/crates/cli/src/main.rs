use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use alltoallv_cli::config::SelectionKind;
use alltoallv_cli::{
    results_csv, run_row, sweep, trace_config, verify, ConfigError, HarnessError, RunConfig, SweepFile,
    TransportKind, VerifyOptions,
};
use alltoallv_core::ScheduleKind;
use clap::{Args, Parser, Subcommand};

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "a2av", version, about = "Alltoallv schedule benchmarks and simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Seed for workloads and skew, overriding the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Write output here instead of stdout.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,

    /// Repetitions per configuration, overriding the config file.
    #[arg(long, global = true)]
    repeats: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration and print a results row.
    Run(RunArgs),
    /// Run every configuration of a sweep matrix.
    Sweep {
        /// Sweep file with [base] and [matrix] sections.
        matrix: PathBuf,
    },
    /// Check every schedule on both transports against the reference exchange.
    Verify {
        #[arg(long, default_value_t = 8)]
        ranks: usize,
        /// Number of random plans.
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long, default_value_t = 64)]
        max_count: usize,
        /// Corrupt one receive layout; the run must then fail.
        #[arg(long)]
        inject_fault: bool,
    },
    /// Simulate one configuration and emit its event trace CSV.
    Trace(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    schedule: Option<ScheduleKind>,
    #[arg(long)]
    transport: Option<TransportKind>,
    #[arg(long)]
    ranks: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
    /// Minimize each metric independently across repeats.
    #[arg(long)]
    per_metric: bool,
}

impl RunArgs {
    fn resolve(&self, cli: &Cli) -> Result<RunConfig, ConfigError> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.schedule {
            c.schedule = v;
        }
        if let Some(v) = self.transport {
            c.transport = v;
        }
        if let Some(v) = self.ranks {
            c.n_ranks = v;
        }
        if let Some(v) = self.stride {
            c.stride = v;
        }
        if self.per_metric {
            c.selection = SelectionKind::PerMetric;
        }
        apply_common(&mut c, cli);
        c.validate()?;
        Ok(c)
    }
}

fn apply_common(c: &mut RunConfig, cli: &Cli) {
    if let Some(v) = cli.seed {
        c.seed = v;
    }
    if let Some(v) = cli.repeats {
        c.repeats = v;
    }
}

fn emit(path: Option<&Path>, write: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> io::Result<()> {
    match path {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p)?);
            write(&mut w)?;
            w.flush()
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            write(&mut lock)
        }
    }
}

fn fail(e: &dyn std::fmt::Display, code: u8) -> ExitCode {
    eprintln!("a2av: {e}");
    ExitCode::from(code)
}

fn harness_exit(e: HarnessError) -> ExitCode {
    let code = if e.is_config() { EXIT_CONFIG } else { EXIT_FAILURE };
    fail(&e, code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let output = cli.output.as_deref();
    match &cli.command {
        Command::Run(args) => {
            let config = match args.resolve(&cli) {
                Ok(c) => c,
                Err(e) => return fail(&e, EXIT_CONFIG),
            };
            let row = run_row(&config);
            let csv = results_csv(std::slice::from_ref(&row));
            if let Err(e) = emit(output, |w| w.write_all(csv.as_bytes())) {
                return fail(&e, EXIT_FAILURE);
            }
            if row.is_ok() {
                ExitCode::SUCCESS
            } else {
                fail(&row.status, EXIT_FAILURE)
            }
        }
        Command::Sweep { matrix } => {
            let configs = match SweepFile::load(matrix).and_then(|s| s.expand()) {
                Ok(mut configs) => {
                    configs.iter_mut().for_each(|c| apply_common(c, &cli));
                    configs
                }
                Err(e) => return fail(&e, EXIT_CONFIG),
            };
            let rows = sweep(&configs);
            if let Err(e) = emit(output, |w| w.write_all(results_csv(&rows).as_bytes())) {
                return fail(&e, EXIT_FAILURE);
            }
            let failed = rows.iter().filter(|r| !r.is_ok()).count();
            if failed == 0 {
                ExitCode::SUCCESS
            } else {
                fail(&format!("{failed} of {} configurations failed", rows.len()), EXIT_FAILURE)
            }
        }
        Command::Verify {
            ranks,
            seeds,
            max_count,
            inject_fault,
        } => {
            let opts = VerifyOptions {
                n_ranks: *ranks,
                seed_count: *seeds,
                base_seed: cli.seed.unwrap_or(0),
                max_count: *max_count,
                inject_fault: *inject_fault,
            };
            let report = match verify(&opts) {
                Ok(r) => r,
                Err(e) => return fail(&e, EXIT_CONFIG),
            };
            if let Err(e) = emit(output, |w| writeln!(w, "{report}")) {
                return fail(&e, EXIT_FAILURE);
            }
            if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_FAILURE)
            }
        }
        Command::Trace(args) => {
            let config = match args.resolve(&cli) {
                Ok(c) => c,
                Err(e) => return fail(&e, EXIT_CONFIG),
            };
            match trace_config(&config) {
                Ok(trace) => match emit(output, |w| trace.write_csv(w)) {
                    Ok(()) => ExitCode::SUCCESS,
                    Err(e) => fail(&e, EXIT_FAILURE),
                },
                Err(e) => harness_exit(e),
            }
        }
    }
}
