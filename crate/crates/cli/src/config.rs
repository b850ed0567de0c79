//! TOML run configurations and sweep matrices.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use alltoallv_core::plan::{fft_transpose_plan_for, random_plan, scaled_grid_dim, uniform_plan};
use alltoallv_core::{Backend, CostModel, ExchangePlan, PlanError, ScheduleKind, Selection, SimConfig, SkewProfile};
use serde::{de, Deserialize, Deserializer};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("workload: {0}")]
    Plan(#[from] PlanError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportKind {
    Threaded,
    Simnet,
}

impl TransportKind {
    pub fn name(self) -> &'static str {
        match self {
            TransportKind::Threaded => "threaded",
            TransportKind::Simnet => "simnet",
        }
    }
}

impl fmt::Display for TransportKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TransportKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "threaded" => Ok(TransportKind::Threaded),
            "simnet" => Ok(TransportKind::Simnet),
            other => Err(format!("unknown transport '{other}' (expected threaded or simnet)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionKind {
    #[default]
    BestMakespan,
    PerMetric,
}

impl From<SelectionKind> for Selection {
    fn from(s: SelectionKind) -> Self {
        match s {
            SelectionKind::BestMakespan => Selection::BestMakespan,
            SelectionKind::PerMetric => Selection::PerMetric,
        }
    }
}

fn schedule_name<'de, D: Deserializer<'de>>(d: D) -> Result<ScheduleKind, D::Error> {
    let name = String::deserialize(d)?;
    name.parse().map_err(de::Error::custom)
}

fn schedule_names<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<ScheduleKind>>, D::Error> {
    let names = Option::<Vec<String>>::deserialize(d)?;
    names
        .map(|v| v.iter().map(|n| n.parse().map_err(de::Error::custom)).collect())
        .transpose()
}

/// Exchange pattern a run moves.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Workload {
    /// `count` elements between every ordered pair.
    Uniform {
        count: usize,
        #[serde(default = "default_elem_size")]
        elem_size: usize,
    },
    /// Counts drawn from `0..=max_count` with the run seed.
    Random {
        max_count: usize,
        #[serde(default = "default_elem_size")]
        elem_size: usize,
    },
    /// Row-slab to column-slab transpose of a 2D grid.
    ///
    /// The grid is either `grid_x` by `grid_y` or a square of side
    /// `base_dim` grown with the square root of the rank count. A missing
    /// process grid is the most square factorization of the rank count.
    FftTranspose {
        grid_x: Option<usize>,
        grid_y: Option<usize>,
        base_dim: Option<u64>,
        proc_rows: Option<usize>,
        proc_cols: Option<usize>,
        #[serde(default = "default_elem_size")]
        elem_size: usize,
    },
}

fn default_elem_size() -> usize {
    8
}

impl Default for Workload {
    fn default() -> Self {
        Workload::Uniform { count: 64, elem_size: 8 }
    }
}

/// `(rows, cols)` with `rows <= cols` and `rows * cols == n`, as square as possible.
pub fn square_process_grid(n: usize) -> (usize, usize) {
    let rows = (1..=n.isqrt()).rev().find(|r| n.is_multiple_of(*r)).unwrap_or(1);
    (rows, n / rows)
}

impl Workload {
    fn grid(&self, n_ranks: usize) -> Result<(usize, usize, usize, usize), ConfigError> {
        let Workload::FftTranspose {
            grid_x,
            grid_y,
            base_dim,
            proc_rows,
            proc_cols,
            ..
        } = self
        else {
            unreachable!("only transpose workloads have a grid")
        };
        let (gx, gy) = match (grid_x, grid_y, base_dim) {
            (Some(x), Some(y), None) => (*x, *y),
            (None, None, Some(b)) => {
                let d = scaled_grid_dim(*b, n_ranks as u64);
                let d = usize::try_from(d).map_err(|_| ConfigError::Invalid(format!("grid side {d} too large")))?;
                (d, d)
            }
            _ => {
                return Err(ConfigError::Invalid(
                    "fft-transpose needs either grid_x and grid_y or base_dim".into(),
                ))
            }
        };
        let (pr, pc) = match (proc_rows, proc_cols) {
            (Some(r), Some(c)) => (*r, *c),
            (None, None) => square_process_grid(n_ranks),
            _ => return Err(ConfigError::Invalid("give both proc_rows and proc_cols or neither".into())),
        };
        Ok((gx, gy, pr, pc))
    }

    /// Builds the plan for `n_ranks`; `seed` only affects random workloads.
    pub fn plan(&self, n_ranks: usize, seed: u64) -> Result<ExchangePlan, ConfigError> {
        let plan = match self {
            Workload::Uniform { count, elem_size } => uniform_plan(n_ranks, *count, *elem_size)?,
            Workload::Random { max_count, elem_size } => random_plan(n_ranks, *max_count, *elem_size, seed)?,
            Workload::FftTranspose { elem_size, .. } => {
                let (gx, gy, pr, pc) = self.grid(n_ranks)?;
                fft_transpose_plan_for(n_ranks, gx, gy, pr, pc, *elem_size)?
            }
        };
        Ok(plan)
    }

    /// Short comma-free label for result tables.
    pub fn label(&self, n_ranks: usize) -> String {
        match self {
            Workload::Uniform { count, elem_size } => format!("uniform/{count}/{elem_size}"),
            Workload::Random { max_count, elem_size } => format!("random/{max_count}/{elem_size}"),
            Workload::FftTranspose { elem_size, .. } => match self.grid(n_ranks) {
                Ok((gx, gy, pr, pc)) => format!("fft-transpose/{gx}x{gy}/{pr}x{pc}/{elem_size}"),
                Err(_) => format!("fft-transpose/invalid/{elem_size}"),
            },
        }
    }
}

/// Simulator cost parameters; missing keys take the preset values.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub inject_serialize: bool,
    pub recv_serialize: bool,
    pub poll_cost: f64,
    pub local_copy_cost: f64,
}

impl Default for CostConfig {
    fn default() -> Self {
        CostModel::preset().into()
    }
}

impl From<CostModel> for CostConfig {
    fn from(c: CostModel) -> Self {
        CostConfig {
            alpha: c.alpha,
            beta: c.beta,
            gamma: c.gamma,
            inject_serialize: c.inject_serialize,
            recv_serialize: c.recv_serialize,
            poll_cost: c.poll_cost,
            local_copy_cost: c.local_copy_cost,
        }
    }
}

impl From<CostConfig> for CostModel {
    fn from(c: CostConfig) -> Self {
        CostModel {
            alpha: c.alpha,
            beta: c.beta,
            gamma: c.gamma,
            inject_serialize: c.inject_serialize,
            recv_serialize: c.recv_serialize,
            poll_cost: c.poll_cost,
            local_copy_cost: c.local_copy_cost,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SkewConfig {
    #[default]
    None,
    Explicit {
        offsets: Vec<f64>,
    },
    OneSlow {
        delay: f64,
    },
    Uniform {
        max: f64,
    },
}

impl From<&SkewConfig> for SkewProfile {
    fn from(s: &SkewConfig) -> Self {
        match s {
            SkewConfig::None => SkewProfile::None,
            SkewConfig::Explicit { offsets } => SkewProfile::Explicit(offsets.clone()),
            SkewConfig::OneSlow { delay } => SkewProfile::OneSlow { delay: *delay },
            SkewConfig::Uniform { max } => SkewProfile::Uniform { max: *max },
        }
    }
}

/// One benchmark configuration.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(deserialize_with = "schedule_name")]
    pub schedule: ScheduleKind,
    pub transport: TransportKind,
    pub n_ranks: usize,
    pub stride: usize,
    pub workload: Workload,
    pub repeats: usize,
    pub seed: u64,
    pub selection: SelectionKind,
    pub cost: CostConfig,
    pub skew: SkewConfig,
    /// Threaded transport only: give up on a rank blocked this long.
    pub stall_timeout_secs: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schedule: ScheduleKind::MultipairWaitany,
            transport: TransportKind::Simnet,
            n_ranks: 8,
            stride: alltoallv_core::DEFAULT_STRIDE,
            workload: Workload::default(),
            repeats: 5,
            seed: 0,
            selection: SelectionKind::default(),
            cost: CostConfig::default(),
            skew: SkewConfig::default(),
            stall_timeout_secs: 30.0,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: RunConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_toml(&read(path)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_owned()));
        if self.repeats == 0 {
            return bad("repeats must be at least 1");
        }
        if self.n_ranks == 0 {
            return bad("n_ranks must be at least 1");
        }
        if self.stride == 0 {
            return bad("stride must be at least 1");
        }
        if !(self.stall_timeout_secs.is_finite() && self.stall_timeout_secs > 0.0) {
            return bad("stall_timeout_secs must be positive");
        }
        CostModel::from(self.cost)
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        match &self.skew {
            SkewConfig::Explicit { offsets } if offsets.len() != self.n_ranks => {
                return Err(ConfigError::Invalid(format!(
                    "skew lists {} offsets for {} ranks",
                    offsets.len(),
                    self.n_ranks
                )))
            }
            SkewConfig::Explicit { offsets } if offsets.iter().any(|o| !(o.is_finite() && *o >= 0.0)) => {
                return bad("skew offsets must be finite and non-negative")
            }
            SkewConfig::OneSlow { delay: v } | SkewConfig::Uniform { max: v } if !(v.is_finite() && *v >= 0.0) => {
                return bad("skew magnitude must be finite and non-negative")
            }
            _ => {}
        }
        self.plan().map(|_| ())
    }

    pub fn plan(&self) -> Result<ExchangePlan, ConfigError> {
        self.workload.plan(self.n_ranks, self.seed)
    }

    /// Backend for repeat `repeat`. Simulated repeats draw skew from
    /// `seed + repeat` so that seeded skew varies across repeats.
    pub fn backend(&self, repeat: usize) -> Backend {
        match self.transport {
            TransportKind::Threaded => Backend::Threaded {
                stall_timeout: Duration::from_secs_f64(self.stall_timeout_secs),
            },
            TransportKind::Simnet => Backend::Simulated(SimConfig {
                cost: self.cost.into(),
                skew: (&self.skew).into(),
                seed: self.seed.wrapping_add(repeat as u64),
            }),
        }
    }
}

/// Axes of a sweep. Missing axes hold the base configuration's value.
#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Matrix {
    pub transports: Option<Vec<TransportKind>>,
    pub workloads: Option<Vec<Workload>>,
    pub n_ranks: Option<Vec<usize>>,
    #[serde(deserialize_with = "schedule_names")]
    pub schedules: Option<Vec<ScheduleKind>>,
    pub strides: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepFile {
    pub base: RunConfig,
    pub matrix: Matrix,
}

impl SweepFile {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_toml(&read(path)?)
    }

    /// Expands the matrix in the order transport, workload, ranks,
    /// schedule, stride. Schedules without a stride get one entry.
    pub fn expand(&self) -> Result<Vec<RunConfig>, ConfigError> {
        let b = &self.base;
        let m = &self.matrix;
        let transports = m.transports.clone().unwrap_or_else(|| vec![b.transport]);
        let workloads = m.workloads.clone().unwrap_or_else(|| vec![b.workload.clone()]);
        let ranks = m.n_ranks.clone().unwrap_or_else(|| vec![b.n_ranks]);
        let schedules = m.schedules.clone().unwrap_or_else(|| vec![b.schedule]);
        let strides = m.strides.clone().unwrap_or_else(|| vec![b.stride]);
        for (axis, empty) in [
            ("transports", transports.is_empty()),
            ("workloads", workloads.is_empty()),
            ("n_ranks", ranks.is_empty()),
            ("schedules", schedules.is_empty()),
            ("strides", strides.is_empty()),
        ] {
            if empty {
                return Err(ConfigError::Invalid(format!("matrix axis {axis} is empty")));
            }
        }
        let mut out = Vec::new();
        for &transport in &transports {
            for workload in &workloads {
                for &n_ranks in &ranks {
                    for &schedule in &schedules {
                        let strides: &[usize] = if schedule.uses_stride() { &strides } else { &strides[..1] };
                        for &stride in strides {
                            out.push(RunConfig {
                                schedule,
                                transport,
                                n_ranks,
                                stride,
                                workload: workload.clone(),
                                ..b.clone()
                            });
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_owned(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn full_file_parses() {
        let c = RunConfig::from_toml(
            r#"
            schedule = "multipair-testany"
            transport = "threaded"
            n_ranks = 6
            stride = 3
            repeats = 2
            seed = 11
            selection = "per-metric"

            [workload]
            kind = "fft-transpose"
            grid_x = 12
            grid_y = 9
            proc_rows = 2
            proc_cols = 3
            elem_size = 4

            [cost]
            gamma = 0.0

            [skew]
            kind = "one-slow"
            delay = 500.0
            "#,
        )
        .unwrap();
        assert_eq!(c.schedule, ScheduleKind::MultipairTestany);
        assert_eq!(c.transport, TransportKind::Threaded);
        assert_eq!(c.selection, SelectionKind::PerMetric);
        assert_eq!(c.cost.gamma, 0.0);
        assert_eq!(c.cost.alpha, CostModel::preset().alpha);
        assert_eq!(c.skew, SkewConfig::OneSlow { delay: 500.0 });
        assert_eq!(c.workload.label(6), "fft-transpose/12x9/2x3/4");
    }

    #[test]
    fn rejects_bad_values() {
        for text in [
            "repeats = 0",
            "n_ranks = 0",
            "stride = 0",
            "schedule = \"bruck\"",
            "colour = 3",
            "n_ranks = 6\n[workload]\nkind = \"fft-transpose\"\ngrid_x = 4\ngrid_y = 4\nproc_rows = 2\nproc_cols = 2",
            "n_ranks = 2\n[skew]\nkind = \"explicit\"\noffsets = [1.0]",
            "[cost]\nalpha = -1.0",
        ] {
            assert!(RunConfig::from_toml(text).is_err(), "{text}");
        }
    }

    #[test]
    fn scaled_transpose_grid() {
        let w = Workload::FftTranspose {
            grid_x: None,
            grid_y: None,
            base_dim: Some(16),
            proc_rows: None,
            proc_cols: None,
            elem_size: 8,
        };
        assert_eq!(w.label(4), "fft-transpose/32x32/2x2/8");
        assert_eq!(w.label(6), "fft-transpose/39x39/2x3/8");
        assert_eq!(w.plan(6, 0).unwrap().n_ranks(), 6);
    }

    #[test]
    fn square_grids() {
        assert_eq!(square_process_grid(1), (1, 1));
        assert_eq!(square_process_grid(12), (3, 4));
        assert_eq!(square_process_grid(13), (1, 13));
        assert_eq!(square_process_grid(64), (8, 8));
    }

    #[test]
    fn matrix_expands_strides_only_where_used() {
        let file = SweepFile::from_toml(
            r#"
            [matrix]
            schedules = ["pairwise", "nonblocking", "multipair-waitall", "multipair-waitany", "multipair-testany"]
            strides = [5, 10, 15]
            "#,
        )
        .unwrap();
        let configs = file.expand().unwrap();
        assert_eq!(configs.len(), 11);
        assert_eq!(configs[0].schedule, ScheduleKind::Pairwise);
        assert_eq!(configs[2].stride, 5);
        assert_eq!(configs[10].stride, 15);
    }

    #[test]
    fn inline_workloads_and_axis_order() {
        let file = SweepFile::from_toml(
            r#"
            [base]
            transport = "simnet"
            n_ranks = 16

            [matrix]
            transports = ["simnet"]
            workloads = [{ kind = "uniform", count = 64 }, { kind = "random", max_count = 64 }]
            n_ranks = [8, 16]
            schedules = ["pairwise", "multipair-waitany"]
            strides = [5, 10, 15]
            "#,
        )
        .unwrap();
        let configs = file.expand().unwrap();
        assert_eq!(configs.len(), 2 * 2 * (1 + 3));
        assert_eq!(configs[0].workload, Workload::Uniform { count: 64, elem_size: 8 });
        assert_eq!((configs[0].n_ranks, configs[4].n_ranks, configs[8].n_ranks), (8, 16, 8));
        assert_eq!(configs[8].workload.label(8), "random/64/8");
    }

    #[test]
    fn empty_axis_rejected() {
        let file = SweepFile::from_toml("[matrix]\nstrides = []").unwrap();
        assert!(file.expand().is_err());
    }
}
