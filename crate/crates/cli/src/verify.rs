//! Correctness gate: every schedule on both transports against the oracle.

use std::fmt;
use std::time::Duration;

use alltoallv_core::plan::{fill_all, random_plan, uniform_plan};
use alltoallv_core::{
    oracle_alltoallv, run, Backend, CostModel, ExchangePlan, ScheduleKind, SimConfig, SkewProfile,
};

use crate::config::ConfigError;

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    pub n_ranks: usize,
    pub seed_count: u64,
    pub base_seed: u64,
    /// Upper bound on per-pair element counts of the random plans.
    pub max_count: usize,
    /// Swap two receive displacements on rank 0 before executing. Every
    /// plan with a movable block must then be reported as a mismatch.
    pub inject_fault: bool,
}

impl VerifyOptions {
    pub fn new(n_ranks: usize, seed_count: u64) -> Self {
        VerifyOptions {
            n_ranks,
            seed_count,
            base_seed: 0,
            max_count: 64,
            inject_fault: false,
        }
    }
}

/// Everything needed to rerun one check.
#[derive(Debug, Clone, PartialEq)]
pub struct Case {
    pub workload: String,
    pub seed: u64,
    pub n_ranks: usize,
    pub schedule: ScheduleKind,
    pub transport: &'static str,
    pub stride: usize,
    pub fault: Option<(usize, usize)>,
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "workload={} seed={} n_ranks={} schedule={} transport={} stride={}",
            self.workload, self.seed, self.n_ranks, self.schedule, self.transport, self.stride
        )?;
        if let Some((a, b)) = self.fault {
            write!(f, " fault=rank0:swap({a},{b})")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyFailure {
    pub case: Case,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VerifyReport {
    pub checks: usize,
    pub failures: Vec<VerifyFailure>,
    /// Cases that ran with an injected fault.
    pub faulted: usize,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} checks, {} passed, {} failed",
            self.checks,
            self.checks - self.failures.len(),
            self.failures.len()
        )?;
        if let Some(first) = self.failures.first() {
            write!(f, "\nfirst failure: {}\n  {}", first.case, first.detail)?;
        }
        Ok(())
    }
}

fn strides_for(kind: ScheduleKind, n: usize) -> Vec<usize> {
    if !kind.uses_stride() {
        return vec![1];
    }
    let mut s = vec![1, 2, n.max(1)];
    s.sort_unstable();
    s.dedup();
    s
}

/// First pair of peers whose blocks sit at different offsets of rank 0's
/// receive buffer.
fn fault_pair(plan: &ExchangePlan) -> Option<(usize, usize)> {
    let n = plan.n_ranks();
    let d = &plan.rdispls()[0];
    let c = &plan.recvcounts()[0];
    (0..n)
        .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
        .find(|&(a, b)| d[a] != d[b] && (c[a] > 0 || c[b] > 0))
}

fn check_case(case: &Case, exec_plan: &ExchangePlan, expected: &[Vec<u8>], backend: &Backend) -> Result<(), String> {
    let out = run(case.schedule, exec_plan, backend, case.stride).map_err(|e| e.to_string())?;
    for (rank, (got, want)) in out.recv_bufs.iter().zip(expected).enumerate() {
        if got != want {
            let at = got.iter().zip(want).position(|(a, b)| a != b).unwrap_or(got.len().min(want.len()));
            return Err(format!(
                "rank {rank} receive buffer differs from the oracle at byte {at} (len {} vs {})",
                got.len(),
                want.len()
            ));
        }
    }
    if let Some(sim) = &out.sim {
        let n = exec_plan.n_ranks();
        let bound = match case.schedule {
            ScheduleKind::Pairwise => 2,
            ScheduleKind::Nonblocking => 2 * n,
            _ => 2 * case.stride,
        };
        for rank in 0..n {
            let retired = sim.stats[rank].retired;
            if retired != 2 * n {
                return Err(format!("rank {rank} retired {retired} requests, expected {}", 2 * n));
            }
            let peak = sim.trace.max_outstanding(rank);
            if peak > bound {
                return Err(format!("rank {rank} had {peak} requests outstanding, bound {bound}"));
            }
        }
    }
    Ok(())
}

/// Runs the suite. Plans: one all-zero plan plus `seed_count` random plans.
pub fn verify(opts: &VerifyOptions) -> Result<VerifyReport, ConfigError> {
    if opts.n_ranks == 0 {
        return Err(ConfigError::Invalid("n_ranks must be at least 1".into()));
    }
    if opts.inject_fault && opts.n_ranks < 2 {
        return Err(ConfigError::Invalid("fault injection needs at least two ranks".into()));
    }
    let n = opts.n_ranks;
    let mut plans = vec![("uniform/0/4".to_owned(), opts.base_seed, uniform_plan(n, 0, 4)?)];
    for s in opts.base_seed..opts.base_seed + opts.seed_count {
        let elem = [1, 4, 8][(s % 3) as usize];
        plans.push((format!("random/{}/{elem}", opts.max_count), s, random_plan(n, opts.max_count, elem, s)?));
    }

    let mut report = VerifyReport::default();
    for (workload, seed, plan) in &plans {
        let expected = oracle_alltoallv(plan, &fill_all(plan));
        let fault = opts.inject_fault.then(|| fault_pair(plan)).flatten();
        let exec_plan = match fault {
            Some((a, b)) => plan.with_swapped_rdispls(0, a, b),
            None => plan.clone(),
        };
        let backends = [
            (
                "threaded",
                Backend::Threaded {
                    stall_timeout: Duration::from_secs(10),
                },
            ),
            (
                "simnet",
                Backend::Simulated(SimConfig {
                    cost: CostModel::preset(),
                    skew: SkewProfile::Uniform { max: 5.0 * CostModel::preset().alpha },
                    seed: *seed,
                }),
            ),
        ];
        for kind in ScheduleKind::ALL {
            for stride in strides_for(kind, n) {
                for (transport, backend) in &backends {
                    let case = Case {
                        workload: workload.clone(),
                        seed: *seed,
                        n_ranks: n,
                        schedule: kind,
                        transport,
                        stride,
                        fault,
                    };
                    report.checks += 1;
                    if fault.is_some() {
                        report.faulted += 1;
                    }
                    if let Err(detail) = check_case(&case, &exec_plan, &expected, backend) {
                        report.failures.push(VerifyFailure { case, detail });
                    }
                }
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_run_passes() {
        let report = verify(&VerifyOptions::new(4, 3)).unwrap();
        assert!(report.passed(), "{report}");
        // 4 plans, 2 + 3 * 3 schedule/stride combinations, 2 transports
        assert_eq!(report.checks, 4 * 11 * 2);
        assert!(report.to_string().starts_with("88 checks, 88 passed, 0 failed"));
    }

    #[test]
    fn zero_count_plan_passes_on_one_rank() {
        let report = verify(&VerifyOptions::new(1, 0)).unwrap();
        assert!(report.passed());
        assert_eq!(report.checks, 2 * (2 + 3 * 2));
    }

    #[test]
    fn swapped_displacements_are_caught() {
        let opts = VerifyOptions {
            inject_fault: true,
            ..VerifyOptions::new(3, 4)
        };
        let report = verify(&opts).unwrap();
        assert!(!report.passed());
        assert!(report.faulted > 0);
        assert_eq!(report.failures.len(), report.faulted);
        let text = report.to_string();
        assert!(text.contains("first failure: workload=random/64/"), "{text}");
        assert!(text.contains("fault=rank0:swap("));
    }

    #[test]
    fn fault_needs_two_ranks() {
        let opts = VerifyOptions {
            inject_fault: true,
            ..VerifyOptions::new(1, 1)
        };
        assert!(verify(&opts).is_err());
    }
}
