//! End-to-end acceptance checks. Prints one PASS/FAIL line per check and
//! exits nonzero if any fails.

use std::process::ExitCode;
use std::time::Instant;

use alltoallv_cli::config::{Matrix, SkewConfig, Workload};
use alltoallv_cli::{results_csv, sweep, trace_config, RunConfig, SweepFile, TransportKind};
use alltoallv_core::plan::{fill_all, random_plan, scaled_grid_dim, uniform_plan};
use alltoallv_core::{
    oracle_alltoallv, run, simulate, Backend, CostModel, ExchangePlan, RunStats, ScheduleKind, Selection, SimConfig,
    SkewProfile,
};

const RANK_COUNTS: [usize; 7] = [2, 3, 4, 5, 8, 13, 16];
const ELEM_SIZES: [usize; 3] = [1, 4, 8];
const STRIDES: [usize; 5] = [1, 2, 5, 10, 15];

struct CorpusPlan {
    seed: u64,
    plan: ExchangePlan,
}

/// 200 seeded plans cycling through the rank counts and element sizes,
/// counts drawn from 0..=64.
fn corpus() -> Vec<CorpusPlan> {
    (0..200u64)
        .map(|seed| {
            let n = RANK_COUNTS[seed as usize % RANK_COUNTS.len()];
            let es = ELEM_SIZES[(seed as usize / RANK_COUNTS.len()) % ELEM_SIZES.len()];
            CorpusPlan {
                seed,
                plan: random_plan(n, 64, es, seed).unwrap(),
            }
        })
        .collect()
}

fn skewed(seed: u64) -> SimConfig {
    SimConfig {
        cost: CostModel::preset(),
        skew: SkewProfile::Uniform { max: 10_000.0 },
        seed,
    }
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn oracle_equivalence(corpus: &[CorpusPlan]) -> Outcome {
    let mut runs = 0;
    let mut bad = Vec::new();
    for c in corpus {
        let expected = oracle_alltoallv(&c.plan, &fill_all(&c.plan));
        let stride = STRIDES[c.seed as usize % STRIDES.len()];
        for kind in ScheduleKind::ALL {
            for backend in [Backend::threaded(), Backend::Simulated(skewed(c.seed))] {
                runs += 1;
                match run(kind, &c.plan, &backend, stride) {
                    Ok(out) if out.recv_bufs == expected => {}
                    Ok(_) => bad.push(format!("seed {} {kind} {} mismatch", c.seed, backend.name())),
                    Err(e) => bad.push(format!("seed {} {kind} {}: {e}", c.seed, backend.name())),
                }
            }
        }
    }
    outcome(
        bad.is_empty(),
        format!("{}/{runs} runs byte-identical to the oracle {}", runs - bad.len(), bad.first().map(String::as_str).unwrap_or("")),
    )
}

fn outstanding_bound(corpus: &[CorpusPlan]) -> Outcome {
    let mut traces = 0;
    let mut worst = Vec::new();
    for c in corpus {
        let n = c.plan.n_ranks();
        for stride in STRIDES {
            for kind in ScheduleKind::ALL.into_iter().filter(|k| *k != ScheduleKind::Nonblocking) {
                let out = simulate(&c.plan, kind, stride, &skewed(c.seed)).unwrap();
                traces += 1;
                let bound = if kind == ScheduleKind::Pairwise { 2 } else { 2 * stride };
                let peak = (0..n).map(|r| out.trace.max_outstanding(r)).max().unwrap();
                if peak > bound {
                    worst.push(format!("seed {} {kind} stride {stride}: {peak} > {bound}", c.seed));
                }
            }
        }
    }
    outcome(
        worst.is_empty(),
        format!("{traces} traces within bound {}", worst.first().map(String::as_str).unwrap_or("")),
    )
}

fn degeneracy() -> Outcome {
    let mut identical = 0;
    let mut cases = 0;
    for seed in 0..20u64 {
        let n = RANK_COUNTS[seed as usize % RANK_COUNTS.len()];
        let stride = n + (seed as usize % 3) * n / 2;
        let plan = random_plan(n, 64, 8, 1000 + seed).unwrap();
        let cfg = skewed(seed);
        let reference = simulate(&plan, ScheduleKind::Nonblocking, stride, &cfg).unwrap();
        let same = [ScheduleKind::MultipairWaitany, ScheduleKind::MultipairTestany]
            .into_iter()
            .all(|kind| {
                let out = simulate(&plan, kind, stride, &cfg).unwrap();
                (0..n).all(|r| out.trace.issue_order(r) == reference.trace.issue_order(r))
            });
        cases += 1;
        identical += usize::from(same);
    }
    outcome(identical == cases, format!("{identical}/{cases} cases issue in nonblocking order"))
}

fn grid_scaling() -> Outcome {
    let a = scaled_grid_dim(4096, 64);
    let b = scaled_grid_dim(4096, 32);
    outcome(a == 32768 && b == 23170, format!("4096 on 64 ranks -> {a}, on 32 ranks -> {b}"))
}

fn skew_trend() -> Outcome {
    let plan = uniform_plan(16, 64, 8).unwrap();
    let span = |kind, inject, seed| {
        let cfg = SimConfig {
            cost: CostModel {
                alpha: 1000.0,
                beta: 1.0,
                gamma: 10.0,
                inject_serialize: inject,
                ..CostModel::preset()
            },
            skew: SkewProfile::OneSlow { delay: 50.0 * 1000.0 },
            seed,
        };
        simulate(&plan, kind, 10, &cfg).unwrap().makespan()
    };
    let mut beats_pairwise = [0; 2];
    let mut within_nonblocking = 0;
    for seed in 0..100u64 {
        for (i, inject) in [false, true].into_iter().enumerate() {
            let wa = span(ScheduleKind::MultipairWaitany, inject, seed);
            if wa < span(ScheduleKind::Pairwise, inject, seed) {
                beats_pairwise[i] += 1;
            }
            if inject && wa <= span(ScheduleKind::Nonblocking, inject, seed) {
                within_nonblocking += 1;
            }
        }
    }
    outcome(
        beats_pairwise.iter().all(|&c| c >= 95) && within_nonblocking >= 90,
        format!(
            "waitany < pairwise on {}/100 (unserialized) and {}/100 (serialized) seeds; \
             waitany <= nonblocking on {within_nonblocking}/100 serialized seeds",
            beats_pairwise[0], beats_pairwise[1]
        ),
    )
}

fn queue_search(corpus: &[CorpusPlan]) -> Outcome {
    let cfg = SimConfig {
        cost: CostModel::preset(),
        skew: SkewProfile::None,
        seed: 0,
    };
    let mut holds = 0;
    for c in corpus {
        let nb = simulate(&c.plan, ScheduleKind::Nonblocking, 1, &cfg).unwrap().total_match_cost();
        let pw = simulate(&c.plan, ScheduleKind::Pairwise, 1, &cfg).unwrap().total_match_cost();
        holds += usize::from(nb >= pw);
    }
    outcome(
        holds == corpus.len(),
        format!("nonblocking scan cost >= pairwise on {holds}/{} plans", corpus.len()),
    )
}

fn determinism() -> Outcome {
    let file = SweepFile {
        base: RunConfig {
            transport: TransportKind::Simnet,
            n_ranks: 12,
            repeats: 3,
            seed: 21,
            skew: SkewConfig::Uniform { max: 20_000.0 },
            ..RunConfig::default()
        },
        matrix: Matrix {
            schedules: Some(ScheduleKind::ALL.to_vec()),
            strides: Some(vec![5, 10, 15]),
            workloads: Some(vec![
                Workload::Random {
                    max_count: 64,
                    elem_size: 4,
                },
                Workload::FftTranspose {
                    grid_x: None,
                    grid_y: None,
                    base_dim: Some(32),
                    proc_rows: None,
                    proc_cols: None,
                    elem_size: 8,
                },
            ]),
            ..Default::default()
        },
    };
    let configs = file.expand().unwrap();
    let first = results_csv(&sweep(&configs));
    let second = results_csv(&sweep(&configs));
    let traces_match = configs
        .iter()
        .all(|c| trace_config(c).unwrap().to_csv() == trace_config(c).unwrap().to_csv());
    let rows = first.lines().count() - 1;
    outcome(
        first == second && traces_match && rows == configs.len(),
        format!("{rows}-row results CSV and {} trace CSVs identical on rerun", configs.len()),
    )
}

/// Per-repeat durations, then the expected selected repeat, min, avg, max.
type Fixture = (Vec<Vec<f64>>, usize, f64, f64, f64);

type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;

fn statistics() -> Outcome {
    let fixtures: [Fixture; 3] = [
        (
            vec![vec![3.0, 5.0, 4.0], vec![2.0, 9.0, 4.0], vec![6.0, 6.0, 6.0], vec![3.0, 5.0, 4.5], vec![10.0, 1.0, 1.0]],
            0,
            3.0,
            4.0,
            5.0,
        ),
        (
            vec![
                vec![5.0, 6.0, 7.0, 8.0],
                vec![4.0, 4.0, 4.0, 4.5],
                vec![9.0, 1.0, 1.0, 1.0],
                vec![3.5, 3.5, 3.5, 3.5],
                vec![1.0, 2.0, 3.0, 2.0],
            ],
            4,
            1.0,
            2.0,
            3.0,
        ),
        (
            vec![vec![9.0, 1.0], vec![7.0, 3.0], vec![8.0, 8.0], vec![2.0, 7.0], vec![10.0, 0.0]],
            1,
            3.0,
            5.0,
            7.0,
        ),
    ];
    let mut exact = 0;
    for (repeats, selected, min, avg, max) in &fixtures {
        let s = RunStats::from_repeats(repeats.clone(), Selection::BestMakespan);
        if s.selected == *selected && s.min == *min && s.avg == *avg && s.max == *max && s.makespan == *max {
            exact += 1;
        }
    }
    outcome(exact == fixtures.len(), format!("{exact}/{} best-of-5 fixtures exact", fixtures.len()))
}

fn main() -> ExitCode {
    let corpus = corpus();
    let checks: [(&str, Check); 8] = [
        ("oracle equivalence", Box::new(|| oracle_equivalence(&corpus))),
        ("outstanding-handle bound", Box::new(|| outstanding_bound(&corpus))),
        ("wide-stride degeneracy", Box::new(degeneracy)),
        ("grid scaling", Box::new(grid_scaling)),
        ("skew trend", Box::new(skew_trend)),
        ("queue-search cost", Box::new(|| queue_search(&corpus))),
        ("simnet determinism", Box::new(determinism)),
        ("statistics pipeline", Box::new(statistics)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let t0 = Instant::now();
        let o = check();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!(
            "{verdict} [{}] {name}: {} ({:.1}s)",
            i + 1,
            o.detail.trim_end(),
            t0.elapsed().as_secs_f64()
        );
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {}/{} passed", checks.len() - failed, checks.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
