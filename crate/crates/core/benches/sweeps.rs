//! Sequential against data-parallel execution of the independent-run
//! sweeps.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use ccnvm::config::{ClusterConfig, Mode};
use ccnvm::harness::par::Exec;
use ccnvm::harness::scenario::Scenario;
use ccnvm::harness::sweeps::{self, RecoveryParams};
use ccnvm::harness::workload::WorkloadSpec;
use ccnvm::harness::{prefix, rejoin};

const EXECS: [(&str, Exec); 2] = [
    ("sequential", Exec::Sequential),
    ("parallel", Exec::Parallel),
];

fn crash_cuts(c: &mut Criterion) {
    let mut cfg = ClusterConfig::simple(&[1, 2, 3], &["/d"]);
    cfg.mode = Mode::Optimistic;
    let spec = WorkloadSpec {
        procs: 3,
        ops: 12,
        io_bytes: 512,
        sync_every: 4,
        ..WorkloadSpec::default()
    };
    let sc = Scenario::new(cfg, spec, 5);
    let mut g = c.benchmark_group("prefix_cuts");
    g.sample_size(10);
    for (name, exec) in EXECS {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| prefix::sweep(exec, || sc.build().unwrap(), 32))
        });
    }
    g.finish();
}

fn rejoins(c: &mut Criterion) {
    let mut g = c.benchmark_group("rejoin_trials");
    g.sample_size(10);
    for (name, exec) in EXECS {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| rejoin::sweep(exec, Mode::Pessimistic, 0..8))
        });
    }
    g.finish();
}

fn recovery(c: &mut Criterion) {
    let p = RecoveryParams {
        files: 2,
        ..RecoveryParams::default()
    };
    let mut g = c.benchmark_group("recovery_sweep");
    g.sample_size(10);
    for (name, exec) in EXECS {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| sweeps::recovery_sweep(exec, &p, &[1, 2, 4], 1).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, crash_cuts, rejoins, recovery);
criterion_main!(benches);
