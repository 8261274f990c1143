//! Acceptance run: one line per criterion, then a nonzero exit if any
//! failed. Runs without the libtest harness so the lines are never
//! captured.

use std::time::{Duration, Instant};

use ccnvm::config::{ClusterConfig, Mode};
use ccnvm::harness::par::Exec;
use ccnvm::harness::scenario::{run_scenario, Fault, FaultKind, Scenario};
use ccnvm::harness::workload::{WorkloadKind, WorkloadSpec};
use ccnvm::harness::{digest, prefix, rejoin, sweeps};
use ccnvm::ids::NodeId;
use ccnvm::time::{MS, SEC};

// Tolerances and sizes.
const PREFIX_MIN_CUTS: usize = 1000;
const PREFIX_TIME_LIMIT: Duration = Duration::from_secs(300);
const LINCHECK_BUDGET: usize = 2000;
const DIGEST_MIN_CUTS: usize = 200;
const REJOIN_MIN_TRIALS: usize = 100;
const FAILOVER_SPREAD: f64 = 0.05;
const REBUILD_MIN_GROWTH: f64 = 5.0;
const COALESCE_MAX_RATIO: f64 = 0.6;
const DIGEST_COUNT_SLACK: u64 = 1;

struct Line {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn report(id: u32, name: &'static str, pass: bool, detail: String) -> Line {
    println!(
        "criterion {id:>2} {name:<24} {} {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    Line {
        id,
        name,
        pass,
        detail,
    }
}

fn random_scenario(mode: Mode, replicas: &[u32], procs: usize, ops: usize, seed: u64) -> Scenario {
    let mut cfg = ClusterConfig::simple(replicas, &["/d"]);
    cfg.mode = mode;
    let spec = WorkloadSpec {
        kind: WorkloadKind::Random,
        procs,
        ops,
        io_bytes: 512,
        sync_every: 4,
        ..WorkloadSpec::default()
    };
    Scenario::new(cfg, spec, seed)
}

/// Cut points spread over runs of every configuration.
fn prefix_crash_consistency() -> (Line, usize) {
    let start = Instant::now();
    let mut cuts = 0;
    let mut fired = 0;
    let mut violations = 0;
    let mut failures = Vec::new();
    let per_config = PREFIX_MIN_CUTS.div_ceil(8) + 2;
    for mode in [Mode::Pessimistic, Mode::Optimistic] {
        for replicas in [&[1, 2][..], &[1, 2, 3][..]] {
            for procs in [2, 4] {
                let sc = random_scenario(mode, replicas, procs, 16, 11 + procs as u64);
                let trials = prefix::sweep(
                    Exec::default(),
                    || sc.build().expect("valid scenario"),
                    per_config,
                );
                cuts += trials.len();
                fired += trials.iter().filter(|t| t.fired).count();
                for t in trials.iter().filter(|t| t.verdict.is_err()) {
                    let e = t.verdict.clone().unwrap_err();
                    if e.starts_with("lease overlap") {
                        violations += 1;
                    }
                    failures.push(format!(
                        "{mode:?} r{} p{procs} cut {}: {e}",
                        replicas.len(),
                        t.cut
                    ));
                }
            }
        }
    }
    let took = start.elapsed();
    let pass =
        cuts >= PREFIX_MIN_CUTS && fired == cuts && failures.is_empty() && took < PREFIX_TIME_LIMIT;
    let line = report(
        1,
        "prefix_crash_consistency",
        pass,
        format!(
            "cuts={cuts} fired={fired} failed={} time={:.1}s {}",
            failures.len(),
            took.as_secs_f64(),
            failures.first().cloned().unwrap_or_default()
        ),
    );
    (line, violations)
}

fn linearizability() -> Line {
    let mut runs = 0;
    let mut accepted = 0;
    let mut mutants = 0;
    let mut rejected = 0;
    let mut shapes = Vec::new();
    let mut failures = Vec::new();
    for mode in [Mode::Pessimistic, Mode::Optimistic] {
        for (p, o) in [(1, 5), (2, 5), (3, 3), (3, 4), (3, 5)] {
            let r = sweeps::lincheck_sweep(Exec::default(), mode, p, o, LINCHECK_BUDGET, 3);
            runs += r.runs;
            accepted += r.accepted;
            mutants += r.mutants;
            rejected += r.mutants_rejected;
            failures.extend(r.failures.iter().take(1).cloned());
            if mode == Mode::Pessimistic {
                shapes.push(format!(
                    "{p}x{o}:{}{}",
                    r.runs,
                    if r.exhaustive { "" } else { "~" }
                ));
            }
        }
    }
    report(
        2,
        "linearizability",
        runs > 0 && accepted == runs && mutants > 0 && rejected == mutants,
        format!(
            "accepted={accepted}/{runs} mutants_rejected={rejected}/{mutants} shapes[{}] (~ = sampled) {}",
            shapes.join(" "),
            failures.first().cloned().unwrap_or_default()
        ),
    )
}

/// Holder crashes and domain migrations under step-by-step lease audits.
fn lease_safety(prefix_violations: usize) -> Line {
    let mut audits = 0;
    let mut violations = prefix_violations as u64;
    let mut migrations = 0;
    let mut failovers = 0;
    let mut notes = Vec::new();
    for seed in 0..24u64 {
        let mode = if seed % 2 == 0 {
            Mode::Pessimistic
        } else {
            Mode::Optimistic
        };
        let mut cfg = ClusterConfig::simple(&[1, 2, 3], &["/s0", "/s1", "/s2"]);
        cfg.mode = mode;
        let kind = [
            WorkloadKind::RoundRobin,
            WorkloadKind::Sharded,
            WorkloadKind::Random,
        ][seed as usize % 3];
        let spec = WorkloadSpec {
            kind,
            procs: 3,
            ops: 30,
            io_bytes: 1024,
            files: 2,
            ..WorkloadSpec::default()
        };
        let mut sc = Scenario::new(cfg, spec, seed);
        sc.restart_after_ns = Some(if seed % 4 < 2 { 100 * MS } else { 30 * SEC });
        let victim = 1 + (seed % 3) as u32;
        sc.faults.push(Fault {
            at_ns: 100_000 + seed * 37_000,
            kind: FaultKind::CrashNode {
                node: NodeId(victim),
            },
        });
        sc.faults.push(Fault {
            at_ns: 300_000 + seed * 11_000,
            kind: FaultKind::CrashProc {
                proc: 1 + (victim % 3),
            },
        });
        let (w, s) = run_scenario(&sc).expect("valid scenario");
        audits += w.metrics.lease_audits;
        violations += w.metrics.lease_violations;
        migrations += w
            .events
            .iter()
            .filter(|e| e.what.contains("migrated"))
            .count();
        failovers += w.metrics.failovers.len();
        if !s.passed() {
            notes.push(format!(
                "seed {seed}: {:?}",
                s.checks.iter().find(|c| !c.pass)
            ));
        }
    }
    report(
        3,
        "lease_safety",
        violations == 0 && audits > 0 && migrations > 0 && failovers > 0 && notes.is_empty(),
        format!(
            "overlaps={violations} audits={audits} migrations={migrations} failovers={failovers} {}",
            notes.first().cloned().unwrap_or_default()
        ),
    )
}

fn digest_idempotence() -> Line {
    let mut cuts = 0;
    let mut fired = 0;
    let mut failures = Vec::new();
    for mode in [Mode::Pessimistic, Mode::Optimistic] {
        let mut cfg = ClusterConfig::simple(&[1, 2, 3], &["/p0", "/p1", "/p2"]);
        cfg.mode = mode;
        let spec = WorkloadSpec {
            kind: WorkloadKind::Private,
            procs: 3,
            ops: 24,
            io_bytes: 1024,
            sync_every: 0,
            ..WorkloadSpec::default()
        };
        let sc = Scenario::new(cfg, spec, 5);
        let w = digest::prepare(sc.build().expect("valid scenario")).expect("replicated");
        match digest::sweep(Exec::default(), &w, DIGEST_MIN_CUTS / 2 + 10) {
            Ok(ts) => {
                cuts += ts.len();
                fired += ts.iter().filter(|t| t.fired).count();
                failures.extend(ts.into_iter().filter_map(|t| t.verdict.err()));
            }
            Err(e) => failures.push(e),
        }
    }
    report(
        4,
        "digest_idempotence",
        cuts >= DIGEST_MIN_CUTS && fired == cuts && failures.is_empty(),
        format!(
            "cuts={cuts} fired={fired} mismatches={} {}",
            failures.len(),
            failures.first().cloned().unwrap_or_default()
        ),
    )
}

fn convergence() -> Line {
    let mut runs = 0;
    let mut failures = Vec::new();
    for seed in 0..30u64 {
        let mode = if seed % 2 == 0 {
            Mode::Pessimistic
        } else {
            Mode::Optimistic
        };
        let mut sc = random_scenario(mode, &[1, 2, 3], 3, 30, seed);
        sc.restart_after_ns = Some(if seed % 3 == 0 { 100 * MS } else { 30 * SEC });
        if seed % 5 != 4 {
            sc.faults.push(Fault {
                at_ns: 50_000 + seed * 23_000,
                kind: FaultKind::CrashNode {
                    node: NodeId(1 + (seed % 3) as u32),
                },
            });
        }
        let (w, s) = run_scenario(&sc).expect("valid scenario");
        runs += 1;
        let all_back = w.nodes.len() == 3;
        let conv = s
            .checks
            .iter()
            .find(|c| c.name == "convergence")
            .is_some_and(|c| c.pass);
        if !(conv && all_back && s.passed()) {
            failures.push(format!(
                "seed {seed}: back={all_back} {:?}",
                s.checks.iter().find(|c| !c.pass)
            ));
        }
    }
    report(
        5,
        "replica_convergence",
        failures.is_empty(),
        format!(
            "runs={runs} diverged={} {}",
            failures.len(),
            failures.first().cloned().unwrap_or_default()
        ),
    )
}

fn failover_scaling() -> Line {
    let scales: Vec<u64> = (1..=10).collect();
    let r = sweeps::recovery_sweep(
        Exec::default(),
        &sweeps::RecoveryParams::default(),
        &scales,
        1,
    );
    match r {
        Ok(pts) => {
            let bytes: Vec<u64> = pts.iter().map(|p| p.failover_bytes).collect();
            let times: Vec<u64> = pts.iter().map(|p| p.failover_ns).collect();
            let (sb, st) = (sweeps::spread(&bytes), sweeps::spread(&times));
            let first = &pts[0];
            let last = &pts[pts.len() - 1];
            let growth = last.rebuild_bytes as f64 / first.rebuild_bytes.max(1) as f64;
            report(
                6,
                "failover_scaling",
                sb <= FAILOVER_SPREAD && st <= FAILOVER_SPREAD && growth >= REBUILD_MIN_GROWTH,
                format!(
                    "dataset {}x failover bytes spread={:.2}% time spread={:.2}% cold rebuild growth={growth:.1}x",
                    last.scale,
                    sb * 100.0,
                    st * 100.0
                ),
            )
        }
        Err(e) => report(6, "failover_scaling", false, e),
    }
}

fn rejoin_safety() -> Line {
    let half = REJOIN_MIN_TRIALS as u64 / 2 + 5;
    let mut ts = rejoin::sweep(Exec::default(), Mode::Pessimistic, 0..half);
    ts.extend(rejoin::sweep(Exec::default(), Mode::Optimistic, 0..half));
    let bad: Vec<_> = ts.iter().filter(|t| t.verdict.is_err()).collect();
    let written: usize = ts.iter().map(|t| t.written).sum();
    let reads: usize = ts.iter().map(|t| t.reads).sum();
    report(
        7,
        "rejoin",
        ts.len() >= REJOIN_MIN_TRIALS && bad.is_empty() && written > 0 && reads > 0,
        format!(
            "trials={} failed={} written_inodes={written} rejoined_reads={reads} {}",
            ts.len(),
            bad.len(),
            bad.first()
                .map(|t| format!("seed {}: {:?}", t.seed, t.verdict))
                .unwrap_or_default()
        ),
    )
}

fn maildir_coalescing() -> Line {
    let c = sweeps::maildir_coalescing(2, 40, 1);
    report(
        8,
        "maildir_coalescing",
        c.passed && c.ratio <= COALESCE_MAX_RATIO,
        format!(
            "coalesced={} raw={} ratio={:.3}",
            c.coalesced_bytes, c.raw_bytes, c.ratio
        ),
    )
}

fn log_size() -> Line {
    let sizes: Vec<u64> = (0..5).map(|i| (1u64 << 20) << i).collect();
    match sweeps::log_size_sweep(
        Exec::default(),
        &sweeps::LogSizeParams::default(),
        &sizes,
        1,
    ) {
        Ok(pts) => {
            let monotone = pts.windows(2).all(|w| w[1].mb_per_s >= w[0].mb_per_s);
            let counts_ok = pts
                .iter()
                .all(|p| p.digests.abs_diff(p.expected_digests) <= DIGEST_COUNT_SLACK);
            let range = pts[pts.len() - 1].log_bytes / pts[0].log_bytes;
            let table: Vec<String> = pts
                .iter()
                .map(|p| {
                    format!(
                        "{}K:{:.0}MB/s,{}/{}",
                        p.log_bytes >> 10,
                        p.mb_per_s,
                        p.digests,
                        p.expected_digests
                    )
                })
                .collect();
            report(
                9,
                "log_size_sweep",
                monotone && counts_ok && range >= 16,
                format!(
                    "range={range}x monotone={monotone} digests_within_1={counts_ok} [{}]",
                    table.join(" ")
                ),
            )
        }
        Err(e) => report(9, "log_size_sweep", false, e),
    }
}

fn lease_locality() -> Line {
    let mut ok = true;
    let mut detail = Vec::new();
    for mode in [Mode::Pessimistic, Mode::Optimistic] {
        let pts = sweeps::locality_sweep(Exec::default(), mode, 24, 1);
        let hops: Vec<u64> = pts.iter().map(|p| p.remote_lease_hops).collect();
        ok &= hops[0] == 0 && hops.windows(2).all(|w| w[0] < w[1]) && pts.iter().all(|p| p.passed);
        detail.push(format!(
            "{mode:?}: {}",
            pts.iter()
                .map(|p| format!("{}={}", p.name, p.remote_lease_hops))
                .collect::<Vec<_>>()
                .join(" < ")
        ));
    }
    report(10, "lease_locality", ok, detail.join("; "))
}

fn determinism() -> Line {
    let mut same = 0;
    let seeds = 0..5u64;
    let n = seeds.clone().count();
    let mut distinct = std::collections::BTreeSet::new();
    for s in seeds {
        let (a, b) = sweeps::determinism(s);
        same += (a == b) as usize;
        distinct.insert(a);
    }
    report(
        11,
        "determinism",
        same == n && distinct.len() == n,
        format!(
            "identical={same}/{n} distinct_across_seeds={}",
            distinct.len()
        ),
    )
}

fn main() {
    let (l1, prefix_violations) = prefix_crash_consistency();
    let lines = vec![
        l1,
        linearizability(),
        lease_safety(prefix_violations),
        digest_idempotence(),
        convergence(),
        failover_scaling(),
        rejoin_safety(),
        maildir_coalescing(),
        log_size(),
        lease_locality(),
        determinism(),
    ];
    let failed: Vec<String> = lines
        .iter()
        .filter(|l| !l.pass)
        .map(|l| format!("{} {}: {}", l.id, l.name, l.detail))
        .collect();
    println!(
        "acceptance: {}/{} criteria pass",
        lines.len() - failed.len(),
        lines.len()
    );
    if !failed.is_empty() {
        eprintln!("failed criteria:\n{}", failed.join("\n"));
        std::process::exit(1);
    }
}
