//! Parameter sweeps: fail-over cost against dataset size, log size
//! against throughput, lease locality, coalescing, determinism and the
//! linearizability sweep over explicit interleavings.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ClusterConfig, Mode};
use crate::fabric::{CrashTarget, IoStats};
use crate::ids::{Ino, NodeId, ProcId};
use crate::posix::FsOp;
use crate::simnet::{Endpoint, Tag};
use crate::time::{SimTime, MS, SEC};
use crate::world::{Driver, Timer, World};

use super::lincheck::{self, Call};
use super::par::{self, Exec};
use super::scenario::{self, run_hash, Scenario};
use super::workload::{generate, payload, WorkloadKind, WorkloadSpec};

// ----- fail-over against dataset size ---------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryPoint {
    pub scale: u64,
    pub dataset_bytes: u64,
    /// Bytes moved or touched by fail-over of the crashed node.
    pub failover_bytes: u64,
    pub failover_ns: SimTime,
    /// Bytes moved or touched rebuilding a spare from scratch.
    pub rebuild_bytes: u64,
    pub rebuild_ns: SimTime,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecoveryParams {
    pub mode: Mode,
    /// Files and bytes per file at scale 1.
    pub files: usize,
    pub file_bytes: u64,
    /// Ops of the writer whose node fails.
    pub hot_ops: usize,
}

impl Default for RecoveryParams {
    fn default() -> Self {
        RecoveryParams {
            mode: Mode::Optimistic,
            files: 8,
            file_bytes: 128 << 10,
            hot_ops: 24,
        }
    }
}

fn recovery_cluster(mode: Mode) -> ClusterConfig {
    let mut cfg = ClusterConfig::simple(&[1, 2, 3], &["/d", "/bulk"]);
    cfg.nodes.push(NodeId(4));
    cfg.mode = mode;
    cfg
}

/// Bulk data under `/bulk`, written from node 2 in 64 KB pieces.
fn preload(p: &RecoveryParams, cfg: &ClusterConfig, scale: u64, rng: &mut ChaCha8Rng) -> Vec<FsOp> {
    let chunk = 64 << 10;
    let mut ops = Vec::new();
    for f in 0..p.files as u64 * scale {
        let path = format!("/bulk/f{f}");
        ops.push(FsOp::Create { path: path.clone() });
        let mut off = 0;
        while off < p.file_bytes {
            let n = chunk.min(p.file_bytes - off);
            ops.push(FsOp::Write {
                path: path.clone(),
                offset: off,
                data: payload(rng, n as usize),
            });
            off += n;
        }
    }
    ops.push(super::workload::sync_op(cfg, "/bulk/f0"));
    ops
}

/// The same small working set for every scale, synced once at the end so
/// its log must be recovered from the replicas.
fn hot(p: &RecoveryParams, cfg: &ClusterConfig, rng: &mut ChaCha8Rng) -> Vec<FsOp> {
    let mut ops = vec![FsOp::Mkdir {
        path: "/d/h".into(),
    }];
    for k in 0..p.hot_ops {
        let path = format!("/d/h/f{}", k % 6);
        if k < 6 {
            ops.push(FsOp::Create { path: path.clone() });
        }
        ops.push(FsOp::Write {
            path,
            offset: (k as u64 % 4) * 4096,
            data: payload(rng, 4096),
        });
    }
    ops.push(super::workload::sync_op(cfg, "/d/h/f0"));
    ops
}

/// Copy every inode of `from` into the empty area of `to`, the way a node
/// with no usable local state would be rebuilt.
fn cold_rebuild(
    w: &mut World,
    from: NodeId,
    to: NodeId,
    t: SimTime,
) -> crate::error::Result<(IoStats, SimTime)> {
    let before = w.fab.stats.clone();
    let inos: Vec<Ino> = w.nodes[&from].area.inodes.keys().copied().collect();
    let (src, dst) = (Endpoint::kernfs(from), Endpoint::kernfs(to));
    let mut t = t;
    for ino in inos {
        let copy = w.nodes[&from].area.copy_of(&w.fab, ino);
        let size = copy.as_ref().map_or(64, |c| c.bytes());
        t = w.fab.request(dst, src, 64, Tag::ReadFetch, t)?;
        t = w.fab.reply(src, dst, size, Tag::ReadFill, t)?;
        w.fab.stats.rdma_bytes += size;
        let k = w.nodes.get_mut(&to).expect("spare is up");
        t = k.area.install(&mut w.fab, ino, copy, t)?;
    }
    Ok((w.fab.stats.since(&before), t))
}

pub fn recovery_point(p: &RecoveryParams, scale: u64, seed: u64) -> Result<RecoveryPoint, String> {
    let cfg = recovery_cluster(p.mode);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = World::new(cfg.clone()).map_err(|e| e.to_string())?;
    w.spawn(NodeId(2), 0, preload(p, &cfg, scale, &mut rng))
        .map_err(|e| e.to_string())?;
    w.run_all(SimTime::MAX);
    let t0 = w.quiesce().map_err(|e| e.to_string())?;
    let dataset_bytes = w.nodes[&NodeId(2)]
        .area
        .blocks_per_level()
        .values()
        .sum::<u64>()
        * crate::kernfs::state::BLOCK;

    // The baseline on a copy of the same state.
    let mut cold = w.clone();
    let (rio, rt) = cold_rebuild(&mut cold, NodeId(2), NodeId(4), t0).map_err(|e| e.to_string())?;

    let start = t0 + MS;
    w.spawn_at(start, NodeId(1), 0, hot(p, &cfg, &mut rng));
    w.schedule(start + SEC, Timer::Crash(CrashTarget::Node(NodeId(1))));
    w.run_all(SimTime::MAX);
    if !w.metrics.fatal.is_empty() {
        return Err(w.metrics.fatal.join("; "));
    }
    let [f] = w.metrics.failovers.as_slice() else {
        return Err(format!("{} fail-overs", w.metrics.failovers.len()));
    };
    Ok(RecoveryPoint {
        scale,
        dataset_bytes,
        failover_bytes: f.io.touched(),
        failover_ns: f.finished_at - f.detected_at,
        rebuild_bytes: rio.touched(),
        rebuild_ns: rt - t0,
    })
}

pub fn recovery_sweep(
    exec: Exec,
    p: &RecoveryParams,
    scales: &[u64],
    seed: u64,
) -> Result<Vec<RecoveryPoint>, String> {
    par::map(exec, scales, |s| recovery_point(p, *s, seed))
        .into_iter()
        .collect()
}

/// Largest relative deviation from the first point.
pub fn spread(xs: &[u64]) -> f64 {
    let Some(&b) = xs.first() else { return 0.0 };
    xs.iter()
        .map(|x| (*x as f64 - b as f64).abs() / (b as f64).max(1.0))
        .fold(0.0, f64::max)
}

// ----- log size -------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogSizePoint {
    pub log_bytes: u64,
    pub appended_bytes: u64,
    pub digests: u64,
    /// Digests a log of this size needs for the appended bytes.
    pub expected_digests: u64,
    pub sim_ns: SimTime,
    pub mb_per_s: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogSizeParams {
    pub mode: Mode,
    pub ops: usize,
    pub io_bytes: u64,
    pub file_bytes: u64,
}

impl Default for LogSizeParams {
    fn default() -> Self {
        LogSizeParams {
            mode: Mode::Optimistic,
            ops: 16384,
            io_bytes: 4096,
            file_bytes: 64 << 20,
        }
    }
}

pub fn log_size_point(
    p: &LogSizeParams,
    log_bytes: u64,
    seed: u64,
) -> Result<LogSizePoint, String> {
    let mut cfg = ClusterConfig::simple(&[1, 2], &["/d"]);
    cfg.mode = p.mode;
    cfg.sizes.log_bytes = log_bytes;
    let spec = WorkloadSpec {
        kind: WorkloadKind::SeqWrite,
        procs: 1,
        ops: p.ops,
        io_bytes: p.io_bytes,
        file_bytes: p.file_bytes,
        sync_every: 0,
        ..WorkloadSpec::default()
    };
    let sc = Scenario::new(cfg.clone(), spec, seed);
    let mut w = sc.build().map_err(|e| e.to_string())?;
    w.run_all(SimTime::MAX);
    if !w.metrics.fatal.is_empty() {
        return Err(w.metrics.fatal.join("; "));
    }
    let end = w.procs.values().map(|p| p.clock).max().unwrap_or(w.now);
    let bytes = w.metrics.appended_bytes;
    let usable = log_bytes as f64 * (1.0 - cfg.sizes.digest_free_fraction);
    Ok(LogSizePoint {
        log_bytes,
        appended_bytes: bytes,
        digests: w.metrics.threshold_evictions,
        expected_digests: (bytes as f64 / usable).ceil() as u64,
        sim_ns: end,
        mb_per_s: (p.ops as u64 * p.io_bytes) as f64 / (1 << 20) as f64 / (end as f64 / SEC as f64),
    })
}

pub fn log_size_sweep(
    exec: Exec,
    p: &LogSizeParams,
    sizes: &[u64],
    seed: u64,
) -> Result<Vec<LogSizePoint>, String> {
    par::map(exec, sizes, |s| log_size_point(p, *s, seed))
        .into_iter()
        .collect()
}

// ----- lease locality -------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalityPoint {
    pub name: String,
    pub remote_lease_hops: u64,
    pub passed: bool,
}

fn locality_cluster(mode: Mode) -> ClusterConfig {
    let mut cfg = ClusterConfig::simple(&[1, 2, 3], &["/s0", "/s1", "/s2"]);
    cfg.mode = mode;
    cfg
}

/// Remote lease hops for private, sharded and round-robin placement, and
/// round-robin through a single dedicated manager.
pub fn locality_sweep(exec: Exec, mode: Mode, ops: usize, seed: u64) -> Vec<LocalityPoint> {
    let cases: Vec<(&str, WorkloadKind, bool)> = vec![
        ("private", WorkloadKind::Private, false),
        ("sharded", WorkloadKind::Sharded, false),
        ("round_robin", WorkloadKind::RoundRobin, false),
        ("single_manager", WorkloadKind::RoundRobin, true),
    ];
    par::map(exec, &cases, |(name, kind, single)| {
        let mut cfg = locality_cluster(mode);
        if *single {
            cfg.nodes.push(NodeId(4));
            cfg.single_manager = Some(NodeId(4));
        }
        let spec = WorkloadSpec {
            kind: *kind,
            procs: 3,
            ops,
            io_bytes: 1024,
            files: 2,
            sync_every: 0,
            remote_every: 4,
            ..WorkloadSpec::default()
        };
        let sc = Scenario::new(cfg, spec, seed);
        let (_, s) = scenario::run_scenario(&sc).expect("valid scenario");
        LocalityPoint {
            name: name.to_string(),
            remote_lease_hops: s.remote_lease_hops,
            passed: s.passed(),
        }
    })
}

// ----- coalescing -----------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoalescePoint {
    pub coalesced_bytes: u64,
    pub raw_bytes: u64,
    pub ratio: f64,
    pub passed: bool,
}

/// Bytes shipped to replicas by an optimistic maildir run with and
/// without coalescing.
pub fn maildir_coalescing(procs: usize, messages: usize, seed: u64) -> CoalescePoint {
    let run = |coalesce: bool| {
        let mut cfg = ClusterConfig::simple(&[1, 2, 3], &["/mail"]);
        cfg.mode = Mode::Optimistic;
        cfg.coalesce = coalesce;
        let spec = WorkloadSpec {
            kind: WorkloadKind::Maildir,
            procs,
            ops: messages,
            io_bytes: 4096,
            sync_every: 16,
            ..WorkloadSpec::default()
        };
        let (_, s) =
            scenario::run_scenario(&Scenario::new(cfg, spec, seed)).expect("valid scenario");
        (s.metrics.replicated_bytes, s.passed())
    };
    let (c, ok_c) = run(true);
    let (r, ok_r) = run(false);
    CoalescePoint {
        coalesced_bytes: c,
        raw_bytes: r,
        ratio: c as f64 / r.max(1) as f64,
        passed: ok_c && ok_r,
    }
}

// ----- determinism ----------------------------------------------------------

/// Trace hashes of two runs of the same faulty scenario.
pub fn determinism(seed: u64) -> (String, String) {
    let mut cfg = ClusterConfig::simple(&[1, 2, 3], &["/d"]);
    cfg.mode = Mode::Optimistic;
    let spec = WorkloadSpec {
        procs: 3,
        ops: 30,
        ..WorkloadSpec::default()
    };
    let mut sc = Scenario::new(cfg, spec, seed);
    sc.restart_after_ns = Some(30 * SEC);
    sc.faults.push(scenario::Fault {
        at_ns: 200_000,
        kind: scenario::FaultKind::CrashNode { node: NodeId(3) },
    });
    let once = || {
        let (w, _) = scenario::run_scenario(&sc).expect("valid scenario");
        run_hash(&w)
    };
    (once(), once())
}

// ----- linearizability over interleavings -----------------------------------

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LincheckReport {
    pub procs: usize,
    pub ops: usize,
    pub interleavings: u64,
    /// Whether every interleaving was run, rather than a sample.
    pub exhaustive: bool,
    pub runs: usize,
    pub accepted: usize,
    pub mutants: usize,
    pub mutants_rejected: usize,
    pub failures: Vec<String>,
}

/// Number of distinct interleavings of `procs` scripts of `ops` steps.
pub fn interleavings(procs: usize, ops: usize) -> u64 {
    let mut n: u128 = 1;
    let mut k: u128 = 0;
    for _ in 0..procs {
        for i in 1..=ops as u128 {
            k += 1;
            n = n * k / i;
        }
    }
    n.min(u64::MAX as u128) as u64
}

/// Every distinct arrangement of `procs` pids each repeated `ops` times.
fn all_schedules(procs: usize, ops: usize) -> Vec<Vec<u32>> {
    fn rec(left: &mut [usize], cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if left.iter().all(|l| *l == 0) {
            out.push(cur.clone());
            return;
        }
        for i in 0..left.len() {
            if left[i] > 0 {
                left[i] -= 1;
                cur.push(i as u32 + 1);
                rec(left, cur, out);
                cur.pop();
                left[i] += 1;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut vec![ops; procs], &mut Vec::new(), &mut out);
    out
}

fn sampled_schedules(procs: usize, ops: usize, n: usize, seed: u64) -> Vec<Vec<u32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: Vec<u32> = (1..=procs as u32)
        .flat_map(|p| std::iter::repeat_n(p, ops))
        .collect();
    (0..n)
        .map(|_| {
            let mut s = base.clone();
            s.shuffle(&mut rng);
            s
        })
        .collect()
}

/// Run `procs` random scripts of `ops` calls (shared namespace, one node
/// each) under every interleaving, or `budget` sampled ones when there
/// are more than that. Each history must be linearizable and every
/// mutant of it must be rejected.
pub fn lincheck_sweep(
    exec: Exec,
    mode: Mode,
    procs: usize,
    ops: usize,
    budget: usize,
    seed: u64,
) -> LincheckReport {
    let mut cfg = ClusterConfig::simple(&[1, 2, 3], &["/d"]);
    cfg.mode = mode;
    let spec = WorkloadSpec {
        kind: WorkloadKind::Random,
        procs,
        ops,
        io_bytes: 64,
        sync_every: 0,
        ..WorkloadSpec::default()
    };
    let plans = generate(&spec, &cfg, seed);
    let total = interleavings(procs, ops);
    let exhaustive = total <= budget as u64;
    let schedules = if exhaustive {
        all_schedules(procs, ops)
    } else {
        sampled_schedules(procs, ops, budget, seed)
    };
    let mounts = cfg.mounts();
    let results = par::map(exec, &schedules, |sched| {
        let w = scenario::build_world(&cfg, &plans, &[], None).expect("valid world");
        let driver = Driver::Script(sched.iter().map(|p| ProcId(*p)).collect::<VecDeque<_>>());
        let (w, s) = scenario::run_checked(w, seed, None, driver);
        let h: Vec<Call> = lincheck::calls(&w.history);
        let ok = s.passed() && lincheck::linearizable(&mounts, &h);
        let muts = lincheck::mutations(&h);
        let rejected = muts
            .iter()
            .filter(|(_, m)| !lincheck::linearizable(&mounts, m))
            .count();
        let note = if ok {
            None
        } else {
            Some(format!(
                "schedule {sched:?}: {:?}",
                s.checks.iter().filter(|c| !c.pass).collect::<Vec<_>>()
            ))
        };
        (ok, muts.len(), rejected, note)
    });
    let mut r = LincheckReport {
        procs,
        ops,
        interleavings: total,
        exhaustive,
        runs: results.len(),
        ..LincheckReport::default()
    };
    for (ok, m, rej, note) in results {
        r.accepted += ok as usize;
        r.mutants += m;
        r.mutants_rejected += rej;
        r.failures.extend(note);
    }
    r
}
