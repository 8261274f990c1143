//! Node rejoin under concurrent writes.
//!
//! One replica goes down after the workload has warmed its cache. Other
//! nodes keep writing while it is failed over, then it comes back and
//! readers on it scan the whole namespace. Every scan must return what
//! the model returns, and the rejoin must invalidate at least every inode
//! written while it was away, exactly the union of its peers' bitmaps.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{ClusterConfig, Mode};
use crate::fabric::CrashTarget;
use crate::ids::{Ino, NodeId};
use crate::time::{MS, SEC, US};
use crate::world::{Timer, World};

use super::par::{self, Exec};
use super::prefix;
use super::workload::{random_ops, scan_ops, WorkloadSpec};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RejoinTrial {
    pub seed: u64,
    /// Inodes written by others while the node was away.
    pub written: usize,
    pub invalidated: usize,
    pub reads: usize,
    pub verdict: Result<(), String>,
}

/// Build one trial. The victim is the last node of the chain.
pub fn build(mode: Mode, seed: u64) -> World {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cfg = ClusterConfig::simple(&[1, 2, 3], &["/d"]);
    cfg.mode = mode;
    let spec = WorkloadSpec {
        ops: 16,
        io_bytes: 256,
        sync_every: 4,
        ..WorkloadSpec::default()
    };
    let mut w = World::new(cfg.clone()).expect("valid config");
    w.record_appends = true;
    w.restart_after = Some(30 * SEC);
    let victim = NodeId(3);
    for n in [1, 2, 3] {
        let ops = random_ops(&spec, &cfg, 0, &mut rng);
        w.spawn(NodeId(n), 0, ops).expect("spawn");
    }
    w.spawn(victim, 0, scan_ops("/d")).expect("spawn");
    let crash = rng.random_range(50 * US..2 * MS);
    w.schedule(crash, Timer::Crash(CrashTarget::Node(victim)));
    // Writers during the outage, before and after fail-over.
    for (n, at) in [
        (1, crash + 500 * MS),
        (2, crash + 5 * SEC),
        (1, crash + 20 * SEC),
    ] {
        let ops = random_ops(&spec, &cfg, 0, &mut rng);
        w.spawn_at(at, NodeId(n), 0, ops);
    }
    // Readers on the rejoined node, and one writer racing them.
    let back = crash + 60 * SEC;
    w.spawn_at(back, victim, 0, scan_ops("/d"));
    w.spawn_at(back, NodeId(2), 0, random_ops(&spec, &cfg, 0, &mut rng));
    w.spawn_at(back + MS, victim, 0, scan_ops("/d"));
    w
}

pub fn trial(mode: Mode, seed: u64) -> RejoinTrial {
    let mut w = build(mode, seed);
    w.audit_steps = true;
    w.run_all(u64::MAX);
    let mut out = RejoinTrial {
        seed,
        written: 0,
        invalidated: 0,
        reads: 0,
        verdict: Ok(()),
    };
    out.verdict = (|| {
        if !w.metrics.fatal.is_empty() {
            return Err(format!("fatal: {}", w.metrics.fatal.join("; ")));
        }
        if w.metrics.lease_violations > 0 {
            return Err(format!("lease overlap: {:?}", w.metrics.violation_notes));
        }
        let [r] = w.metrics.rejoins.as_slice() else {
            return Err(format!("{} rejoins", w.metrics.rejoins.len()));
        };
        let written: BTreeSet<Ino> = w
            .appends
            .iter()
            .filter(|(t, pid, _)| {
                *t >= r.crashed_at
                    && *t < r.finished_at
                    && w.procs.get(pid).is_some_and(|p| p.node != r.node)
            })
            .flat_map(|(_, _, inos)| inos.iter().copied())
            .collect();
        let union: BTreeSet<Ino> = r
            .peer_bitmaps
            .values()
            .flat_map(|eps| eps.values().flatten().copied())
            .collect();
        out.written = written.len();
        out.invalidated = r.invalidated.len();
        out.reads = w
            .history
            .iter()
            .filter(|h| {
                w.procs.get(&h.pid).is_some_and(|p| p.node == r.node) && h.invoke >= r.finished_at
            })
            .filter(|h| h.response.is_some())
            .count();
        if let Some(missing) = written.difference(&r.invalidated).next() {
            return Err(format!(
                "{missing:?} written while away but not invalidated"
            ));
        }
        if union != r.invalidated {
            return Err("invalidated set is not the bitmap union".into());
        }
        w.quiesce().map_err(|e| format!("quiesce: {e}"))?;
        prefix::check(&w).map(|_| ())?;
        super::scenario::convergence(&w)
    })();
    out
}

pub fn sweep(exec: Exec, mode: Mode, seeds: std::ops::Range<u64>) -> Vec<RejoinTrial> {
    let seeds: Vec<u64> = seeds.collect();
    par::map(exec, &seeds, |s| trial(mode, *s))
}
