//! Crashes in the middle of digestion.
//!
//! A run is driven until every log is replicated but nothing is digested.
//! The clean copy is then digested to completion; the crash copy is cut
//! after the `k`-th media write of digestion, recovered, and digested
//! again. Both must end in the same namespace on every replica.

use std::collections::BTreeMap;

use crate::fabric::{CrashTarget, Trap};
use crate::ids::{NodeId, ProcId};
use crate::time::{MS, SEC};
use crate::world::World;

use super::par::{self, Exec};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DigestTrial {
    pub cut: u64,
    pub node: NodeId,
    pub fired: bool,
    pub verdict: Result<(), String>,
}

/// Run to the end of the workload and push every log to its replicas.
pub fn prepare(mut w: World) -> Result<World, String> {
    w.run_all(u64::MAX);
    let mut t = w.now.max(w.floor);
    let pids: Vec<ProcId> = w
        .procs
        .values()
        .filter(|p| p.alive)
        .map(|p| p.pid)
        .collect();
    for pid in pids {
        t = w
            .replicate(pid, t)
            .map_err(|e| format!("replicate {pid}: {e}"))?;
    }
    w.now = w.now.max(t);
    w.floor = w.floor.max(t);
    Ok(w)
}

/// Tree hash per live node after a quiesce.
fn hashes(w: &mut World) -> Result<BTreeMap<NodeId, String>, String> {
    w.quiesce().map_err(|e| format!("quiesce: {e}"))?;
    Ok(w.nodes
        .keys()
        .filter_map(|n| w.tree_of(*n).map(|t| (*n, t.hash())))
        .collect())
}

/// Digest writes in the clean run: the range of cut points.
pub fn digest_writes(prepared: &World) -> Result<u64, String> {
    let mut w = prepared.clone();
    let base = w.fab.media.global_issued();
    w.quiesce().map_err(|e| format!("quiesce: {e}"))?;
    Ok(w.fab.media.global_issued() - base)
}

/// Crash `node` after digest write `k`, bring it back after `restart`, and
/// digest again. Compares against `clean`.
pub fn trial(
    prepared: &World,
    clean: &BTreeMap<NodeId, String>,
    node: NodeId,
    k: u64,
    restart: u64,
) -> DigestTrial {
    let mut w = prepared.clone();
    w.restart_after = Some(restart);
    let base = w.fab.media.global_issued();
    w.fab.arm(Some(Trap {
        at_write: base + k,
        target: CrashTarget::Node(node),
    }));
    // Failure here is the crash itself; recovery follows.
    let _ = w.quiesce();
    let fired = w.fab.armed().is_none();
    w.fab.arm(None);
    let t = w.now.max(w.floor);
    w.handle_fired(t);
    w.run_all(u64::MAX);
    let verdict = (|| {
        if !w.metrics.fatal.is_empty() {
            return Err(format!("fatal: {}", w.metrics.fatal.join("; ")));
        }
        let got = hashes(&mut w)?;
        for (n, h) in clean {
            match got.get(n) {
                Some(g) if g == h => {}
                Some(_) => return Err(format!("{n} differs from the clean digest")),
                None => return Err(format!("{n} did not come back")),
            }
        }
        Ok(())
    })();
    DigestTrial {
        cut: k,
        node,
        fired,
        verdict,
    }
}

/// `n` cut points over the digest of `prepared`, rotating the crashed
/// node over the cluster and alternating a quick restart with a full
/// fail-over and rejoin.
pub fn sweep(exec: Exec, prepared: &World, n: usize) -> Result<Vec<DigestTrial>, String> {
    let clean = hashes(&mut prepared.clone())?;
    let writes = digest_writes(prepared)?.max(1);
    let nodes: Vec<NodeId> = prepared.nodes.keys().copied().collect();
    let points: Vec<(u64, NodeId, u64)> = (0..n)
        .map(|i| {
            let k = 1 + (i as u64 * writes) / n as u64;
            let restart = if (i / nodes.len()) % 2 == 0 {
                100 * MS
            } else {
                30 * SEC
            };
            (k, nodes[i % nodes.len()], restart)
        })
        .collect();
    Ok(par::map(exec, &points, |(k, node, r)| {
        trial(prepared, &clean, *node, *k, *r)
    }))
}
