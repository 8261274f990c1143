//! Prefix crash consistency.
//!
//! After crashes and recovery, the replicas must hold the state reached
//! by running, in the order calls took effect, every call of the
//! surviving processes plus a prefix of each crashed process's calls.
//! That prefix must cover everything the process was told was durable,
//! and every included call must have returned what the model returns.
//! The checker searches the admissible prefix lengths.

use std::collections::BTreeMap;

use crate::ids::ProcId;
use crate::posix::{components, FsTree, ModelFs};
use crate::world::{OpRecord, World};

use super::par::{self, Exec};

/// Bound on prefix combinations tried for one run.
pub const MAX_COMBOS: usize = 50_000;

#[derive(Debug, Clone, PartialEq, Eq)]
struct Range {
    pid: ProcId,
    lo: usize,
    hi: usize,
}

/// Restrict a tree to the given mounts.
pub fn restrict(t: &FsTree, mounts: &[String]) -> FsTree {
    let names: Vec<String> = mounts
        .iter()
        .map(|m| m.trim_start_matches('/').to_string())
        .collect();
    FsTree {
        entries: t
            .entries
            .iter()
            .filter(|(p, _)| {
                components(p)
                    .ok()
                    .and_then(|c| c.first().cloned())
                    .is_none_or(|c| names.contains(&c))
            })
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect(),
    }
}

fn ranges(w: &World) -> Vec<Range> {
    let failed: Vec<_> = w.metrics.failovers.iter().map(|f| f.node).collect();
    let mut out = Vec::new();
    for p in w.procs.values() {
        let recs: Vec<&OpRecord> = w.history.iter().filter(|r| r.pid == p.pid).collect();
        let executed = recs.iter().take_while(|r| r.exec.is_some()).count();
        let lo = if p.alive {
            executed
        } else if failed.contains(&p.node) {
            p.durable_upto
        } else {
            p.completed
        };
        out.push(Range {
            pid: p.pid,
            lo: lo.min(executed),
            hi: executed,
        });
    }
    out
}

/// Replay with the given prefix per process. `Err` names the first
/// mismatching call.
fn replay(w: &World, cut: &BTreeMap<ProcId, usize>) -> Result<ModelFs, String> {
    let mut order: Vec<&OpRecord> = w
        .history
        .iter()
        .filter(|r| r.exec.is_some() && r.index < cut.get(&r.pid).copied().unwrap_or(0))
        .collect();
    order.sort_by_key(|r| r.exec);
    let mut m = ModelFs::with_mounts(&w.mounts());
    for r in order {
        let got = m.apply(&r.op);
        if let (Some(want), Some(_)) = (&r.ret, r.response) {
            if &got != want {
                return Err(format!(
                    "{} call {} {:?}: got {:?}, model {:?}",
                    r.pid, r.index, r.op, want, got
                ));
            }
        }
    }
    Ok(m)
}

fn matches_replicas(w: &World, m: &ModelFs) -> Result<(), String> {
    let tree = m.tree();
    for (c, ch) in w.cfg.chains.iter().enumerate() {
        let want = restrict(&tree, &ch.mounts);
        for n in w.replicas_of(c) {
            let Some(t) = w.tree_of(n) else { continue };
            let got = restrict(&t, &ch.mounts);
            if got != want {
                return Err(format!(
                    "{n} differs from model at {:?}",
                    got.first_difference(&want)
                ));
            }
        }
    }
    Ok(())
}

/// Find prefix lengths explaining the replicas. Call after `quiesce`.
pub fn check(w: &World) -> Result<BTreeMap<ProcId, usize>, String> {
    let rs = ranges(w);
    let combos: usize = rs.iter().map(|r| r.hi - r.lo + 1).product();
    if combos > MAX_COMBOS {
        return Err(format!(
            "{combos} prefix combinations exceed the search bound"
        ));
    }
    let mut first_err = None;
    let mut cut: BTreeMap<ProcId, usize> = rs.iter().map(|r| (r.pid, r.hi)).collect();
    // Longest prefixes first: the common case is that nothing was lost.
    for k in 0..combos {
        let mut rem = k;
        for r in &rs {
            let span = r.hi - r.lo + 1;
            cut.insert(r.pid, r.hi - rem % span);
            rem /= span;
        }
        let res = replay(w, &cut).and_then(|m| matches_replicas(w, &m));
        match res {
            Ok(()) => return Ok(cut),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    Err(first_err.unwrap_or_else(|| "no processes".into()))
}

/// Outcome of one crash trial.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trial {
    pub cut: u64,
    pub fired: bool,
    pub verdict: Result<(), String>,
}

/// How a cut point crashes the system.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrashKind {
    /// The first process dies.
    Proc,
    /// Its node dies and comes back before anyone notices.
    NodeRestart,
    /// Its node dies, is failed over, and rejoins later.
    NodeFailover,
}

pub const CRASH_KINDS: [CrashKind; 3] = [
    CrashKind::Proc,
    CrashKind::NodeRestart,
    CrashKind::NodeFailover,
];

/// Run `make` with a crash after durable write `cut`, recover, and check.
pub fn trial<F>(make: &F, cut: u64, kind: CrashKind) -> Trial
where
    F: Fn() -> World,
{
    use crate::fabric::{CrashTarget, Trap};
    use crate::time::{MS, SEC};
    let mut w = make();
    let (pid, node) = {
        let p = w.procs.values().next().expect("a process");
        (p.pid, p.node)
    };
    let target = match kind {
        CrashKind::Proc => CrashTarget::Proc(pid),
        _ => CrashTarget::Node(node),
    };
    w.restart_after = match kind {
        CrashKind::Proc => None,
        CrashKind::NodeRestart => Some(100 * MS),
        CrashKind::NodeFailover => Some(30 * SEC),
    };
    w.audit_steps = true;
    w.fab.arm(Some(Trap {
        at_write: cut,
        target,
    }));
    w.run_all(u64::MAX);
    let fired = w.fab.armed().is_none();
    let verdict = (|| {
        if !w.metrics.fatal.is_empty() {
            return Err(format!("fatal: {}", w.metrics.fatal.join("; ")));
        }
        if w.metrics.lease_violations > 0 {
            return Err(format!("lease overlap: {:?}", w.metrics.violation_notes));
        }
        w.quiesce().map_err(|e| format!("quiesce: {e}"))?;
        check(&w).map(|_| ())
    })();
    Trial {
        cut,
        fired,
        verdict,
    }
}

/// Writes issued by an uncrashed run, i.e. the range of cut points.
pub fn write_count<F: Fn() -> World>(make: &F) -> u64 {
    let mut w = make();
    let base = w.fab.media.global_issued();
    w.run_all(u64::MAX);
    w.fab.media.global_issued().saturating_sub(base).max(1) + base
}

/// `n` cut points spread over a run, each tried with the crash kinds in
/// turn.
pub fn sweep<F>(exec: Exec, make: F, n: usize) -> Vec<Trial>
where
    F: Fn() -> World + Sync + Send,
{
    let base = make().fab.media.global_issued();
    let total = write_count(&make);
    let span = total.saturating_sub(base).max(1);
    let points: Vec<(u64, CrashKind)> = (0..n)
        .map(|i| {
            let cut = base + 1 + (i as u64 * span) / n as u64;
            (cut, CRASH_KINDS[i % CRASH_KINDS.len()])
        })
        .collect();
    par::map(exec, &points, |(cut, kind)| trial(&make, *cut, *kind))
}
