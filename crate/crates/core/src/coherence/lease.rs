//! Lease scopes, conflicts and the leases each operation needs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ids::{LeaseId, NodeId, ProcId};
use crate::posix::{components, join, FsOp};
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LeaseKind {
    Read,
    Write,
}

/// A path, optionally covering everything below it.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Scope {
    pub comps: Vec<String>,
    pub subtree: bool,
}

impl Scope {
    pub fn path(p: &str) -> Self {
        Scope {
            comps: components(p).unwrap_or_default(),
            subtree: false,
        }
    }

    pub fn subtree(p: &str) -> Self {
        Scope {
            comps: components(p).unwrap_or_default(),
            subtree: true,
        }
    }

    pub fn display(&self) -> String {
        let p = join(&self.comps);
        if self.subtree {
            format!("{p}/**")
        } else {
            p
        }
    }

    /// The top-level directory this scope falls in; leases are managed
    /// per domain.
    pub fn domain(&self) -> String {
        match self.comps.first() {
            Some(c) => format!("/{c}"),
            None => "/".into(),
        }
    }

    /// Whether some path lies in both scopes.
    pub fn overlaps(&self, other: &Scope) -> bool {
        let (a, b) = (&self.comps, &other.comps);
        if a == b {
            return true;
        }
        (self.subtree && b.starts_with(a)) || (other.subtree && a.starts_with(b))
    }

    /// Whether every path of `inner` lies in `self`.
    pub fn contains(&self, inner: &Scope) -> bool {
        if self.subtree {
            inner.comps.starts_with(&self.comps)
        } else {
            !inner.subtree && inner.comps == self.comps
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LeaseReq {
    pub scope: Scope,
    pub kind: LeaseKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lease {
    pub id: LeaseId,
    pub scope: Scope,
    pub kind: LeaseKind,
    pub holder: ProcId,
    pub holder_node: NodeId,
    pub manager: NodeId,
    pub granted: SimTime,
    pub expires: SimTime,
}

impl Lease {
    pub fn live(&self, now: SimTime) -> bool {
        self.expires > now
    }

    pub fn covers(&self, req: &LeaseReq) -> bool {
        (self.kind == LeaseKind::Write || req.kind == LeaseKind::Read)
            && self.scope.contains(&req.scope)
    }
}

/// Two leases conflict when different processes hold overlapping scopes
/// and at least one of them writes.
pub fn conflicts(a: &Lease, b: &Lease) -> bool {
    a.holder != b.holder
        && (a.kind == LeaseKind::Write || b.kind == LeaseKind::Write)
        && a.scope.overlaps(&b.scope)
}

pub fn req_conflicts(held: &Lease, holder: ProcId, req: &LeaseReq) -> bool {
    held.holder != holder
        && (held.kind == LeaseKind::Write || req.kind == LeaseKind::Write)
        && held.scope.overlaps(&req.scope)
}

/// Leases needed to run `op`: read leases on every directory strictly
/// between the mount and the target, plus the target leases of the op.
/// Mount points cannot be renamed or removed, so they need no ancestor
/// lease.
/// Requests are deduplicated, with write subsuming read on one scope.
pub fn required(op: &FsOp) -> Vec<LeaseReq> {
    use LeaseKind::*;
    let mut want: BTreeMap<Scope, LeaseKind> = BTreeMap::new();
    let mut add = |s: Scope, k: LeaseKind| {
        let e = want.entry(s).or_insert(k);
        if k == Write {
            *e = Write;
        }
    };
    let ancestors = |p: &str, add: &mut dyn FnMut(Scope, LeaseKind)| {
        let Ok(c) = components(p) else { return };
        for i in 2..c.len() {
            add(
                Scope {
                    comps: c[..i].to_vec(),
                    subtree: false,
                },
                Read,
            );
        }
    };
    match op {
        FsOp::Read { path, .. }
        | FsOp::Stat { path }
        | FsOp::Readdir { path }
        | FsOp::Fsync { path } => {
            ancestors(path, &mut add);
            add(Scope::path(path), Read);
        }
        FsOp::Write { path, .. } | FsOp::Truncate { path, .. } | FsOp::Chmod { path, .. } => {
            ancestors(path, &mut add);
            add(Scope::path(path), Write);
        }
        FsOp::Create { path }
        | FsOp::Mkdir { path }
        | FsOp::Unlink { path }
        | FsOp::Rmdir { path } => {
            ancestors(path, &mut add);
            if let Ok(c) = components(path) {
                if let Some((_, parent)) = c.split_last() {
                    add(
                        Scope {
                            comps: parent.to_vec(),
                            subtree: false,
                        },
                        Write,
                    );
                }
            }
            add(Scope::path(path), Write);
        }
        FsOp::Rename { from, to } => {
            for p in [from, to] {
                ancestors(p, &mut add);
                if let Ok(c) = components(p) {
                    if let Some((_, parent)) = c.split_last() {
                        add(
                            Scope {
                                comps: parent.to_vec(),
                                subtree: false,
                            },
                            Write,
                        );
                    }
                }
                add(Scope::subtree(p), Write);
            }
        }
        FsOp::Dsync => {}
    }
    let mut out: Vec<LeaseReq> = want
        .into_iter()
        .filter(|(s, _)| !s.comps.is_empty())
        .map(|(scope, kind)| LeaseReq { scope, kind })
        .collect();
    // Drop requests already implied by a subtree write in the same set.
    let subtrees: Vec<Scope> = out
        .iter()
        .filter(|r| r.scope.subtree && r.kind == Write)
        .map(|r| r.scope.clone())
        .collect();
    out.retain(|r| {
        !subtrees
            .iter()
            .any(|s| s != &r.scope && s.contains(&r.scope))
    });
    out
}

/// A domain's lease table at its manager.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeaseTable {
    pub leases: BTreeMap<LeaseId, Lease>,
}

impl LeaseTable {
    pub fn expire(&mut self, now: SimTime) {
        self.leases.retain(|_, l| l.live(now));
    }

    pub fn conflicting(&self, holder: ProcId, req: &LeaseReq, now: SimTime) -> Vec<Lease> {
        self.leases
            .values()
            .filter(|l| l.live(now) && req_conflicts(l, holder, req))
            .cloned()
            .collect()
    }

    /// An existing lease of `holder` with exactly this scope and kind.
    pub fn find(&self, holder: ProcId, req: &LeaseReq) -> Option<LeaseId> {
        self.leases
            .values()
            .find(|l| l.holder == holder && l.scope == req.scope && l.kind == req.kind)
            .map(|l| l.id)
    }
}

/// Pairs of live, conflicting leases.
pub fn overlapping<'a>(
    leases: impl IntoIterator<Item = &'a Lease>,
    now: SimTime,
) -> Vec<(LeaseId, LeaseId)> {
    let live: Vec<&Lease> = leases.into_iter().filter(|l| l.live(now)).collect();
    let mut out = Vec::new();
    for (i, a) in live.iter().enumerate() {
        for b in &live[i + 1..] {
            if conflicts(a, b) {
                out.push((a.id, b.id));
            }
        }
    }
    out
}
