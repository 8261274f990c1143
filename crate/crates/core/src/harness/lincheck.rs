//! History checkers against the sequential model.
//!
//! [`check`] is a Wing-Gong search with memoization of (linearized set,
//! model state); a rejected history comes with a shrunken witness.
//! [`replay_exec_order`] is the cheap check for long histories: it
//! replays calls in the order they took effect.
//! [`mutations`] builds histories that no correct system could produce,
//! for testing the checker itself.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::posix::{components, FileKind, FsOp, FsRet, ModelFs};
use crate::time::SimTime;
use crate::world::OpRecord;

/// One call as seen by a client.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Call {
    pub pid: u32,
    pub op: FsOp,
    pub invoke: SimTime,
    /// `None` for a call that never returned.
    pub response: Option<SimTime>,
    pub ret: Option<FsRet>,
}

impl Call {
    pub fn from_record(r: &OpRecord) -> Call {
        Call {
            pid: r.pid.0,
            op: r.op.clone(),
            invoke: r.invoke,
            response: r.response,
            ret: r.ret.clone(),
        }
    }
}

pub fn calls(history: &[OpRecord]) -> Vec<Call> {
    history.iter().map(Call::from_record).collect()
}

/// Default bound on distinct (linearized set, state) pairs explored.
pub const DEFAULT_BOUND: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Linearizable,
    /// No valid order exists. `witness` is a smallest sub-history found
    /// that still has none.
    Violation {
        witness: Vec<Call>,
    },
    /// The search gave up; nothing is claimed.
    BoundExceeded {
        explored: usize,
    },
}

struct Search<'a> {
    h: &'a [Call],
    seen: HashSet<(Vec<bool>, ModelFs)>,
    bound: usize,
    exceeded: bool,
}

impl Search<'_> {
    fn run(&mut self, done: &mut [bool], m: &ModelFs) -> bool {
        let h = self.h;
        if h.iter()
            .zip(done.iter())
            .all(|(c, d)| *d || c.response.is_none())
        {
            return true;
        }
        if self.exceeded || !self.seen.insert((done.to_vec(), m.clone())) {
            return false;
        }
        if self.seen.len() > self.bound {
            self.exceeded = true;
            return false;
        }
        // A call can go next only if no pending call finished before it
        // began.
        let horizon = h
            .iter()
            .zip(done.iter())
            .filter(|(_, d)| !**d)
            .filter_map(|(c, _)| c.response)
            .min()
            .unwrap_or(SimTime::MAX);
        for i in 0..h.len() {
            if done[i] || h[i].invoke > horizon {
                continue;
            }
            let mut next = m.clone();
            let got = next.apply(&h[i].op);
            if let Some(want) = &h[i].ret {
                if h[i].response.is_some() && &got != want {
                    continue;
                }
            }
            done[i] = true;
            if self.run(done, &next) {
                return true;
            }
            done[i] = false;
        }
        false
    }
}

fn search(mounts: &[String], h: &[Call], bound: usize) -> Result<bool, usize> {
    let mut s = Search {
        h,
        seen: HashSet::new(),
        bound,
        exceeded: false,
    };
    let ok = s.run(&mut vec![false; h.len()], &ModelFs::with_mounts(mounts));
    if s.exceeded {
        Err(s.seen.len())
    } else {
        Ok(ok)
    }
}

/// Whether some total order of the calls, consistent with real time,
/// explains every returned value. Calls without a response may take
/// effect or not. Over the default bound this answers `false`.
pub fn linearizable(mounts: &[String], history: &[Call]) -> bool {
    search(mounts, history, DEFAULT_BOUND) == Ok(true)
}

/// Full check with a witness on rejection.
pub fn check(mounts: &[String], history: &[Call], bound: usize) -> Verdict {
    match search(mounts, history, bound) {
        Ok(true) => Verdict::Linearizable,
        Err(explored) => Verdict::BoundExceeded { explored },
        Ok(false) => Verdict::Violation {
            witness: shrink(mounts, history.to_vec(), bound),
        },
    }
}

/// Drop calls one at a time while the rest still has no valid order.
fn shrink(mounts: &[String], mut h: Vec<Call>, bound: usize) -> Vec<Call> {
    let mut i = 0;
    while i < h.len() {
        let mut smaller = h.clone();
        smaller.remove(i);
        if search(mounts, &smaller, bound) == Ok(false) {
            h = smaller;
        } else {
            i += 1;
        }
    }
    h
}

/// Replay records in the order they took effect and compare every
/// return value. Returns the first mismatch.
pub fn replay_exec_order(mounts: &[String], history: &[OpRecord]) -> Result<ModelFs, String> {
    let mut order: Vec<&OpRecord> = history.iter().filter(|r| r.exec.is_some()).collect();
    order.sort_by_key(|r| r.exec);
    let mut m = ModelFs::with_mounts(mounts);
    for r in order {
        let got = m.apply(&r.op);
        if let Some(want) = &r.ret {
            if &got != want {
                return Err(format!(
                    "{} call {} {:?}: returned {:?}, model says {:?}",
                    r.pid, r.index, r.op, want, got
                ));
            }
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mutation {
    /// A read returns a byte no write ever stored.
    ForeignByte,
    /// A directory listing gains a name never created.
    GhostName,
    /// A stat reports an impossible size.
    HugeSize,
    /// A successful read of a path is moved before the call that created
    /// the path.
    EarlyRead,
}

pub const ALL_MUTATIONS: [Mutation; 4] = [
    Mutation::ForeignByte,
    Mutation::GhostName,
    Mutation::HugeSize,
    Mutation::EarlyRead,
];

fn creates(op: &FsOp, path: &str) -> bool {
    match op {
        FsOp::Create { path: p } | FsOp::Mkdir { path: p } => p == path,
        FsOp::Rename { to, from } => {
            let (t, f) = (
                components(to).unwrap_or_default(),
                components(from).unwrap_or_default(),
            );
            let target = components(path).unwrap_or_default();
            target.starts_with(&t) || (target.starts_with(&f) && t.starts_with(&f))
        }
        _ => false,
    }
}

/// Apply `m` to a copy of `h` at the first place it fits. `None` when the
/// history has no call the mutation applies to.
pub fn mutate(h: &[Call], m: Mutation) -> Option<Vec<Call>> {
    let mut out = h.to_vec();
    match m {
        Mutation::ForeignByte => {
            let i = h
                .iter()
                .position(|c| matches!(c.ret, Some(FsRet::Data(_))))?;
            if let Some(FsRet::Data(d)) = &mut out[i].ret {
                if d.is_empty() {
                    d.push(0xEE);
                } else {
                    d[0] = 0xEE;
                }
            }
        }
        Mutation::GhostName => {
            let i = h
                .iter()
                .position(|c| matches!(c.ret, Some(FsRet::Names(_))))?;
            if let Some(FsRet::Names(n)) = &mut out[i].ret {
                n.push("__ghost__".into());
                n.sort();
            }
        }
        Mutation::HugeSize => {
            let i = h
                .iter()
                .position(|c| matches!(c.ret, Some(FsRet::Stat { .. })))?;
            if let Some(FsRet::Stat { size, .. }) = &mut out[i].ret {
                *size += 1 << 40;
            }
        }
        Mutation::EarlyRead => {
            // A read or stat that found a path created exactly once, by a
            // single call, with nothing else able to bring it into being.
            let (ri, ci) = h.iter().enumerate().find_map(|(ri, c)| {
                let path = match (&c.op, &c.ret) {
                    (FsOp::Read { path, .. }, Some(FsRet::Data(_))) => path,
                    (
                        FsOp::Stat { path },
                        Some(FsRet::Stat {
                            kind: FileKind::File,
                            ..
                        }),
                    ) => path,
                    _ => return None,
                };
                let makers: Vec<usize> = h
                    .iter()
                    .enumerate()
                    .filter(|(_, o)| creates(&o.op, path))
                    .map(|(i, _)| i)
                    .collect();
                match makers.as_slice() {
                    [only] if h[*only].ret == Some(FsRet::Ok) && h[*only].invoke >= 2 => {
                        Some((ri, *only))
                    }
                    _ => None,
                }
            })?;
            let t = h[ci].invoke;
            out[ri].invoke = t - 2;
            out[ri].response = Some(t - 1);
        }
    }
    Some(out)
}

/// Every applicable mutation of `h`.
pub fn mutations(h: &[Call]) -> Vec<(Mutation, Vec<Call>)> {
    ALL_MUTATIONS
        .iter()
        .filter_map(|m| mutate(h, *m).map(|x| (*m, x)))
        .collect()
}
