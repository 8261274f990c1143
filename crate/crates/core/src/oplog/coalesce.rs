//! Removal of superseded entries before replication.
//!
//! Rules, applied within one segment only:
//! * a write's bytes that a later write to the same inode overwrites are
//!   trimmed; a fully covered write is dropped;
//! * writes, truncates and attribute changes to an inode that is deleted
//!   later in the segment are dropped;
//! * a file created and unlinked within the segment disappears entirely,
//!   together with any renames of it, unless one of those renames
//!   displaced another inode;
//! * an attribute change followed by another one on the same inode is
//!   dropped.
//!
//! Entries are never reordered and keep their original seq and txn.

use std::collections::{BTreeMap, BTreeSet};

use crate::ids::Ino;

use super::entry::{LogEntry, LogOp};

/// Sorted, disjoint half-open byte ranges.
#[derive(Debug, Clone, Default)]
struct RangeSet(Vec<(u64, u64)>);

impl RangeSet {
    fn insert(&mut self, lo: u64, hi: u64) {
        if lo >= hi {
            return;
        }
        let mut out = Vec::with_capacity(self.0.len() + 1);
        let (mut lo, mut hi) = (lo, hi);
        for &(a, b) in &self.0 {
            if b < lo || a > hi {
                out.push((a, b));
            } else {
                lo = lo.min(a);
                hi = hi.max(b);
            }
        }
        out.push((lo, hi));
        out.sort();
        self.0 = out;
    }

    /// Parts of `[lo, hi)` not covered by the set.
    fn subtract(&self, lo: u64, hi: u64) -> Vec<(u64, u64)> {
        let mut out = Vec::new();
        let mut cur = lo;
        for &(a, b) in &self.0 {
            if b <= cur {
                continue;
            }
            if a >= hi {
                break;
            }
            if a > cur {
                out.push((cur, a));
            }
            cur = cur.max(b);
            if cur >= hi {
                break;
            }
        }
        if cur < hi {
            out.push((cur, hi));
        }
        out
    }
}

pub fn coalesce(entries: &[LogEntry]) -> Vec<LogEntry> {
    let mut covered: BTreeMap<Ino, RangeSet> = BTreeMap::new();
    let mut dead: BTreeSet<Ino> = BTreeSet::new();
    let mut attr_seen: BTreeSet<Ino> = BTreeSet::new();
    let mut kept_rev: Vec<LogEntry> = Vec::with_capacity(entries.len());

    for e in entries.iter().rev() {
        match &e.op {
            LogOp::Write { ino, offset, data } => {
                if dead.contains(ino) || data.is_empty() {
                    continue;
                }
                let end = offset + data.len() as u64;
                let cov = covered.entry(*ino).or_default();
                let pieces = cov.subtract(*offset, end);
                for &(lo, hi) in pieces.iter().rev() {
                    let a = (lo - offset) as usize;
                    let b = (hi - offset) as usize;
                    kept_rev.push(LogEntry {
                        op: LogOp::Write {
                            ino: *ino,
                            offset: lo,
                            data: data[a..b].to_vec(),
                        },
                        ..e.clone()
                    });
                }
                cov.insert(*offset, end);
            }
            LogOp::Truncate { ino, .. } => {
                if !dead.contains(ino) {
                    kept_rev.push(e.clone());
                }
            }
            LogOp::SetAttr { ino, .. } => {
                if !dead.contains(ino) && attr_seen.insert(*ino) {
                    kept_rev.push(e.clone());
                }
            }
            LogOp::Unlink { ino, .. } => {
                dead.insert(*ino);
                kept_rev.push(e.clone());
            }
            LogOp::Rename { replaced, .. } => {
                if let Some(r) = replaced {
                    dead.insert(*r);
                }
                kept_rev.push(e.clone());
            }
            LogOp::Create { .. } | LogOp::Mkdir { .. } => kept_rev.push(e.clone()),
        }
    }
    kept_rev.reverse();
    cancel_create_unlink(kept_rev)
}

fn cancel_create_unlink(entries: Vec<LogEntry>) -> Vec<LogEntry> {
    let mut created: BTreeMap<Ino, usize> = BTreeMap::new();
    let mut displacing: BTreeSet<Ino> = BTreeSet::new();
    let mut cancel: BTreeSet<Ino> = BTreeSet::new();
    for (i, e) in entries.iter().enumerate() {
        match &e.op {
            LogOp::Create { ino, .. } => {
                created.insert(*ino, i);
            }
            LogOp::Rename {
                ino,
                replaced: Some(_),
                ..
            } => {
                displacing.insert(*ino);
            }
            LogOp::Unlink { ino, .. } => {
                if created.contains_key(ino) && !displacing.contains(ino) {
                    cancel.insert(*ino);
                }
            }
            _ => {}
        }
    }
    if cancel.is_empty() {
        return entries;
    }
    entries
        .into_iter()
        .filter(|e| match &e.op {
            LogOp::Create { ino, .. }
            | LogOp::Unlink { ino, .. }
            | LogOp::Write { ino, .. }
            | LogOp::Truncate { ino, .. }
            | LogOp::SetAttr { ino, .. } => !cancel.contains(ino),
            LogOp::Rename { ino, .. } => !cancel.contains(ino),
            LogOp::Mkdir { .. } => true,
        })
        .collect()
}
