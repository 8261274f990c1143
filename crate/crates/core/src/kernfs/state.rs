//! File system state as seen through a stack of changes.
//!
//! [`View`] is read access to some committed state. [`Delta`] is a set of
//! uncommitted changes, produced by applying log operations on top of a
//! view. The same [`Delta::apply`] drives both the LibFS overlay of its
//! private log and the KernFS digest, so there is exactly one definition
//! of what a log operation does.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::ids::Ino;
use crate::oplog::LogOp;
use crate::posix::{Errno, FileKind};

pub const BLOCK: u64 = 4096;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InodeAttr {
    pub kind: FileKind,
    pub mode: u32,
    pub uid: u32,
    pub size: u64,
}

impl InodeAttr {
    pub fn is_dir(&self) -> bool {
        self.kind == FileKind::Dir
    }

    /// UNIX permission test for owner or other bits; uid 0 bypasses.
    pub fn allows(&self, uid: u32, bit: u32) -> bool {
        if uid == 0 {
            return true;
        }
        let bits = if self.uid == uid {
            self.mode >> 6
        } else {
            self.mode
        };
        bits & bit != 0
    }
}

pub const PERM_R: u32 = 4;
pub const PERM_W: u32 = 2;
pub const PERM_X: u32 = 1;

pub trait View {
    fn inode(&self, ino: Ino) -> Option<InodeAttr>;
    fn dirent(&self, dir: Ino, name: &str) -> Option<Ino>;
    /// Sorted by name.
    fn entries(&self, dir: Ino) -> Vec<(String, Ino)>;
    /// `None` reads as zeros.
    fn block(&self, ino: Ino, blk: u64) -> Option<Vec<u8>>;
}

/// Uncommitted changes on top of a base view.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Delta {
    pub inodes: BTreeMap<Ino, Option<InodeAttr>>,
    pub dirents: BTreeMap<(Ino, String), Option<Ino>>,
    pub blocks: BTreeMap<(Ino, u64), Option<Vec<u8>>>,
    /// Base bytes of an inode at or beyond this offset read as zero.
    pub base_limit: BTreeMap<Ino, u64>,
}

impl Delta {
    pub fn is_empty(&self) -> bool {
        self.inodes.is_empty() && self.dirents.is_empty() && self.blocks.is_empty()
    }

    pub fn clear(&mut self) {
        *self = Delta::default();
    }

    /// Every inode with a pending change, directories included.
    pub fn touched(&self) -> BTreeSet<Ino> {
        let mut s: BTreeSet<Ino> = self.inodes.keys().copied().collect();
        s.extend(self.dirents.keys().map(|(d, _)| *d));
        s.extend(self.blocks.keys().map(|(i, _)| *i));
        s
    }

    fn layered<'a, B: View + ?Sized>(&'a self, base: &'a B) -> Layered<'a, B> {
        Layered { base, delta: self }
    }

    fn set_attr<B: View + ?Sized>(&mut self, base: &B, ino: Ino, f: impl FnOnce(&mut InodeAttr)) {
        if let Some(mut a) = self.layered(base).inode(ino) {
            f(&mut a);
            self.inodes.insert(ino, Some(a));
        }
    }

    fn drop_inode<B: View + ?Sized>(&mut self, base: &B, ino: Ino) {
        if self.layered(base).inode(ino).is_none() {
            return;
        }
        self.inodes.insert(ino, None);
        let keys: Vec<(Ino, u64)> = self
            .blocks
            .range((ino, 0)..=(ino, u64::MAX))
            .map(|(k, _)| *k)
            .collect();
        for k in keys {
            self.blocks.remove(&k);
        }
        self.base_limit.insert(ino, 0);
    }

    /// Apply one log operation. Operations whose effect is already present
    /// are no-ops, so replaying an applied entry changes nothing.
    pub fn apply<B: View + ?Sized>(&mut self, base: &B, op: &LogOp) {
        match op {
            LogOp::Write { ino, offset, data } => {
                let Some(attr) = self.layered(base).inode(*ino) else {
                    return;
                };
                if attr.is_dir() || data.is_empty() {
                    return;
                }
                let end = offset + data.len() as u64;
                let mut done = 0usize;
                while done < data.len() {
                    let pos = offset + done as u64;
                    let blk = pos / BLOCK;
                    let within = (pos % BLOCK) as usize;
                    let n = (BLOCK as usize - within).min(data.len() - done);
                    let mut b = self
                        .layered(base)
                        .block(*ino, blk)
                        .unwrap_or_else(|| vec![0; BLOCK as usize]);
                    b[within..within + n].copy_from_slice(&data[done..done + n]);
                    self.blocks.insert((*ino, blk), Some(b));
                    done += n;
                }
                self.set_attr(base, *ino, |a| a.size = a.size.max(end));
            }
            LogOp::Create {
                parent,
                name,
                ino,
                mode,
                uid,
            }
            | LogOp::Mkdir {
                parent,
                name,
                ino,
                mode,
                uid,
            } => {
                let view = self.layered(base);
                if view.inode(*ino).is_some() || view.inode(*parent).is_none() {
                    return;
                }
                if view.dirent(*parent, name).is_some() {
                    return;
                }
                let kind = if matches!(op, LogOp::Create { .. }) {
                    FileKind::File
                } else {
                    FileKind::Dir
                };
                self.inodes.insert(
                    *ino,
                    Some(InodeAttr {
                        kind,
                        mode: *mode,
                        uid: *uid,
                        size: 0,
                    }),
                );
                self.base_limit.insert(*ino, 0);
                self.dirents.insert((*parent, name.clone()), Some(*ino));
            }
            LogOp::Unlink { parent, name, ino } => {
                if self.layered(base).dirent(*parent, name) == Some(*ino) {
                    self.dirents.insert((*parent, name.clone()), None);
                }
                self.drop_inode(base, *ino);
            }
            LogOp::Rename {
                src_parent,
                src_name,
                dst_parent,
                dst_name,
                ino,
                replaced,
            } => {
                let view = self.layered(base);
                if view.dirent(*src_parent, src_name) != Some(*ino) {
                    return;
                }
                let current = view.dirent(*dst_parent, dst_name);
                self.dirents.insert((*src_parent, src_name.clone()), None);
                if let Some(r) = current.or(*replaced) {
                    if r != *ino {
                        self.drop_inode(base, r);
                    }
                }
                self.dirents
                    .insert((*dst_parent, dst_name.clone()), Some(*ino));
            }
            LogOp::Truncate { ino, size } => {
                let Some(attr) = self.layered(base).inode(*ino) else {
                    return;
                };
                if attr.is_dir() {
                    return;
                }
                let keep_blocks = size.div_ceil(BLOCK);
                let dead: Vec<(Ino, u64)> = self
                    .blocks
                    .range((*ino, keep_blocks)..=(*ino, u64::MAX))
                    .map(|(k, _)| *k)
                    .collect();
                for k in dead {
                    self.blocks.remove(&k);
                }
                if size % BLOCK != 0 {
                    let blk = size / BLOCK;
                    if let Some(mut b) = self.layered(base).block(*ino, blk) {
                        b[(size % BLOCK) as usize..].fill(0);
                        self.blocks.insert((*ino, blk), Some(b));
                    }
                }
                let lim = self.base_limit.entry(*ino).or_insert(u64::MAX);
                *lim = (*lim).min(*size);
                self.set_attr(base, *ino, |a| a.size = *size);
            }
            LogOp::SetAttr { ino, mode } => {
                self.set_attr(base, *ino, |a| a.mode = *mode);
            }
        }
    }
}

/// A delta read on top of its base.
pub struct Layered<'a, B: View + ?Sized> {
    pub base: &'a B,
    pub delta: &'a Delta,
}

impl<'a, B: View + ?Sized> Layered<'a, B> {
    pub fn new(base: &'a B, delta: &'a Delta) -> Self {
        Layered { base, delta }
    }
}

impl<B: View + ?Sized> View for Layered<'_, B> {
    fn inode(&self, ino: Ino) -> Option<InodeAttr> {
        match self.delta.inodes.get(&ino) {
            Some(a) => a.clone(),
            None => self.base.inode(ino),
        }
    }

    fn dirent(&self, dir: Ino, name: &str) -> Option<Ino> {
        match self.delta.dirents.get(&(dir, name.to_string())) {
            Some(x) => *x,
            None => self.base.dirent(dir, name),
        }
    }

    fn entries(&self, dir: Ino) -> Vec<(String, Ino)> {
        let mut m: BTreeMap<String, Ino> = self.base.entries(dir).into_iter().collect();
        for ((_, name), v) in self
            .delta
            .dirents
            .range((dir, String::new())..)
            .take_while(|((d, _), _)| *d == dir)
        {
            match v {
                Some(i) => {
                    m.insert(name.clone(), *i);
                }
                None => {
                    m.remove(name);
                }
            }
        }
        m.into_iter().collect()
    }

    fn block(&self, ino: Ino, blk: u64) -> Option<Vec<u8>> {
        if let Some(b) = self.delta.blocks.get(&(ino, blk)) {
            return b.clone();
        }
        let lim = self.delta.base_limit.get(&ino).copied().unwrap_or(u64::MAX);
        if lim <= blk * BLOCK {
            return None;
        }
        let mut b = self.base.block(ino, blk)?;
        if lim < (blk + 1) * BLOCK {
            b[(lim - blk * BLOCK) as usize..].fill(0);
        }
        Some(b)
    }
}

/// Read `len` bytes of a file through a view, clamped to its size.
pub fn read_range<V: View + ?Sized>(v: &V, ino: Ino, offset: u64, len: u64) -> Vec<u8> {
    let size = v.inode(ino).map_or(0, |a| a.size);
    if offset >= size {
        return Vec::new();
    }
    let end = (offset + len).min(size);
    let mut out = Vec::with_capacity((end - offset) as usize);
    let mut pos = offset;
    while pos < end {
        let blk = pos / BLOCK;
        let within = (pos % BLOCK) as usize;
        let n = ((BLOCK as usize) - within).min((end - pos) as usize);
        match v.block(ino, blk) {
            Some(b) => out.extend_from_slice(&b[within..within + n]),
            None => out.extend(std::iter::repeat_n(0, n)),
        }
        pos += n as u64;
    }
    out
}

/// Whether `uid` may apply `op`, judged against `v` before the op.
pub fn permitted<V: View + ?Sized>(v: &V, uid: u32, op: &LogOp) -> Result<(), Errno> {
    if uid == 0 {
        return Ok(());
    }
    let need = |ino: Ino, bit: u32| -> Result<(), Errno> {
        match v.inode(ino) {
            Some(a) if a.allows(uid, bit) => Ok(()),
            Some(_) => Err(Errno::EACCES),
            None => Ok(()),
        }
    };
    match op {
        LogOp::Write { ino, .. } | LogOp::Truncate { ino, .. } => need(*ino, PERM_W),
        LogOp::Create { parent, .. } | LogOp::Mkdir { parent, .. } => need(*parent, PERM_W),
        LogOp::Unlink { parent, .. } => need(*parent, PERM_W),
        LogOp::Rename {
            src_parent,
            dst_parent,
            ..
        } => {
            need(*src_parent, PERM_W)?;
            need(*dst_parent, PERM_W)
        }
        LogOp::SetAttr { ino, .. } => match v.inode(*ino) {
            Some(a) if a.uid != uid => Err(Errno::EACCES),
            _ => Ok(()),
        },
    }
}

/// A plain in-memory state, used as an empty base and in tests.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MemState {
    pub inodes: BTreeMap<Ino, InodeAttr>,
    pub dirs: BTreeMap<Ino, BTreeMap<String, Ino>>,
    pub blocks: BTreeMap<(Ino, u64), Vec<u8>>,
}

impl MemState {
    pub fn with_root(root: Ino) -> Self {
        let mut s = MemState::default();
        s.inodes.insert(
            root,
            InodeAttr {
                kind: FileKind::Dir,
                mode: 0o755,
                uid: 0,
                size: 0,
            },
        );
        s.dirs.insert(root, BTreeMap::new());
        s
    }

    /// Fold a delta into this state.
    pub fn merge(&mut self, d: &Delta) {
        for (ino, lim) in &d.base_limit {
            let keep = lim.div_ceil(BLOCK);
            let dead: Vec<(Ino, u64)> = self
                .blocks
                .range((*ino, keep)..=(*ino, u64::MAX))
                .map(|(k, _)| *k)
                .collect();
            for k in dead {
                self.blocks.remove(&k);
            }
            if lim % BLOCK != 0 {
                if let Some(b) = self.blocks.get_mut(&(*ino, lim / BLOCK)) {
                    b[(lim % BLOCK) as usize..].fill(0);
                }
            }
        }
        for (ino, a) in &d.inodes {
            match a {
                Some(a) => {
                    if a.is_dir() {
                        self.dirs.entry(*ino).or_default();
                    }
                    self.inodes.insert(*ino, a.clone());
                }
                None => {
                    self.inodes.remove(ino);
                    self.dirs.remove(ino);
                }
            }
        }
        for ((dir, name), v) in &d.dirents {
            match v {
                Some(i) => {
                    self.dirs.entry(*dir).or_default().insert(name.clone(), *i);
                }
                None => {
                    if let Some(m) = self.dirs.get_mut(dir) {
                        m.remove(name);
                    }
                }
            }
        }
        for (k, b) in &d.blocks {
            match b {
                Some(b) => {
                    self.blocks.insert(*k, b.clone());
                }
                None => {
                    self.blocks.remove(k);
                }
            }
        }
    }
}

impl View for MemState {
    fn inode(&self, ino: Ino) -> Option<InodeAttr> {
        self.inodes.get(&ino).cloned()
    }

    fn dirent(&self, dir: Ino, name: &str) -> Option<Ino> {
        self.dirs.get(&dir).and_then(|m| m.get(name)).copied()
    }

    fn entries(&self, dir: Ino) -> Vec<(String, Ino)> {
        self.dirs
            .get(&dir)
            .map(|m| m.iter().map(|(k, v)| (k.clone(), *v)).collect())
            .unwrap_or_default()
    }

    fn block(&self, ino: Ino, blk: u64) -> Option<Vec<u8>> {
        self.blocks.get(&(ino, blk)).cloned()
    }
}
