//! The POSIX subset exposed to applications and its sequential
//! specification.
//!
//! [`ModelFs`] is a deliberately naive in-memory file system. It is the
//! single executable definition of what each operation should return and
//! is shared by the linearizability checker, the prefix oracle and the
//! unit tests of the real LibFS.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[allow(clippy::upper_case_acronyms)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Errno {
    ENOENT,
    EEXIST,
    EACCES,
    ENOSPC,
    ENOTDIR,
    EISDIR,
    ENOTEMPTY,
    EINVAL,
    EXDEV,
    EBADF,
}

impl fmt::Display for Errno {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FileKind {
    File,
    Dir,
}

/// Path-level operations. Each one is atomic from the caller's view:
/// the LibFS opens, operates and closes internally.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum FsOp {
    Create {
        path: String,
    },
    Mkdir {
        path: String,
    },
    Write {
        path: String,
        offset: u64,
        data: Vec<u8>,
    },
    Read {
        path: String,
        offset: u64,
        len: u64,
    },
    Truncate {
        path: String,
        size: u64,
    },
    Unlink {
        path: String,
    },
    Rmdir {
        path: String,
    },
    Rename {
        from: String,
        to: String,
    },
    Readdir {
        path: String,
    },
    Stat {
        path: String,
    },
    Chmod {
        path: String,
        mode: u32,
    },
    Fsync {
        path: String,
    },
    Dsync,
}

impl FsOp {
    pub fn is_mutation(&self) -> bool {
        !matches!(
            self,
            FsOp::Read { .. }
                | FsOp::Readdir { .. }
                | FsOp::Stat { .. }
                | FsOp::Fsync { .. }
                | FsOp::Dsync
        )
    }

    pub fn is_sync(&self) -> bool {
        matches!(self, FsOp::Fsync { .. } | FsOp::Dsync)
    }

    pub fn name(&self) -> &'static str {
        match self {
            FsOp::Create { .. } => "create",
            FsOp::Mkdir { .. } => "mkdir",
            FsOp::Write { .. } => "write",
            FsOp::Read { .. } => "read",
            FsOp::Truncate { .. } => "truncate",
            FsOp::Unlink { .. } => "unlink",
            FsOp::Rmdir { .. } => "rmdir",
            FsOp::Rename { .. } => "rename",
            FsOp::Readdir { .. } => "readdir",
            FsOp::Stat { .. } => "stat",
            FsOp::Chmod { .. } => "chmod",
            FsOp::Fsync { .. } => "fsync",
            FsOp::Dsync => "dsync",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FsRet {
    Ok,
    Data(Vec<u8>),
    Names(Vec<String>),
    Stat {
        kind: FileKind,
        size: u64,
        mode: u32,
    },
    Err(Errno),
}

/// Split an absolute path into components. `/` yields an empty list.
pub fn components(path: &str) -> Result<Vec<String>, Errno> {
    if !path.starts_with('/') {
        return Err(Errno::EINVAL);
    }
    let mut out = Vec::new();
    for c in path.split('/') {
        match c {
            "" => continue,
            "." | ".." => return Err(Errno::EINVAL),
            c => out.push(c.to_string()),
        }
    }
    Ok(out)
}

pub fn join(comps: &[String]) -> String {
    if comps.is_empty() {
        "/".to_string()
    } else {
        comps.iter().fold(String::new(), |mut s, c| {
            s.push('/');
            s.push_str(c);
            s
        })
    }
}

/// Canonical, inode-free snapshot of a namespace.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FsTree {
    pub entries: BTreeMap<String, TreeNode>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum TreeNode {
    Dir { mode: u32 },
    File { mode: u32, data: Vec<u8> },
}

impl FsTree {
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (p, n) in &self.entries {
            h.update(p.as_bytes());
            match n {
                TreeNode::Dir { mode } => {
                    h.update(b"\0d");
                    h.update(mode.to_le_bytes());
                }
                TreeNode::File { mode, data } => {
                    h.update(b"\0f");
                    h.update(mode.to_le_bytes());
                    h.update((data.len() as u64).to_le_bytes());
                    h.update(data);
                }
            }
        }
        hex::encode(h.finalize())
    }

    /// First path whose contents differ, for diagnostics.
    pub fn first_difference(&self, other: &FsTree) -> Option<String> {
        let keys: BTreeSet<&String> = self.entries.keys().chain(other.entries.keys()).collect();
        keys.into_iter()
            .find(|k| self.entries.get(*k) != other.entries.get(*k))
            .cloned()
    }
}

pub const DEFAULT_FILE_MODE: u32 = 0o644;
pub const DEFAULT_DIR_MODE: u32 = 0o755;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum MNode {
    File {
        data: Vec<u8>,
        mode: u32,
    },
    Dir {
        entries: BTreeMap<String, u64>,
        mode: u32,
    },
}

/// Sequential reference file system.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ModelFs {
    nodes: BTreeMap<u64, MNode>,
    next: u64,
    /// Mount points: their directory entries in the root are fixed.
    mounts: BTreeSet<String>,
}

impl Default for ModelFs {
    fn default() -> Self {
        Self::new()
    }
}

impl ModelFs {
    pub fn new() -> Self {
        let mut nodes = BTreeMap::new();
        nodes.insert(
            1,
            MNode::Dir {
                entries: BTreeMap::new(),
                mode: DEFAULT_DIR_MODE,
            },
        );
        ModelFs {
            nodes,
            next: 2,
            mounts: BTreeSet::new(),
        }
    }

    /// A model whose root holds the given top-level mount points. The root
    /// and the mount points themselves cannot be created, removed or
    /// renamed through operations.
    pub fn with_mounts<S: AsRef<str>>(mounts: &[S]) -> Self {
        let mut fs = ModelFs::new();
        for m in mounts {
            let m = m.as_ref();
            let comps = components(m).expect("mount point must be absolute");
            assert_eq!(comps.len(), 1, "mount points are top-level directories");
            let ino = fs.alloc(MNode::Dir {
                entries: BTreeMap::new(),
                mode: 0o777,
            });
            if let Some(MNode::Dir { entries, .. }) = fs.nodes.get_mut(&1) {
                entries.insert(comps[0].clone(), ino);
            }
            fs.mounts.insert(m.to_string());
        }
        fs
    }

    fn alloc(&mut self, n: MNode) -> u64 {
        let i = self.next;
        self.next += 1;
        self.nodes.insert(i, n);
        i
    }

    fn lookup(&self, comps: &[String]) -> Result<u64, Errno> {
        let mut cur = 1u64;
        for c in comps {
            match self.nodes.get(&cur) {
                Some(MNode::Dir { entries, .. }) => {
                    cur = *entries.get(c).ok_or(Errno::ENOENT)?;
                }
                Some(MNode::File { .. }) => return Err(Errno::ENOTDIR),
                None => return Err(Errno::ENOENT),
            }
        }
        Ok(cur)
    }

    fn parent_of(&self, comps: &[String]) -> Result<(u64, String), Errno> {
        let Some((name, dir)) = comps.split_last() else {
            return Err(Errno::EINVAL);
        };
        let p = self.lookup(dir)?;
        match self.nodes.get(&p) {
            Some(MNode::Dir { .. }) => Ok((p, name.clone())),
            _ => Err(Errno::ENOTDIR),
        }
    }

    fn protected(&self, comps: &[String]) -> bool {
        comps.len() <= 1
    }

    fn entries_mut(&mut self, dir: u64) -> &mut BTreeMap<String, u64> {
        match self.nodes.get_mut(&dir) {
            Some(MNode::Dir { entries, .. }) => entries,
            _ => unreachable!("parent checked to be a directory"),
        }
    }

    /// Every process acts as the owner of every inode it can see, so only
    /// the owner bits matter. Mount points are 0o777.
    fn require(&self, ino: u64, bit: u32) -> Result<(), Errno> {
        let mode = match self.nodes.get(&ino) {
            Some(MNode::File { mode, .. }) | Some(MNode::Dir { mode, .. }) => *mode,
            None => return Err(Errno::ENOENT),
        };
        if mode & (bit << 6) != 0 {
            Ok(())
        } else {
            Err(Errno::EACCES)
        }
    }

    fn remove_tree(&mut self, ino: u64) {
        if let Some(MNode::Dir { entries, .. }) = self.nodes.remove(&ino) {
            for (_, c) in entries {
                self.remove_tree(c);
            }
        }
    }

    pub fn apply(&mut self, op: &FsOp) -> FsRet {
        match self.apply_inner(op) {
            Ok(r) => r,
            Err(e) => FsRet::Err(e),
        }
    }

    fn apply_inner(&mut self, op: &FsOp) -> Result<FsRet, Errno> {
        match op {
            FsOp::Create { path } | FsOp::Mkdir { path } => {
                let comps = components(path)?;
                if self.protected(&comps) {
                    return Err(if comps.is_empty() || self.lookup(&comps).is_ok() {
                        Errno::EEXIST
                    } else {
                        Errno::EACCES
                    });
                }
                let (parent, name) = self.parent_of(&comps)?;
                if self.entries_mut(parent).contains_key(&name) {
                    return Err(Errno::EEXIST);
                }
                self.require(parent, 2)?;
                let node = if matches!(op, FsOp::Create { .. }) {
                    MNode::File {
                        data: Vec::new(),
                        mode: DEFAULT_FILE_MODE,
                    }
                } else {
                    MNode::Dir {
                        entries: BTreeMap::new(),
                        mode: DEFAULT_DIR_MODE,
                    }
                };
                let ino = self.alloc(node);
                self.entries_mut(parent).insert(name, ino);
                Ok(FsRet::Ok)
            }
            FsOp::Write { path, offset, data } => {
                let ino = self.lookup(&components(path)?)?;
                if matches!(self.nodes.get(&ino), Some(MNode::File { .. })) {
                    self.require(ino, 2)?;
                }
                match self.nodes.get_mut(&ino) {
                    Some(MNode::File { data: d, .. }) => {
                        if data.is_empty() {
                            return Ok(FsRet::Ok);
                        }
                        let end = (*offset as usize) + data.len();
                        if d.len() < end {
                            d.resize(end, 0);
                        }
                        d[*offset as usize..end].copy_from_slice(data);
                        Ok(FsRet::Ok)
                    }
                    _ => Err(Errno::EISDIR),
                }
            }
            FsOp::Read { path, offset, len } => {
                let ino = self.lookup(&components(path)?)?;
                match self.nodes.get(&ino) {
                    Some(MNode::File { data, .. }) => {
                        self.require(ino, 4)?;
                        let start = (*offset as usize).min(data.len());
                        let end = (*offset as usize + *len as usize).min(data.len());
                        Ok(FsRet::Data(data[start..end].to_vec()))
                    }
                    _ => Err(Errno::EISDIR),
                }
            }
            FsOp::Truncate { path, size } => {
                let ino = self.lookup(&components(path)?)?;
                if matches!(self.nodes.get(&ino), Some(MNode::File { .. })) {
                    self.require(ino, 2)?;
                }
                match self.nodes.get_mut(&ino) {
                    Some(MNode::File { data, .. }) => {
                        data.resize(*size as usize, 0);
                        Ok(FsRet::Ok)
                    }
                    _ => Err(Errno::EISDIR),
                }
            }
            FsOp::Unlink { path } => {
                let comps = components(path)?;
                if self.protected(&comps) {
                    return Err(if self.lookup(&comps).is_ok() {
                        Errno::EACCES
                    } else {
                        Errno::ENOENT
                    });
                }
                let (parent, name) = self.parent_of(&comps)?;
                let ino = *self.entries_mut(parent).get(&name).ok_or(Errno::ENOENT)?;
                if matches!(self.nodes.get(&ino), Some(MNode::Dir { .. })) {
                    return Err(Errno::EISDIR);
                }
                self.require(parent, 2)?;
                self.entries_mut(parent).remove(&name);
                self.nodes.remove(&ino);
                Ok(FsRet::Ok)
            }
            FsOp::Rmdir { path } => {
                let comps = components(path)?;
                if self.protected(&comps) {
                    return Err(if self.lookup(&comps).is_ok() {
                        Errno::EACCES
                    } else {
                        Errno::ENOENT
                    });
                }
                let (parent, name) = self.parent_of(&comps)?;
                let ino = *self.entries_mut(parent).get(&name).ok_or(Errno::ENOENT)?;
                match self.nodes.get(&ino) {
                    Some(MNode::Dir { entries, .. }) if entries.is_empty() => {}
                    Some(MNode::Dir { .. }) => return Err(Errno::ENOTEMPTY),
                    _ => return Err(Errno::ENOTDIR),
                }
                self.require(parent, 2)?;
                self.entries_mut(parent).remove(&name);
                self.nodes.remove(&ino);
                Ok(FsRet::Ok)
            }
            FsOp::Rename { from, to } => self.rename(from, to).map(|_| FsRet::Ok),
            FsOp::Readdir { path } => {
                let ino = self.lookup(&components(path)?)?;
                match self.nodes.get(&ino) {
                    Some(MNode::Dir { entries, .. }) => {
                        self.require(ino, 4)?;
                        Ok(FsRet::Names(entries.keys().cloned().collect()))
                    }
                    _ => Err(Errno::ENOTDIR),
                }
            }
            FsOp::Stat { path } => {
                let ino = self.lookup(&components(path)?)?;
                Ok(match &self.nodes[&ino] {
                    MNode::File { data, mode } => FsRet::Stat {
                        kind: FileKind::File,
                        size: data.len() as u64,
                        mode: *mode,
                    },
                    MNode::Dir { mode, .. } => FsRet::Stat {
                        kind: FileKind::Dir,
                        size: 0,
                        mode: *mode,
                    },
                })
            }
            FsOp::Chmod { path, mode } => {
                let comps = components(path)?;
                let ino = self.lookup(&comps)?;
                if self.protected(&comps) {
                    return Err(Errno::EACCES);
                }
                match self.nodes.get_mut(&ino) {
                    Some(MNode::File { mode: m, .. }) | Some(MNode::Dir { mode: m, .. }) => {
                        *m = *mode & 0o7777
                    }
                    None => return Err(Errno::ENOENT),
                }
                Ok(FsRet::Ok)
            }
            FsOp::Fsync { path } => {
                self.lookup(&components(path)?)?;
                Ok(FsRet::Ok)
            }
            FsOp::Dsync => Ok(FsRet::Ok),
        }
    }

    fn rename(&mut self, from: &str, to: &str) -> Result<(), Errno> {
        let fc = components(from)?;
        let tc = components(to)?;
        if self.protected(&fc) || self.protected(&tc) {
            return Err(if self.lookup(&fc).is_err() {
                Errno::ENOENT
            } else {
                Errno::EACCES
            });
        }
        if fc[0] != tc[0] {
            self.lookup(&fc)?;
            return Err(Errno::EXDEV);
        }
        let (sp, sname) = self.parent_of(&fc)?;
        let src = *self.entries_mut(sp).get(&sname).ok_or(Errno::ENOENT)?;
        let (dp, dname) = self.parent_of(&tc)?;
        if fc == tc {
            return Ok(());
        }
        let src_is_dir = matches!(self.nodes.get(&src), Some(MNode::Dir { .. }));
        if src_is_dir && tc.starts_with(&fc) {
            return Err(Errno::EINVAL);
        }
        if let Some(&dst) = self.entries_mut(dp).get(&dname) {
            match (&self.nodes[&dst], src_is_dir) {
                (MNode::Dir { .. }, false) => return Err(Errno::EISDIR),
                (MNode::File { .. }, true) => return Err(Errno::ENOTDIR),
                (MNode::Dir { entries, .. }, true) if !entries.is_empty() => {
                    return Err(Errno::ENOTEMPTY)
                }
                _ => {}
            }
        }
        self.require(sp, 2)?;
        self.require(dp, 2)?;
        if let Some(&dst) = self.entries_mut(dp).get(&dname) {
            self.remove_tree(dst);
        }
        self.entries_mut(sp).remove(&sname);
        self.entries_mut(dp).insert(dname, src);
        Ok(())
    }

    pub fn tree(&self) -> FsTree {
        let mut t = FsTree::default();
        self.walk(1, &mut Vec::new(), &mut t);
        t
    }

    fn walk(&self, ino: u64, path: &mut Vec<String>, out: &mut FsTree) {
        match &self.nodes[&ino] {
            MNode::Dir { entries, mode } => {
                out.entries
                    .insert(join(path), TreeNode::Dir { mode: *mode });
                for (name, child) in entries {
                    path.push(name.clone());
                    self.walk(*child, path, out);
                    path.pop();
                }
            }
            MNode::File { data, mode } => {
                out.entries.insert(
                    join(path),
                    TreeNode::File {
                        mode: *mode,
                        data: data.clone(),
                    },
                );
            }
        }
    }

    pub fn state_hash(&self) -> String {
        self.tree().hash()
    }
}
