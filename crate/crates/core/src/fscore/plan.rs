//! Turning a POSIX call into log operations.
//!
//! `plan` resolves a path against a view (the shared area under the
//! process's own overlay), decides the return value and emits the log
//! operations that implement it. Error precedence follows [`ModelFs`]
//! exactly, which the planner-vs-model property test pins down.
//!
//! [`ModelFs`]: crate::posix::ModelFs

use crate::ids::{Ino, ROOT_INO};
use crate::kernfs::state::{InodeAttr, View, PERM_R, PERM_W};
use crate::oplog::{split_write, LogOp};
use crate::posix::{components, Errno, FileKind, FsOp, FsRet, DEFAULT_DIR_MODE, DEFAULT_FILE_MODE};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Plan {
    /// Finished: return `ret` once `ops` are in the log.
    Done { ret: FsRet, ops: Vec<LogOp> },
    /// A read of `len` bytes (already clamped to the file size).
    Read { ino: Ino, offset: u64, len: u64 },
}

impl Plan {
    fn ret(ret: FsRet) -> Self {
        Plan::Done { ret, ops: vec![] }
    }

    fn ops(ops: Vec<LogOp>) -> Self {
        Plan::Done {
            ret: FsRet::Ok,
            ops,
        }
    }
}

type R<T> = Result<T, Errno>;

fn lookup<V: View + ?Sized>(v: &V, comps: &[String]) -> R<Ino> {
    let mut cur = ROOT_INO;
    for c in comps {
        match v.inode(cur) {
            Some(a) if a.is_dir() => cur = v.dirent(cur, c).ok_or(Errno::ENOENT)?,
            Some(_) => return Err(Errno::ENOTDIR),
            None => return Err(Errno::ENOENT),
        }
    }
    Ok(cur)
}

fn attr<V: View + ?Sized>(v: &V, ino: Ino) -> R<InodeAttr> {
    v.inode(ino).ok_or(Errno::ENOENT)
}

fn parent_of<V: View + ?Sized>(v: &V, comps: &[String]) -> R<(Ino, String)> {
    let Some((name, dir)) = comps.split_last() else {
        return Err(Errno::EINVAL);
    };
    let p = lookup(v, dir)?;
    match v.inode(p) {
        Some(a) if a.is_dir() => Ok((p, name.clone())),
        _ => Err(Errno::ENOTDIR),
    }
}

fn protected(comps: &[String]) -> bool {
    comps.len() <= 1
}

fn require<V: View + ?Sized>(v: &V, uid: u32, ino: Ino, bit: u32) -> R<()> {
    if attr(v, ino)?.allows(uid, bit) {
        Ok(())
    } else {
        Err(Errno::EACCES)
    }
}

/// Plan `op` for `uid` against `v`. `alloc` hands out fresh inode numbers.
pub fn plan<V: View + ?Sized>(v: &V, uid: u32, op: &FsOp, alloc: &mut dyn FnMut() -> Ino) -> Plan {
    match plan_inner(v, uid, op, alloc) {
        Ok(p) => p,
        Err(e) => Plan::ret(FsRet::Err(e)),
    }
}

fn plan_inner<V: View + ?Sized>(
    v: &V,
    uid: u32,
    op: &FsOp,
    alloc: &mut dyn FnMut() -> Ino,
) -> R<Plan> {
    match op {
        FsOp::Create { path } | FsOp::Mkdir { path } => {
            let comps = components(path)?;
            if protected(&comps) {
                return Err(if comps.is_empty() || lookup(v, &comps).is_ok() {
                    Errno::EEXIST
                } else {
                    Errno::EACCES
                });
            }
            let (parent, name) = parent_of(v, &comps)?;
            if v.dirent(parent, &name).is_some() {
                return Err(Errno::EEXIST);
            }
            require(v, uid, parent, PERM_W)?;
            let ino = alloc();
            Ok(Plan::ops(vec![if matches!(op, FsOp::Create { .. }) {
                LogOp::Create {
                    parent,
                    name,
                    ino,
                    mode: DEFAULT_FILE_MODE,
                    uid,
                }
            } else {
                LogOp::Mkdir {
                    parent,
                    name,
                    ino,
                    mode: DEFAULT_DIR_MODE,
                    uid,
                }
            }]))
        }
        FsOp::Write { path, offset, data } => {
            let ino = lookup(v, &components(path)?)?;
            let a = attr(v, ino)?;
            if a.is_dir() {
                return Err(Errno::EISDIR);
            }
            require(v, uid, ino, PERM_W)?;
            if data.is_empty() {
                return Ok(Plan::ret(FsRet::Ok));
            }
            Ok(Plan::ops(split_write(ino, *offset, data)))
        }
        FsOp::Read { path, offset, len } => {
            let ino = lookup(v, &components(path)?)?;
            let a = attr(v, ino)?;
            if a.is_dir() {
                return Err(Errno::EISDIR);
            }
            require(v, uid, ino, PERM_R)?;
            let start = (*offset).min(a.size);
            let end = offset.saturating_add(*len).min(a.size);
            Ok(Plan::Read {
                ino,
                offset: start,
                len: end - start,
            })
        }
        FsOp::Truncate { path, size } => {
            let ino = lookup(v, &components(path)?)?;
            let a = attr(v, ino)?;
            if a.is_dir() {
                return Err(Errno::EISDIR);
            }
            require(v, uid, ino, PERM_W)?;
            Ok(Plan::ops(vec![LogOp::Truncate { ino, size: *size }]))
        }
        FsOp::Unlink { path } | FsOp::Rmdir { path } => {
            let comps = components(path)?;
            if protected(&comps) {
                return Err(if lookup(v, &comps).is_ok() {
                    Errno::EACCES
                } else {
                    Errno::ENOENT
                });
            }
            let (parent, name) = parent_of(v, &comps)?;
            let ino = v.dirent(parent, &name).ok_or(Errno::ENOENT)?;
            let a = attr(v, ino)?;
            if matches!(op, FsOp::Unlink { .. }) {
                if a.is_dir() {
                    return Err(Errno::EISDIR);
                }
            } else if !a.is_dir() {
                return Err(Errno::ENOTDIR);
            } else if !v.entries(ino).is_empty() {
                return Err(Errno::ENOTEMPTY);
            }
            require(v, uid, parent, PERM_W)?;
            Ok(Plan::ops(vec![LogOp::Unlink { parent, name, ino }]))
        }
        FsOp::Rename { from, to } => {
            let fc = components(from)?;
            let tc = components(to)?;
            if protected(&fc) || protected(&tc) {
                return Err(if lookup(v, &fc).is_err() {
                    Errno::ENOENT
                } else {
                    Errno::EACCES
                });
            }
            if fc[0] != tc[0] {
                lookup(v, &fc)?;
                return Err(Errno::EXDEV);
            }
            let (sp, sname) = parent_of(v, &fc)?;
            let src = v.dirent(sp, &sname).ok_or(Errno::ENOENT)?;
            let (dp, dname) = parent_of(v, &tc)?;
            if fc == tc {
                return Ok(Plan::ret(FsRet::Ok));
            }
            let src_is_dir = attr(v, src)?.is_dir();
            if src_is_dir && tc.starts_with(&fc) {
                return Err(Errno::EINVAL);
            }
            let replaced = v.dirent(dp, &dname);
            if let Some(dst) = replaced {
                let d = attr(v, dst)?;
                match (d.kind, src_is_dir) {
                    (FileKind::Dir, false) => return Err(Errno::EISDIR),
                    (FileKind::File, true) => return Err(Errno::ENOTDIR),
                    (FileKind::Dir, true) if !v.entries(dst).is_empty() => {
                        return Err(Errno::ENOTEMPTY)
                    }
                    _ => {}
                }
            }
            require(v, uid, sp, PERM_W)?;
            require(v, uid, dp, PERM_W)?;
            Ok(Plan::ops(vec![LogOp::Rename {
                src_parent: sp,
                src_name: sname,
                dst_parent: dp,
                dst_name: dname,
                ino: src,
                replaced,
            }]))
        }
        FsOp::Readdir { path } => {
            let ino = lookup(v, &components(path)?)?;
            if !attr(v, ino)?.is_dir() {
                return Err(Errno::ENOTDIR);
            }
            require(v, uid, ino, PERM_R)?;
            Ok(Plan::ret(FsRet::Names(
                v.entries(ino).into_iter().map(|(n, _)| n).collect(),
            )))
        }
        FsOp::Stat { path } => {
            let ino = lookup(v, &components(path)?)?;
            let a = attr(v, ino)?;
            Ok(Plan::ret(FsRet::Stat {
                kind: a.kind,
                size: if a.is_dir() { 0 } else { a.size },
                mode: a.mode,
            }))
        }
        FsOp::Chmod { path, mode } => {
            let comps = components(path)?;
            let ino = lookup(v, &comps)?;
            if protected(&comps) {
                return Err(Errno::EACCES);
            }
            Ok(Plan::ops(vec![LogOp::SetAttr {
                ino,
                mode: *mode & 0o7777,
            }]))
        }
        FsOp::Fsync { path } => {
            lookup(v, &components(path)?)?;
            Ok(Plan::ret(FsRet::Ok))
        }
        FsOp::Dsync => Ok(Plan::ret(FsRet::Ok)),
    }
}

/// Inodes a path walk visits, root first, stopping at the first missing
/// component. Used to validate stale inodes before planning.
pub fn walk_inodes<V: View + ?Sized>(v: &V, path: &str) -> Vec<Ino> {
    let mut out = vec![ROOT_INO];
    let Ok(comps) = components(path) else {
        return out;
    };
    let mut cur = ROOT_INO;
    for c in &comps {
        match v.inode(cur) {
            Some(a) if a.is_dir() => match v.dirent(cur, c) {
                Some(n) => {
                    out.push(n);
                    cur = n;
                }
                None => break,
            },
            _ => break,
        }
    }
    out
}

/// Paths an operation resolves.
pub fn op_paths(op: &FsOp) -> Vec<&str> {
    match op {
        FsOp::Create { path }
        | FsOp::Mkdir { path }
        | FsOp::Write { path, .. }
        | FsOp::Read { path, .. }
        | FsOp::Truncate { path, .. }
        | FsOp::Unlink { path }
        | FsOp::Rmdir { path }
        | FsOp::Readdir { path }
        | FsOp::Stat { path }
        | FsOp::Chmod { path, .. }
        | FsOp::Fsync { path } => vec![path.as_str()],
        FsOp::Rename { from, to } => vec![from.as_str(), to.as_str()],
        FsOp::Dsync => vec![],
    }
}
