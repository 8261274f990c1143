//! The per-node shared area: namespace, extent map and tiered block
//! storage, made crash consistent by a redo journal.
//!
//! Blocks live in fixed 4 KB slots of three slabs: an NVM slab, an SSD
//! slab of the same size, and a large SSD cold slab. A node's role maps
//! the three cache levels onto slabs:
//!
//! | role     | hot     | warm    | cold |
//! |----------|---------|---------|------|
//! | cache    | NVM     | -       | cold |
//! | reserve  | SSD     | NVM     | cold |
//! | promoted | NVM     | SSD     | cold |
//!
//! Updates never overwrite a live slot. New block contents go to fresh
//! slots, then the metadata records, then a commit record; recovery
//! replays committed groups only and derives slot occupancy from the
//! extent map, so an interrupted group leaves no trace.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fabric::Fabric;
use crate::ids::{Ino, NodeId, RegionId, Seq, ROOT_INO};
use crate::media::{Access, Tier};
use crate::posix::{join, Errno, FileKind, FsTree, TreeNode};
use crate::simnet::Endpoint;
use crate::time::SimTime;

use super::journal::Journal;
use super::state::{read_range, Delta, InodeAttr, Layered, View, BLOCK};

pub const SLAB_NVM: u8 = 0;
pub const SLAB_SSD: u8 = 1;
pub const SLAB_COLD: u8 = 2;

/// Migration starts above this fraction of a level and stops below the
/// low mark.
pub const HIGH_WATER: f64 = 0.9;
pub const LOW_WATER: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Loc {
    pub slab: u8,
    pub slot: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Cache,
    Reserve,
    Promoted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Hot,
    Warm,
    Cold,
}

impl Role {
    pub fn slab(self, level: Level) -> Option<u8> {
        match (self, level) {
            (_, Level::Cold) => Some(SLAB_COLD),
            (Role::Cache, Level::Hot) | (Role::Promoted, Level::Hot) => Some(SLAB_NVM),
            (Role::Cache, Level::Warm) => None,
            (Role::Reserve, Level::Hot) => Some(SLAB_SSD),
            (Role::Reserve, Level::Warm) => Some(SLAB_NVM),
            (Role::Promoted, Level::Warm) => Some(SLAB_SSD),
        }
    }

    pub fn level(self, slab: u8) -> Level {
        [Level::Hot, Level::Warm, Level::Cold]
            .into_iter()
            .find(|l| self.slab(*l) == Some(slab))
            .unwrap_or(Level::Cold)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Watermark {
    pub seq: Seq,
    pub pos: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "k", rename_all = "snake_case")]
pub enum Rec {
    Inode {
        ino: Ino,
        attr: Option<InodeAttr>,
    },
    Dirent {
        dir: Ino,
        name: String,
        child: Option<Ino>,
    },
    Map {
        ino: Ino,
        blk: u64,
        loc: Option<Loc>,
    },
    Invalid {
        ino: Ino,
        on: bool,
    },
    Bits {
        epoch: u64,
        inos: Vec<Ino>,
    },
    DropEpochs {
        below: u64,
    },
    Watermark {
        log: u64,
        seq: Seq,
        pos: u64,
    },
    Role {
        role: Role,
    },
    Commit,
    Abort,
}

/// Durable regions backing one node's shared area.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AreaLayout {
    pub journal: RegionId,
    pub journal_capacity: u64,
    pub slabs: [RegionId; 3],
    pub slots: [u64; 3],
}

impl AreaLayout {
    pub fn alloc(fab: &mut Fabric, node: NodeId, hot_bytes: u64, cold_bytes: u64) -> Result<Self> {
        let journal_capacity = 1u64 << 40;
        let journal = fab.media.alloc(node, Tier::Nvm, journal_capacity, None)?;
        let nvm = fab.media.alloc(node, Tier::Nvm, hot_bytes, None)?;
        let ssd = fab.media.alloc(node, Tier::Ssd, hot_bytes, None)?;
        let cold = fab.media.alloc(node, Tier::Ssd, cold_bytes, None)?;
        Ok(AreaLayout {
            journal,
            journal_capacity,
            slabs: [nvm, ssd, cold],
            slots: [hot_bytes / BLOCK, hot_bytes / BLOCK, cold_bytes / BLOCK],
        })
    }
}

#[derive(Debug, Clone, Default)]
struct Slab {
    slots: u64,
    next: u64,
    free: BTreeSet<u64>,
}

impl Slab {
    fn used(&self) -> u64 {
        self.next - self.free.len() as u64
    }

    fn alloc(&mut self) -> Option<u64> {
        if let Some(s) = self.free.pop_first() {
            return Some(s);
        }
        if self.next < self.slots {
            self.next += 1;
            return Some(self.next - 1);
        }
        None
    }

    fn take(&mut self, slot: u64) {
        if slot >= self.next {
            self.free.extend(self.next..slot);
            self.next = slot + 1;
        } else {
            self.free.remove(&slot);
        }
    }

    fn release(&mut self, slot: u64) {
        if slot < self.next {
            self.free.insert(slot);
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AreaStats {
    pub commits: u64,
    pub digests: u64,
    pub digested_entries: u64,
    pub migrated_blocks: u64,
    pub promoted_blocks: u64,
}

/// A pending atomic update.
#[derive(Debug, Default)]
pub struct Txn {
    pub data: Vec<(Loc, Vec<u8>)>,
    pub recs: Vec<Rec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DigestReport {
    pub applied: usize,
    pub blocks: usize,
    pub touched: BTreeSet<Ino>,
}

#[derive(Debug, Clone)]
pub struct SharedArea {
    pub node: NodeId,
    pub layout: AreaLayout,
    pub role: Role,
    pub journal: Journal,
    pub inodes: BTreeMap<Ino, InodeAttr>,
    pub dirs: BTreeMap<Ino, BTreeMap<String, Ino>>,
    pub extents: BTreeMap<(Ino, u64), Loc>,
    pub invalid: BTreeSet<Ino>,
    pub bitmaps: BTreeMap<u64, BTreeSet<Ino>>,
    pub watermarks: BTreeMap<u64, Watermark>,
    pub stats: AreaStats,
    slabs: [Slab; 3],
    lru: [BTreeMap<u64, (Ino, u64)>; 3],
    ticks: BTreeMap<(Ino, u64), u64>,
    tick: u64,
}

impl View for SharedArea {
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

    fn block(&self, _ino: Ino, _blk: u64) -> Option<Vec<u8>> {
        // Needs media access; see `BlockView`.
        None
    }
}

/// A shared area paired with the media holding its blocks.
pub struct BlockView<'a> {
    pub area: &'a SharedArea,
    pub fab: &'a Fabric,
}

impl View for BlockView<'_> {
    fn inode(&self, ino: Ino) -> Option<InodeAttr> {
        self.area.inode(ino)
    }
    fn dirent(&self, dir: Ino, name: &str) -> Option<Ino> {
        self.area.dirent(dir, name)
    }
    fn entries(&self, dir: Ino) -> Vec<(String, Ino)> {
        self.area.entries(dir)
    }
    fn block(&self, ino: Ino, blk: u64) -> Option<Vec<u8>> {
        self.area.peek_block(self.fab, ino, blk)
    }
}

impl SharedArea {
    fn empty(node: NodeId, layout: AreaLayout) -> Self {
        let mut slabs: [Slab; 3] = Default::default();
        for (i, s) in slabs.iter_mut().enumerate() {
            s.slots = layout.slots[i];
        }
        SharedArea {
            node,
            layout,
            role: Role::Cache,
            journal: Journal::new(layout.journal),
            inodes: BTreeMap::new(),
            dirs: BTreeMap::new(),
            extents: BTreeMap::new(),
            invalid: BTreeSet::new(),
            bitmaps: BTreeMap::new(),
            watermarks: BTreeMap::new(),
            stats: AreaStats::default(),
            slabs,
            lru: Default::default(),
            ticks: BTreeMap::new(),
            tick: 0,
        }
    }

    fn me(&self) -> Endpoint {
        Endpoint::kernfs(self.node)
    }

    /// Write a fresh area holding the root and the given mount points.
    pub fn format(
        fab: &mut Fabric,
        node: NodeId,
        layout: AreaLayout,
        role: Role,
        mounts: &[(String, Ino)],
        t: SimTime,
    ) -> Result<(SharedArea, SimTime)> {
        let mut a = SharedArea::empty(node, layout);
        let mut txn = Txn::default();
        txn.recs.push(Rec::Role { role });
        txn.recs.push(Rec::Inode {
            ino: ROOT_INO,
            attr: Some(InodeAttr {
                kind: FileKind::Dir,
                mode: crate::posix::DEFAULT_DIR_MODE,
                uid: 0,
                size: 0,
            }),
        });
        for (name, ino) in mounts {
            txn.recs.push(Rec::Inode {
                ino: *ino,
                attr: Some(InodeAttr {
                    kind: FileKind::Dir,
                    mode: 0o777,
                    uid: 0,
                    size: 0,
                }),
            });
            txn.recs.push(Rec::Dirent {
                dir: ROOT_INO,
                name: name.trim_start_matches('/').to_string(),
                child: Some(*ino),
            });
        }
        let t = a.commit(fab, txn, t)?;
        Ok((a, t))
    }

    /// Rebuild from the durable journal. The second value is true when an
    /// uncommitted tail was found; `seal` must then run before new
    /// records are appended.
    pub fn recover(fab: &Fabric, node: NodeId, layout: AreaLayout) -> (SharedArea, bool) {
        let mut a = SharedArea::empty(node, layout);
        let (j, recs) = Journal::scan::<Rec, _>(layout.journal, layout.journal_capacity, |o, l| {
            fab.peek(layout.journal, o, l)
                .unwrap_or_else(|_| vec![0; l])
        });
        a.journal = j;
        let mut group = Vec::new();
        for r in recs {
            match r {
                Rec::Commit => {
                    for g in group.drain(..) {
                        a.apply_rec(g);
                    }
                }
                Rec::Abort => group.clear(),
                other => group.push(other),
            }
        }
        (a, !group.is_empty())
    }

    /// Void an uncommitted tail left by a crash.
    pub fn seal(&mut self, fab: &mut Fabric, t: SimTime) -> Result<SimTime> {
        let me = self.me();
        self.journal.append(fab, me, &Rec::Abort, t, Access::Kernel)
    }

    fn apply_rec(&mut self, r: Rec) {
        match r {
            Rec::Inode { ino, attr } => match attr {
                Some(a) => {
                    if a.is_dir() {
                        self.dirs.entry(ino).or_default();
                    }
                    self.inodes.insert(ino, a);
                }
                None => {
                    self.inodes.remove(&ino);
                    self.dirs.remove(&ino);
                }
            },
            Rec::Dirent { dir, name, child } => match child {
                Some(c) => {
                    self.dirs.entry(dir).or_default().insert(name, c);
                }
                None => {
                    if let Some(m) = self.dirs.get_mut(&dir) {
                        m.remove(&name);
                    }
                }
            },
            Rec::Map { ino, blk, loc } => {
                let old = match loc {
                    Some(l) => {
                        self.slabs[l.slab as usize].take(l.slot);
                        self.extents.insert((ino, blk), l)
                    }
                    None => self.extents.remove(&(ino, blk)),
                };
                if let Some(o) = old {
                    if Some(o) != loc {
                        self.slabs[o.slab as usize].release(o.slot);
                    }
                    if let Some(t) = self.ticks.remove(&(ino, blk)) {
                        self.lru[o.slab as usize].remove(&t);
                    }
                }
                if let Some(l) = loc {
                    self.touch_at(l.slab, ino, blk);
                }
            }
            Rec::Invalid { ino, on } => {
                if on {
                    self.invalid.insert(ino);
                } else {
                    self.invalid.remove(&ino);
                }
            }
            Rec::Bits { epoch, inos } => {
                self.bitmaps.entry(epoch).or_default().extend(inos);
            }
            Rec::DropEpochs { below } => {
                self.bitmaps = self.bitmaps.split_off(&below);
            }
            Rec::Watermark { log, seq, pos } => {
                self.watermarks.insert(log, Watermark { seq, pos });
            }
            Rec::Role { role } => self.role = role,
            Rec::Commit | Rec::Abort => {}
        }
    }

    fn touch_at(&mut self, slab: u8, ino: Ino, blk: u64) {
        self.tick += 1;
        if let Some(old) = self.ticks.insert((ino, blk), self.tick) {
            self.lru[slab as usize].remove(&old);
        }
        self.lru[slab as usize].insert(self.tick, (ino, blk));
    }

    /// Mark a block as recently used.
    pub fn touch(&mut self, ino: Ino, blk: u64) {
        if let Some(l) = self.extents.get(&(ino, blk)).copied() {
            self.touch_at(l.slab, ino, blk);
        }
    }

    /// Durably apply `txn`: data first, then records, then the commit.
    pub fn commit(&mut self, fab: &mut Fabric, txn: Txn, t: SimTime) -> Result<SimTime> {
        let me = self.me();
        let mut t = t;
        for (loc, data) in &txn.data {
            let region = self.layout.slabs[loc.slab as usize];
            t = fab.write(me, region, loc.slot * BLOCK, data, t, Access::Kernel)?;
        }
        for r in &txn.recs {
            t = self.journal.append(fab, me, r, t, Access::Kernel)?;
        }
        t = self
            .journal
            .append(fab, me, &Rec::Commit, t, Access::Kernel)?;
        for r in txn.recs {
            self.apply_rec(r);
        }
        self.stats.commits += 1;
        Ok(t)
    }

    pub fn level_used(&self, level: Level) -> Option<(u64, u64)> {
        let s = &self.slabs[self.role.slab(level)? as usize];
        Some((s.used(), s.slots))
    }

    fn alloc_in(&mut self, level: Level) -> Result<Loc> {
        let slab = self.role.slab(level).ok_or(Error::Posix(Errno::ENOSPC))?;
        let slot = self.slabs[slab as usize]
            .alloc()
            .ok_or(Error::Posix(Errno::ENOSPC))?;
        Ok(Loc { slab, slot })
    }

    fn next_level(&self, level: Level) -> Option<Level> {
        match level {
            Level::Hot if self.role.slab(Level::Warm).is_some() => Some(Level::Warm),
            Level::Hot | Level::Warm => Some(Level::Cold),
            Level::Cold => None,
        }
    }

    /// Move least recently used blocks out of `level` until at most
    /// `target` slots are in use.
    fn spill(
        &mut self,
        fab: &mut Fabric,
        level: Level,
        target: u64,
        t: SimTime,
    ) -> Result<SimTime> {
        let Some(slab) = self.role.slab(level) else {
            return Ok(t);
        };
        let Some(to) = self.next_level(level) else {
            return Err(Error::Posix(Errno::ENOSPC));
        };
        let used = self.slabs[slab as usize].used();
        if used <= target {
            return Ok(t);
        }
        let victims: Vec<(Ino, u64)> = self.lru[slab as usize]
            .values()
            .take((used - target) as usize)
            .copied()
            .collect();
        if victims.is_empty() {
            return Ok(t);
        }
        let me = self.me();
        let mut t = t;
        let mut txn = Txn::default();
        for (ino, blk) in &victims {
            let from = self.extents[&(*ino, *blk)];
            let (data, t2) = fab.read(
                me,
                self.layout.slabs[from.slab as usize],
                from.slot * BLOCK,
                BLOCK as usize,
                t,
                Access::Kernel,
            )?;
            t = t2;
            let loc = self.alloc_in(to)?;
            txn.data.push((loc, data));
            txn.recs.push(Rec::Map {
                ino: *ino,
                blk: *blk,
                loc: Some(loc),
            });
        }
        self.stats.migrated_blocks += victims.len() as u64;
        let t = self.commit(fab, txn, t)?;
        // A spill into a full warm level cascades.
        if to != Level::Cold {
            return self.migrate_level(fab, to, t);
        }
        Ok(t)
    }

    fn migrate_level(&mut self, fab: &mut Fabric, level: Level, t: SimTime) -> Result<SimTime> {
        let Some((used, slots)) = self.level_used(level) else {
            return Ok(t);
        };
        if (used as f64) <= slots as f64 * HIGH_WATER {
            return Ok(t);
        }
        let target = (slots as f64 * LOW_WATER) as u64;
        self.spill(fab, level, target, t)
    }

    /// LRU migration of every level above its high-water mark.
    pub fn migrate(&mut self, fab: &mut Fabric, t: SimTime) -> Result<SimTime> {
        let t = self.migrate_level(fab, Level::Hot, t)?;
        self.migrate_level(fab, Level::Warm, t)
    }

    /// Make room for `n` new blocks in the hot level.
    fn reserve_hot(&mut self, fab: &mut Fabric, n: u64, t: SimTime) -> Result<SimTime> {
        let (used, slots) = self.level_used(Level::Hot).unwrap_or((0, 0));
        if n > slots {
            return Err(Error::Posix(Errno::ENOSPC));
        }
        if used + n <= slots {
            return Ok(t);
        }
        self.spill(fab, Level::Hot, slots - n, t)
    }

    pub fn loc(&self, ino: Ino, blk: u64) -> Option<Loc> {
        self.extents.get(&(ino, blk)).copied()
    }

    pub fn level_of(&self, loc: Loc) -> Level {
        self.role.level(loc.slab)
    }

    pub fn slab_tier(&self, fab: &Fabric, slab: u8) -> Tier {
        fab.media
            .region(self.layout.slabs[slab as usize])
            .map(|r| r.tier)
            .unwrap_or(Tier::Ssd)
    }

    /// Untimed block read for oracles and views.
    pub fn peek_block(&self, fab: &Fabric, ino: Ino, blk: u64) -> Option<Vec<u8>> {
        let l = self.loc(ino, blk)?;
        fab.peek(
            self.layout.slabs[l.slab as usize],
            l.slot * BLOCK,
            BLOCK as usize,
        )
        .ok()
    }

    /// Timed block read by `actor`; returns the data, completion time and
    /// the level it came from.
    pub fn read_block(
        &mut self,
        fab: &mut Fabric,
        actor: Endpoint,
        ino: Ino,
        blk: u64,
        t: SimTime,
        access: Access,
    ) -> Result<Option<(Vec<u8>, SimTime, Level)>> {
        let Some(l) = self.loc(ino, blk) else {
            return Ok(None);
        };
        let (d, t) = fab.read(
            actor,
            self.layout.slabs[l.slab as usize],
            l.slot * BLOCK,
            BLOCK as usize,
            t,
            access,
        )?;
        self.touch_at(l.slab, ino, blk);
        Ok(Some((d, t, self.level_of(l))))
    }

    /// Copy a block into the hot level.
    pub fn promote(
        &mut self,
        fab: &mut Fabric,
        ino: Ino,
        blk: u64,
        data: Vec<u8>,
        t: SimTime,
    ) -> Result<SimTime> {
        if self
            .loc(ino, blk)
            .is_none_or(|l| self.level_of(l) == Level::Hot)
        {
            return Ok(t);
        }
        let t = self.reserve_hot(fab, 1, t)?;
        let loc = self.alloc_in(Level::Hot)?;
        let txn = Txn {
            data: vec![(loc, data)],
            recs: vec![Rec::Map {
                ino,
                blk,
                loc: Some(loc),
            }],
        };
        self.stats.promoted_blocks += 1;
        let t = self.commit(fab, txn, t)?;
        self.migrate(fab, t)
    }

    pub fn watermark(&self, log: u64) -> Watermark {
        self.watermarks
            .get(&log)
            .cloned()
            .unwrap_or(Watermark { seq: 0, pos: 0 })
    }

    /// Turn a delta into an atomic update.
    fn txn_for(&mut self, fab: &mut Fabric, d: &Delta, t: SimTime) -> Result<(Txn, SimTime)> {
        let new_blocks = d.blocks.values().filter(|b| b.is_some()).count() as u64;
        let t = self.reserve_hot(fab, new_blocks, t)?;
        let mut txn = Txn::default();
        for (ino, a) in &d.inodes {
            txn.recs.push(Rec::Inode {
                ino: *ino,
                attr: a.clone(),
            });
        }
        for ((dir, name), c) in &d.dirents {
            txn.recs.push(Rec::Dirent {
                dir: *dir,
                name: name.clone(),
                child: *c,
            });
        }
        // Extents dropped by deletion or truncation.
        for (ino, lim) in &d.base_limit {
            let keep = if d.inodes.get(ino) == Some(&None) {
                0
            } else {
                lim.div_ceil(BLOCK)
            };
            for ((_, blk), _) in self.extents.range((*ino, keep)..=(*ino, u64::MAX)) {
                if !d.blocks.contains_key(&(*ino, *blk)) {
                    txn.recs.push(Rec::Map {
                        ino: *ino,
                        blk: *blk,
                        loc: None,
                    });
                }
            }
        }
        for (ino, a) in &d.inodes {
            if a.is_none() && !d.base_limit.contains_key(ino) {
                for ((_, blk), _) in self.extents.range((*ino, 0)..=(*ino, u64::MAX)) {
                    txn.recs.push(Rec::Map {
                        ino: *ino,
                        blk: *blk,
                        loc: None,
                    });
                }
            }
        }
        for ((ino, blk), b) in &d.blocks {
            let Some(b) = b else { continue };
            let loc = self.alloc_in(Level::Hot)?;
            txn.data.push((loc, b.clone()));
            txn.recs.push(Rec::Map {
                ino: *ino,
                blk: *blk,
                loc: Some(loc),
            });
        }
        Ok((txn, t))
    }

    /// Apply log entries atomically. Entries at or below the log's
    /// watermark are skipped, which makes re-digesting harmless.
    #[allow(clippy::too_many_arguments)]
    pub fn digest(
        &mut self,
        fab: &mut Fabric,
        log: u64,
        entries: &[crate::oplog::LiveEntry],
        end_pos: u64,
        uid: u32,
        epoch: u64,
        t: SimTime,
    ) -> Result<(DigestReport, SimTime)> {
        let wm = self.watermark(log);
        let todo: Vec<&crate::oplog::LiveEntry> =
            entries.iter().filter(|e| e.entry.seq > wm.seq).collect();
        let mut report = DigestReport::default();
        let Some(last) = todo.last() else {
            return Ok((report, t));
        };
        let last_seq = last.entry.seq;
        let mut delta = Delta::default();
        // Stale inodes on a rejoined node make every inode an entry
        // touches stale too; the peer copy fetched later is authoritative.
        let mut taint: BTreeSet<Ino> = BTreeSet::new();
        {
            let base = BlockView { area: self, fab };
            for e in &todo {
                let touched = e.entry.op.touched();
                if touched
                    .iter()
                    .any(|i| self.invalid.contains(i) || taint.contains(i))
                {
                    taint.extend(touched);
                } else {
                    let view = Layered::new(&base, &delta);
                    super::state::permitted(&view, uid, &e.entry.op)
                        .map_err(|_| Error::PermissionDenied)?;
                }
                delta.apply(&base, &e.entry.op);
            }
        }
        report.applied = todo.len();
        report.blocks = delta.blocks.len();
        report.touched = delta.touched();
        let t = t + fab.lat.digest_batch_ns;
        let (mut txn, t) = self.txn_for(fab, &delta, t)?;
        for i in taint.difference(&self.invalid) {
            txn.recs.push(Rec::Invalid { ino: *i, on: true });
        }
        txn.recs.push(Rec::Bits {
            epoch,
            inos: report.touched.iter().copied().collect(),
        });
        txn.recs.push(Rec::Watermark {
            log,
            seq: last_seq,
            pos: end_pos,
        });
        let t = self.commit(fab, txn, t)?;
        self.stats.digests += 1;
        self.stats.digested_entries += report.applied as u64;
        let t = self.migrate(fab, t)?;
        Ok((report, t))
    }

    /// Record the watermark of a log without applying anything (used when
    /// a replica joins a log mid-stream).
    pub fn set_watermark(
        &mut self,
        fab: &mut Fabric,
        log: u64,
        seq: Seq,
        pos: u64,
        t: SimTime,
    ) -> Result<SimTime> {
        let txn = Txn {
            data: vec![],
            recs: vec![Rec::Watermark { log, seq, pos }],
        };
        self.commit(fab, txn, t)
    }

    pub fn set_role(&mut self, fab: &mut Fabric, role: Role, t: SimTime) -> Result<SimTime> {
        if self.role == role {
            return Ok(t);
        }
        let txn = Txn {
            data: vec![],
            recs: vec![Rec::Role { role }],
        };
        self.commit(fab, txn, t)
    }

    /// Flag inodes as stale; reads must refetch them from a peer.
    pub fn invalidate(
        &mut self,
        fab: &mut Fabric,
        inos: &BTreeSet<Ino>,
        t: SimTime,
    ) -> Result<SimTime> {
        if inos.is_empty() {
            return Ok(t);
        }
        let txn = Txn {
            data: vec![],
            recs: inos
                .iter()
                .map(|i| Rec::Invalid { ino: *i, on: true })
                .collect(),
        };
        self.commit(fab, txn, t)
    }

    pub fn drop_epochs(&mut self, fab: &mut Fabric, below: u64, t: SimTime) -> Result<SimTime> {
        if self.bitmaps.range(..below).next().is_none() {
            return Ok(t);
        }
        let txn = Txn {
            data: vec![],
            recs: vec![Rec::DropEpochs { below }],
        };
        self.commit(fab, txn, t)
    }

    /// Replace the local copy of an inode with a peer's copy and clear its
    /// invalid flag. `None` means the inode no longer exists.
    pub fn install(
        &mut self,
        fab: &mut Fabric,
        ino: Ino,
        copy: Option<InodeCopy>,
        t: SimTime,
    ) -> Result<SimTime> {
        let mut txn = Txn::default();
        let mut t = t;
        let old_entries: BTreeMap<String, Ino> = self.dirs.get(&ino).cloned().unwrap_or_default();
        let old_blocks: Vec<u64> = self
            .extents
            .range((ino, 0)..=(ino, u64::MAX))
            .map(|((_, b), _)| *b)
            .collect();
        match copy {
            None => {
                txn.recs.push(Rec::Inode { ino, attr: None });
                for b in old_blocks {
                    txn.recs.push(Rec::Map {
                        ino,
                        blk: b,
                        loc: None,
                    });
                }
            }
            Some(c) => {
                txn.recs.push(Rec::Inode {
                    ino,
                    attr: Some(c.attr.clone()),
                });
                for (name, child) in &old_entries {
                    if c.entries.get(name) != Some(child) {
                        txn.recs.push(Rec::Dirent {
                            dir: ino,
                            name: name.clone(),
                            child: None,
                        });
                    }
                }
                for (name, child) in &c.entries {
                    if old_entries.get(name) != Some(child) {
                        txn.recs.push(Rec::Dirent {
                            dir: ino,
                            name: name.clone(),
                            child: Some(*child),
                        });
                    }
                }
                for b in old_blocks {
                    if !c.blocks.contains_key(&b) {
                        txn.recs.push(Rec::Map {
                            ino,
                            blk: b,
                            loc: None,
                        });
                    }
                }
                t = self.reserve_hot(fab, c.blocks.len() as u64, t)?;
                for (b, data) in c.blocks {
                    let loc = self.alloc_in(Level::Hot)?;
                    txn.data.push((loc, data));
                    txn.recs.push(Rec::Map {
                        ino,
                        blk: b,
                        loc: Some(loc),
                    });
                }
            }
        }
        txn.recs.push(Rec::Invalid { ino, on: false });
        let t = self.commit(fab, txn, t)?;
        self.migrate(fab, t)
    }

    /// Everything a peer needs to rebuild one inode.
    pub fn copy_of(&self, fab: &Fabric, ino: Ino) -> Option<InodeCopy> {
        let attr = self.inodes.get(&ino)?.clone();
        let entries = self.dirs.get(&ino).cloned().unwrap_or_default();
        let blocks = self
            .extents
            .range((ino, 0)..=(ino, u64::MAX))
            .filter_map(|((_, b), _)| Some((*b, self.peek_block(fab, ino, *b)?)))
            .collect();
        Some(InodeCopy {
            attr,
            entries,
            blocks,
        })
    }

    /// Namespace below the given mount points, as seen from the root.
    pub fn tree(&self, fab: &Fabric, mounts: &[String]) -> FsTree {
        let view = BlockView { area: self, fab };
        let mut t = FsTree::default();
        t.entries.insert(
            "/".into(),
            TreeNode::Dir {
                mode: crate::posix::DEFAULT_DIR_MODE,
            },
        );
        for m in mounts {
            let name = m.trim_start_matches('/');
            if let Some(ino) = self.dirent(ROOT_INO, name) {
                walk(&view, ino, &mut vec![name.to_string()], &mut t);
            }
        }
        t
    }

    /// Hash of the namespace below `mounts`, inode numbers and owners
    /// included. Placement across tiers does not contribute.
    pub fn state_hash(&self, fab: &Fabric, mounts: &[String]) -> String {
        let view = BlockView { area: self, fab };
        let mut h = Sha256::new();
        for m in mounts {
            let name = m.trim_start_matches('/');
            if let Some(ino) = self.dirent(ROOT_INO, name) {
                hash_walk(&view, ino, m, &mut h);
            }
        }
        hex::encode(h.finalize())
    }

    /// Blocks per level, for provenance and capacity reporting.
    pub fn blocks_per_level(&self) -> BTreeMap<Level, u64> {
        let mut m = BTreeMap::new();
        for l in self.extents.values() {
            *m.entry(self.level_of(*l)).or_insert(0) += 1;
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InodeCopy {
    pub attr: InodeAttr,
    pub entries: BTreeMap<String, Ino>,
    pub blocks: BTreeMap<u64, Vec<u8>>,
}

impl InodeCopy {
    pub fn bytes(&self) -> u64 {
        64 + self.entries.keys().map(|k| k.len() as u64 + 8).sum::<u64>()
            + self.blocks.len() as u64 * BLOCK
    }
}

fn walk<V: View>(v: &V, ino: Ino, path: &mut Vec<String>, out: &mut FsTree) {
    let Some(a) = v.inode(ino) else { return };
    match a.kind {
        FileKind::Dir => {
            out.entries
                .insert(join(path), TreeNode::Dir { mode: a.mode });
            for (name, child) in v.entries(ino) {
                path.push(name);
                walk(v, child, path, out);
                path.pop();
            }
        }
        FileKind::File => {
            let data = read_range(v, ino, 0, a.size);
            out.entries
                .insert(join(path), TreeNode::File { mode: a.mode, data });
        }
    }
}

fn hash_walk<V: View>(v: &V, ino: Ino, path: &str, h: &mut Sha256) {
    let Some(a) = v.inode(ino) else {
        h.update(format!("dangling {path} {ino}\n"));
        return;
    };
    h.update(format!(
        "{path}\t{ino}\t{:?}\t{:o}\t{}\t{}\n",
        a.kind, a.mode, a.uid, a.size
    ));
    match a.kind {
        FileKind::Dir => {
            for (name, child) in v.entries(ino) {
                hash_walk(v, child, &format!("{path}/{name}"), h);
            }
        }
        FileKind::File => h.update(read_range(v, ino, 0, a.size)),
    }
}
