//! LibFS process state and the POSIX call path.
//!
//! A call acquires its leases, refreshes stale inodes on the path, plans
//! against the shared area under the private overlay, and either reads
//! (overlay, DRAM cache, shared area, reserve replica, SSD, in that
//! order) or appends one transaction to the update log.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::coherence::{required, Lease};
use crate::config::Mode;
use crate::error::{Error, Result};
use crate::ids::{Ino, LeaseId, NodeId, ProcId};
use crate::kernfs::shared::BlockView;
use crate::kernfs::state::{Delta, Layered, BLOCK};
use crate::media::{Access, Tier};
use crate::oplog::{LogOp, UpdateLog};
use crate::posix::{components, Errno, FsOp, FsRet};
use crate::simnet::{Endpoint, Tag};
use crate::time::SimTime;
use crate::world::World;

use super::cache::ReadCache;
use super::plan::{op_paths, plan, walk_inodes, Plan};

/// Blocks read ahead into the DRAM cache after an SSD miss.
pub const PREFETCH_BLOCKS: u64 = 64;

/// Where a block read was served from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    PrivateLog,
    DramCache,
    LocalHot,
    ReserveNvm,
    LocalCold,
    RemoteNvm,
}

impl Provenance {
    pub fn name(self) -> &'static str {
        match self {
            Provenance::PrivateLog => "private_log",
            Provenance::DramCache => "dram_cache",
            Provenance::LocalHot => "local_hot",
            Provenance::ReserveNvm => "reserve_nvm",
            Provenance::LocalCold => "local_cold",
            Provenance::RemoteNvm => "remote_nvm",
        }
    }
}

#[derive(Debug, Clone)]
pub struct LibFs {
    pub pid: ProcId,
    pub node: NodeId,
    pub chain: usize,
    pub uid: u32,
    pub log: UpdateLog,
    /// Effect of the undigested log on top of the shared area.
    pub overlay: Delta,
    pub cache: ReadCache,
    pub held: BTreeMap<LeaseId, Lease>,
    /// Earliest time of the next step.
    pub clock: SimTime,
    pub script: VecDeque<FsOp>,
    /// History index of the call in progress.
    pub current: Option<usize>,
    pub issued: usize,
    pub completed: usize,
    /// Completed calls known to be replicated on the whole chain.
    pub durable_upto: usize,
    pub alive: bool,
    pub stuck: bool,
    pub pending_release: bool,
    pub next_ino: u32,
}

impl LibFs {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        pid: ProcId,
        node: NodeId,
        chain: usize,
        uid: u32,
        log: UpdateLog,
        cache: ReadCache,
        clock: SimTime,
        ops: Vec<FsOp>,
    ) -> Self {
        LibFs {
            pid,
            node,
            chain,
            uid,
            log,
            overlay: Delta::default(),
            cache,
            held: BTreeMap::new(),
            clock,
            script: ops.into(),
            current: None,
            issued: 0,
            completed: 0,
            durable_upto: 0,
            alive: true,
            stuck: false,
            pending_release: false,
            next_ino: 1,
        }
    }

    pub fn me(&self) -> Endpoint {
        Endpoint::libfs(self.node, self.pid)
    }

    pub fn idle(&self) -> bool {
        self.current.is_none() && self.script.is_empty()
    }
}

type Block = (Option<Vec<u8>>, Option<Provenance>, SimTime);

impl World {
    /// Run one call for `pid`, recorded at history index `h`.
    pub(crate) fn exec(
        &mut self,
        pid: ProcId,
        h: usize,
        op: &FsOp,
        t0: SimTime,
    ) -> Result<(FsRet, Vec<Provenance>, SimTime)> {
        let (node, chain) = {
            let p = self.proc(pid)?;
            (p.node, p.chain)
        };
        let me = Endpoint::libfs(node, pid);
        self.fab.check_actor(me)?;
        let mut t = t0 + self.fab.lat.dram_ns;
        for path in op_paths(op) {
            if let Some(c) = self.cfg.chain_of_path(path) {
                if c != chain {
                    self.history[h].exec = Some(self.next_exec());
                    return Ok((FsRet::Err(Errno::EXDEV), vec![], t));
                }
            }
        }
        for r in required(op) {
            t = self.acquire(pid, &r, t)?;
        }
        t = self.validate_paths(pid, op, t)?;
        let depth: usize = op_paths(op)
            .iter()
            .map(|p| components(p).map_or(0, |c| c.len()))
            .sum();
        t += self.fab.lat.dram_ns * depth as u64;
        let uid = self.cfg.uid;
        let planned = {
            let k = self.nodes.get(&node).ok_or(Error::NodeCrashed(node))?;
            let base = BlockView {
                area: &k.area,
                fab: &self.fab,
            };
            let p = self.procs.get_mut(&pid).expect("process exists");
            let view = Layered::new(&base, &p.overlay);
            let next = &mut p.next_ino;
            let mut alloc = || {
                let i = Ino::for_process(pid, *next);
                *next += 1;
                i
            };
            plan(&view, uid, op, &mut alloc)
        };
        self.history[h].exec = Some(self.next_exec());
        match planned {
            Plan::Read { ino, offset, len } => {
                let (data, prov, t) = self.read_data(pid, ino, offset, len, t)?;
                Ok((FsRet::Data(data), prov, t))
            }
            Plan::Done { ret, ops } => {
                if !ops.is_empty() {
                    match self.append_ops(pid, ops, t)? {
                        Some(t2) => t = t2,
                        None => return Ok((FsRet::Err(Errno::ENOSPC), vec![], t)),
                    }
                }
                let sync = match op {
                    FsOp::Fsync { .. } => self.cfg.mode == Mode::Pessimistic,
                    FsOp::Dsync => true,
                    _ => false,
                };
                if sync && ret == FsRet::Ok {
                    t = self.replicate(pid, t)?;
                }
                Ok((ret, vec![], t))
            }
        }
    }

    /// Refresh invalid inodes on the paths of `op` from a peer replica.
    fn validate_paths(&mut self, pid: ProcId, op: &FsOp, t: SimTime) -> Result<SimTime> {
        let node = self.proc(pid)?.node;
        let mut t = t;
        for _ in 0..32 {
            let stale: Vec<Ino> = {
                let k = self.kernfs(node)?;
                if k.area.invalid.is_empty() {
                    return Ok(t);
                }
                let base = BlockView {
                    area: &k.area,
                    fab: &self.fab,
                };
                let view = Layered::new(&base, &self.procs[&pid].overlay);
                let mut s = BTreeSet::new();
                for path in op_paths(op) {
                    s.extend(
                        walk_inodes(&view, path)
                            .into_iter()
                            .filter(|i| k.area.invalid.contains(i)),
                    );
                }
                s.into_iter().collect()
            };
            if stale.is_empty() {
                return Ok(t);
            }
            for ino in stale {
                t = self.refetch(node, ino, t)?;
            }
        }
        Err(Error::ChainUnavailable("stale path does not settle".into()))
    }

    /// Chain serving an inode, from the process namespace it was
    /// allocated in.
    pub fn chain_of_ino(&self, ino: Ino) -> Option<usize> {
        let pid = (ino.0 >> 32) as u32;
        let counter = (ino.0 & 0xffff_ffff) as u32;
        if pid == 0 {
            let m = self.mounts();
            let i = counter.checked_sub(2)? as usize;
            return self.cfg.chain_of_mount(m.get(i)?);
        }
        self.logs.get(&(pid as u64)).map(|l| l.chain)
    }

    /// Replace `node`'s copy of `ino` with a valid peer's.
    pub(crate) fn refetch(&mut self, node: NodeId, ino: Ino, t: SimTime) -> Result<SimTime> {
        let chain = self
            .chain_of_ino(ino)
            .ok_or_else(|| Error::Corrupt(format!("inode {ino} has no chain")))?;
        let peer = self
            .replicas_of(chain)
            .into_iter()
            .filter(|n| *n != node && self.fab.node_up(*n))
            .find(|n| !self.nodes[n].area.invalid.contains(&ino))
            .ok_or_else(|| Error::ChainUnavailable(format!("no valid copy of {ino}")))?;
        let me = Endpoint::kernfs(node);
        let src = Endpoint::kernfs(peer);
        let t = self.fab.request(me, src, 64, Tag::ReadFetch, t)?;
        let copy = self.nodes[&peer].area.copy_of(&self.fab, ino);
        let size = copy.as_ref().map_or(64, |c| c.bytes());
        let t = self.fab.reply(src, me, size, Tag::ReadFill, t)?;
        let k = self.nodes.get_mut(&node).ok_or(Error::NodeCrashed(node))?;
        let t = k.area.install(&mut self.fab, ino, copy, t)?;
        self.refetched.insert(ino);
        self.metrics.refetched_inodes += 1;
        self.drop_cached(&[node], &[ino].into_iter().collect());
        Ok(t)
    }

    /// Forget cached blocks of `inos` in every process on `nodes`.
    pub(crate) fn drop_cached(&mut self, nodes: &[NodeId], inos: &BTreeSet<Ino>) {
        if inos.is_empty() {
            return;
        }
        for p in self.procs.values_mut().filter(|p| nodes.contains(&p.node)) {
            p.cache.drop_inodes(inos);
        }
    }

    fn read_data(
        &mut self,
        pid: ProcId,
        ino: Ino,
        offset: u64,
        len: u64,
        t: SimTime,
    ) -> Result<(Vec<u8>, Vec<Provenance>, SimTime)> {
        let mut out = Vec::with_capacity(len as usize);
        let mut prov = Vec::new();
        let mut t = t;
        if len == 0 {
            return Ok((out, prov, t));
        }
        let end = offset + len;
        for blk in offset / BLOCK..end.div_ceil(BLOCK) {
            let (b, p, t2) = self.read_block(pid, ino, blk, t)?;
            t = t2;
            prov.extend(p);
            let lo = offset.max(blk * BLOCK) - blk * BLOCK;
            let hi = end.min((blk + 1) * BLOCK) - blk * BLOCK;
            match b {
                Some(b) => out.extend_from_slice(&b[lo as usize..hi as usize]),
                None => out.extend(std::iter::repeat_n(0u8, (hi - lo) as usize)),
            }
        }
        Ok((out, prov, t))
    }

    fn read_block(&mut self, pid: ProcId, ino: Ino, blk: u64, t: SimTime) -> Result<Block> {
        let p = &self.procs[&pid];
        if let Some(b) = p.overlay.blocks.get(&(ino, blk)) {
            let t = t + self.fab.lat.read_ns(Tier::Nvm, Access::Local, BLOCK);
            return Ok((b.clone(), Some(Provenance::PrivateLog), t));
        }
        let lim = p.overlay.base_limit.get(&ino).copied().unwrap_or(u64::MAX);
        if lim <= blk * BLOCK {
            return Ok((None, Some(Provenance::PrivateLog), t + self.fab.lat.dram_ns));
        }
        let (mut b, prov, t) = self.base_block(pid, ino, blk, t)?;
        if let Some(b) = b.as_mut() {
            if lim < (blk + 1) * BLOCK {
                b[(lim - blk * BLOCK) as usize..].fill(0);
            }
        }
        Ok((b, prov, t))
    }

    /// A block of the shared state, without the private overlay.
    fn base_block(&mut self, pid: ProcId, ino: Ino, blk: u64, t: SimTime) -> Result<Block> {
        let (node, chain, me, cache_region) = {
            let p = &self.procs[&pid];
            (p.node, p.chain, p.me(), p.cache.region)
        };
        if let Some(slot) = self.procs.get_mut(&pid).unwrap().cache.lookup(ino, blk) {
            let (d, t) = self.fab.read(
                me,
                cache_region,
                slot * BLOCK,
                BLOCK as usize,
                t,
                Access::Local,
            )?;
            return Ok((Some(d), Some(Provenance::DramCache), t));
        }
        let k = self.nodes.get(&node).ok_or(Error::NodeCrashed(node))?;
        let Some(loc) = k.area.loc(ino, blk) else {
            return Ok((None, None, t));
        };
        if k.area.slab_tier(&self.fab, loc.slab) == Tier::Nvm {
            let k = self.nodes.get_mut(&node).unwrap();
            let (d, t, _) = k
                .area
                .read_block(&mut self.fab, me, ino, blk, t, Access::Local)?
                .expect("mapped block");
            let prov = if self.refetched.contains(&ino) {
                Provenance::RemoteNvm
            } else {
                Provenance::LocalHot
            };
            return Ok((Some(d), Some(prov), t));
        }
        // Cold locally: try the reserve replica's NVM before the SSD.
        if let Some(r) = self.cm.chains[chain].reserve {
            let usable = r != node
                && self.fab.node_up(r)
                && self.nodes.get(&r).is_some_and(|rk| {
                    !rk.area.invalid.contains(&ino)
                        && rk
                            .area
                            .loc(ino, blk)
                            .is_some_and(|l| rk.area.slab_tier(&self.fab, l.slab) == Tier::Nvm)
                });
            if usable {
                let src = Endpoint::kernfs(r);
                let t = self.fab.request(me, src, 64, Tag::ReadFetch, t)?;
                let rk = self.nodes.get_mut(&r).unwrap();
                let (d, t, _) = rk
                    .area
                    .read_block(&mut self.fab, src, ino, blk, t, Access::Kernel)?
                    .expect("mapped block");
                let slot = self.procs.get_mut(&pid).unwrap().cache.insert(ino, blk);
                let t = self.fab.rdma_fill(
                    src,
                    me,
                    cache_region,
                    slot * BLOCK,
                    &d,
                    t,
                    Tag::ReadFill,
                )?;
                return Ok((Some(d), Some(Provenance::ReserveNvm), t));
            }
        }
        let k = self.nodes.get_mut(&node).unwrap();
        let (d, mut t, _) = k
            .area
            .read_block(&mut self.fab, me, ino, blk, t, Access::Kernel)?
            .expect("mapped block");
        let slot = self.procs.get_mut(&pid).unwrap().cache.insert(ino, blk);
        self.fab.volatile(cache_region, slot * BLOCK, &d)?;
        for b in blk + 1..blk + 1 + PREFETCH_BLOCKS {
            let k = self.nodes.get_mut(&node).unwrap();
            let cold = k
                .area
                .loc(ino, b)
                .is_some_and(|l| k.area.slab_tier(&self.fab, l.slab) == Tier::Ssd);
            if !cold || self.procs[&pid].cache.contains(ino, b) {
                break;
            }
            let (pd, t2, _) = k
                .area
                .read_block(&mut self.fab, me, ino, b, t, Access::Kernel)?
                .expect("mapped block");
            t = t2;
            let s = self.procs.get_mut(&pid).unwrap().cache.insert(ino, b);
            self.fab.volatile(cache_region, s * BLOCK, &pd)?;
        }
        let k = self.nodes.get_mut(&node).unwrap();
        let t = k.area.promote(&mut self.fab, ino, blk, d.clone(), t)?;
        Ok((Some(d), Some(Provenance::LocalCold), t))
    }

    /// Append `ops` as one transaction. `None` means the transaction can
    /// never fit in the log.
    fn append_ops(&mut self, pid: ProcId, ops: Vec<LogOp>, t: SimTime) -> Result<Option<SimTime>> {
        let frac = self.cfg.sizes.digest_free_fraction;
        let mut t = t;
        if !self.proc(pid)?.log.can_ever_fit(&ops, frac) {
            return Ok(None);
        }
        if !self.proc(pid)?.log.fits_below(&ops, frac) {
            t = self.chain_evict(pid, t)?;
            self.metrics.threshold_evictions += 1;
            let cap = self.proc(pid)?.log.ring.capacity;
            let max = self.cfg.sizes.auto_resize_max;
            if max > cap {
                let s = &self.cfg.sizes;
                let want = crate::oplog::next_log_size(cap, s.resize_threshold, s.resize_increment)
                    .min(max);
                match self.resize_log(pid, want, t) {
                    Ok(t2) => t = t2,
                    Err(Error::ResizeAborted(why)) => {
                        self.metrics.resize_aborts += 1;
                        self.event(t, format!("resize of {pid} aborted: {why}"));
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        let touched: Vec<Ino> = {
            let mut s = BTreeSet::new();
            for op in &ops {
                s.extend(op.touched());
            }
            s.into_iter().collect()
        };
        let node = self.proc(pid)?.node;
        let me = Endpoint::libfs(node, pid);
        let p = self.procs.get_mut(&pid).unwrap();
        let region = p.log.region;
        let writes = p.log.append_txn(ops.clone());
        let bytes: u64 = writes.iter().map(|(_, b)| b.len() as u64).sum();
        for (off, data) in &writes {
            t = self.fab.write(me, region, *off, data, t, Access::Local)?;
        }
        self.metrics.appended_bytes += bytes;
        let k = self.nodes.get(&node).ok_or(Error::NodeCrashed(node))?;
        let base = BlockView {
            area: &k.area,
            fab: &self.fab,
        };
        let p = self.procs.get_mut(&pid).unwrap();
        for op in &ops {
            p.overlay.apply(&base, op);
        }
        if self.record_appends {
            self.appends.push((t, pid, touched));
        }
        Ok(Some(t))
    }
}
