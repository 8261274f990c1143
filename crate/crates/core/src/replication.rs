//! Chain replication of update logs, chain-wide digest, log recovery and
//! log resizing.
//!
//! Every log has a mirror on each other live member of its chain. The
//! head ships unreplicated entries hop by hop (RDMA write, then a chain
//! step message) and the tail's ack travels back. In pessimistic mode, or
//! with coalescing off, the raw bytes are copied to the same ring
//! offsets. Otherwise the segment is coalesced and written as one batch:
//! only its last entry ends the batch, so a replica sees all of it or
//! none of it.
//!
//! Mirrors share one position space. The last entry of a coalesced
//! segment carries the segment's highest original seq, so "last seq in a
//! mirror" compares across mirrors and against the head's own log.

use crate::config::Mode;
use crate::error::{Error, Result};
use crate::ids::{NodeId, ProcId, RegionId, Seq};
use crate::media::Access;
use crate::oplog::{coalesce, entry, scan, LiveEntry, LogEntry, Ring, Scan, Superblock, UpdateLog};
use crate::simnet::{Endpoint, Tag};
use crate::time::SimTime;
use crate::world::World;

const MSG: u64 = 64;

/// Where entries come from when bringing mirrors up to date.
pub(crate) enum Source {
    Entries(Vec<LiveEntry>),
    Mirror(RegionId),
}

fn remote(e: Error, node: NodeId, t: SimTime, timeout: u64) -> Error {
    match e {
        Error::NodeCrashed(n) if n == node => Error::DstFailed {
            node,
            detected_at: t + timeout,
        },
        other => other,
    }
}

/// Scan a mirror from its holder's watermark.
pub(crate) fn scan_mirror(w: &World, log: u64, host: NodeId, region: RegionId, ring: Ring) -> Scan {
    let wm = w
        .nodes
        .get(&host)
        .map(|k| k.area.watermark(log))
        .unwrap_or(crate::kernfs::shared::Watermark { seq: 0, pos: 0 });
    scan(ring, wm.pos, wm.seq, |o, l| {
        w.fab.peek(region, o, l).unwrap_or_else(|_| vec![0; l])
    })
}

fn last_seq(s: &Scan, floor: Seq) -> Seq {
    s.entries.last().map_or(floor, |e| e.entry.seq)
}

impl World {
    fn mirror_of(&self, log: u64, host: NodeId) -> Result<RegionId> {
        self.mirrors
            .get(&(log, host))
            .copied()
            .ok_or(Error::ReplicaFailed(host))
    }

    /// Ship every unreplicated entry of `pid`'s log down its chain and
    /// wait for the tail's ack.
    pub(crate) fn replicate(&mut self, pid: ProcId, t: SimTime) -> Result<SimTime> {
        let p = self.procs.get(&pid).ok_or(Error::UnknownProcess(pid))?;
        if !p.log.unreplicated() {
            return Ok(t);
        }
        let (node, chain, log_id) = (p.node, p.chain, p.log.id);
        let me = p.me();
        let ring = p.log.ring;
        let members = self.chain_members(chain, node);
        let raw = self.cfg.mode == Mode::Pessimistic || !self.cfg.coalesce;
        let timeout = self.cfg.timeouts.rpc_timeout_ns;
        let mut t = t;
        // Segment to send: (physical writes, new mirror position).
        let (writes, new_mirror_pos) = if raw {
            let (from, to) = (p.log.replicated_pos, p.log.tail_pos);
            let mut w = Vec::new();
            for (off, len) in ring.slices(from, to) {
                let (d, t2) =
                    self.fab
                        .read(me, p.log.region, off, len as usize, t, Access::Local)?;
                t = t2;
                w.push((off, d));
            }
            (w, to)
        } else {
            let seg: Vec<LogEntry> = p
                .log
                .unreplicated_entries()
                .map(|e| e.entry.clone())
                .collect();
            let seg_last = p.log.tail_seq();
            let mut out = coalesce(&seg);
            if out.len() > seg.len() {
                out = seg.clone();
            }
            let n = out.len() as u64;
            for (i, e) in out.iter_mut().enumerate() {
                e.seq = seg_last + 1 + i as u64 - n;
                e.batch_end = i as u64 + 1 == n;
            }
            let items: Vec<(Seq, Vec<u8>)> =
                out.iter().map(|e| (e.seq, entry::encode(e))).collect();
            let (w, end) = ring.layout(p.log.mirror_pos, &items);
            (w, end)
        };
        let bytes: u64 = writes.iter().map(|(_, d)| d.len() as u64).sum();
        let mut prev = me;
        let mut path = Vec::new();
        for m in members.iter().skip(1) {
            let region = self.mirror_of(log_id, *m)?;
            let dst = Endpoint::kernfs(*m);
            for (off, d) in &writes {
                t = self
                    .fab
                    .rdma_write(prev, dst, region, *off, d, t, Tag::SegmentWrite)
                    .map_err(|e| remote(e, *m, t, timeout))?;
            }
            t = self.fab.request(prev, dst, MSG, Tag::ChainStep, t)?;
            path.push((prev, dst));
            prev = dst;
        }
        for (src, dst) in path.into_iter().rev() {
            t = self.fab.reply(dst, src, MSG, Tag::ChainAck, t)?;
        }
        self.metrics.replicated_bytes += bytes * (members.len() as u64 - 1);
        let p = self.procs.get_mut(&pid).unwrap();
        p.log.replicated_seq = p.log.tail_seq();
        p.log.replicated_pos = p.log.tail_pos;
        p.log.mirror_pos = if members.len() > 1 || !raw {
            new_mirror_pos
        } else {
            p.log.tail_pos
        };
        Ok(t)
    }

    /// Replicate, then digest the whole log on every chain member, then
    /// drop it.
    pub(crate) fn chain_evict(&mut self, pid: ProcId, t: SimTime) -> Result<SimTime> {
        let mut t = self.replicate(pid, t)?;
        let p = self.procs.get(&pid).ok_or(Error::UnknownProcess(pid))?;
        if p.log.is_empty() {
            return Ok(t);
        }
        let (node, chain, log_id, ring) = (p.node, p.chain, p.log.id, p.log.ring);
        let me = p.me();
        let live: Vec<LiveEntry> = p.log.live.iter().cloned().collect();
        let tail_pos = p.log.tail_pos;
        let members = self.chain_members(chain, node);
        let uid = self.cfg.uid;
        let epoch = self.cm.epoch;
        let timeout = self.cfg.timeouts.rpc_timeout_ns;
        let mut touched = std::collections::BTreeSet::new();
        let head = Endpoint::kernfs(node);
        t = self.fab.request(me, head, MSG, Tag::Evict, t)?;
        let k = self.nodes.get_mut(&node).ok_or(Error::NodeCrashed(node))?;
        let (rep, t_head) = k
            .area
            .digest(&mut self.fab, log_id, &live, tail_pos, uid, epoch, t)?;
        touched.extend(rep.touched);
        let mut done = t_head;
        let mut prev = head;
        let mut hop_t = t;
        let mut path = Vec::new();
        for m in members.iter().skip(1) {
            let dst = Endpoint::kernfs(*m);
            hop_t = self.fab.request(prev, dst, MSG, Tag::Evict, hop_t)?;
            let region = self.mirror_of(log_id, *m)?;
            let s = scan_mirror(self, log_id, *m, region, ring);
            let k = self.nodes.get_mut(m).ok_or(Error::DstFailed {
                node: *m,
                detected_at: hop_t + timeout,
            })?;
            let (rep, t_m) = k
                .area
                .digest(
                    &mut self.fab,
                    log_id,
                    &s.entries,
                    s.end_pos,
                    uid,
                    epoch,
                    hop_t,
                )
                .map_err(|e| remote(e, *m, hop_t, timeout))?;
            touched.extend(rep.touched);
            done = done.max(t_m);
            path.push((prev, dst, t_m));
            prev = dst;
        }
        let mut ack = done;
        for (src, dst, _) in path.into_iter().rev() {
            ack = self.fab.reply(dst, src, MSG, Tag::EvictAck, ack)?;
        }
        t = self
            .fab
            .reply(head, me, MSG, Tag::EvictAck, ack.max(t_head))?;
        let p = self.procs.get_mut(&pid).unwrap();
        p.log.mark_digested();
        p.overlay.clear();
        let sb = p.log.superblock();
        let region = p.log.region;
        t = self
            .fab
            .write(me, region, 0, &sb.encode(), t, Access::Local)?;
        self.drop_cached(&members, &touched);
        self.metrics.chain_evictions += 1;
        Ok(t)
    }

    /// Bring each target's mirror up to `src` by appending the entries it
    /// lacks. `actor` performs the writes.
    pub(crate) fn sync_mirrors(
        &mut self,
        log: u64,
        src: &Source,
        targets: &[NodeId],
        actor: Endpoint,
        t: SimTime,
    ) -> Result<SimTime> {
        let meta = self.logs[&log].clone();
        let ring = Ring {
            capacity: meta.capacity,
        };
        let source: Vec<LiveEntry> = match src {
            Source::Entries(e) => e.clone(),
            Source::Mirror(r) => {
                let host = self.fab.media.region(*r)?.node;
                scan_mirror(self, log, host, *r, ring).entries
            }
        };
        let timeout = self.cfg.timeouts.rpc_timeout_ns;
        let mut t = t;
        for m in targets {
            let region = self.mirror_of(log, *m)?;
            let s = scan_mirror(self, log, *m, region, ring);
            let wm_seq = self.nodes.get(m).map_or(0, |k| k.area.watermark(log).seq);
            let have = last_seq(&s, wm_seq);
            let missing: Vec<(Seq, Vec<u8>)> = source
                .iter()
                .filter(|e| e.entry.seq > have)
                .map(|e| (e.entry.seq, entry::encode(&e.entry)))
                .collect();
            if missing.is_empty() {
                continue;
            }
            let (writes, _) = ring.layout(s.end_pos, &missing);
            let dst = Endpoint::kernfs(*m);
            for (off, d) in &writes {
                t = if dst.node == actor.node {
                    self.fab.write(actor, region, *off, d, t, Access::Kernel)?
                } else {
                    self.fab
                        .rdma_write(actor, dst, region, *off, d, t, Tag::SegmentWrite)
                        .map_err(|e| remote(e, *m, t, timeout))?
                };
            }
            if dst.node != actor.node {
                t = self.fab.request(actor, dst, MSG, Tag::ChainStep, t)?;
                t = self.fab.reply(dst, actor, MSG, Tag::ChainAck, t)?;
            }
        }
        Ok(t)
    }

    /// Digest a mirror on its host.
    pub(crate) fn digest_mirror(
        &mut self,
        log: u64,
        host: NodeId,
        t: SimTime,
    ) -> Result<(u64, SimTime)> {
        let meta = self.logs[&log].clone();
        let ring = Ring {
            capacity: meta.capacity,
        };
        let region = self.mirror_of(log, host)?;
        let s = scan_mirror(self, log, host, region, ring);
        let uid = self.cfg.uid;
        let epoch = self.cm.epoch;
        let k = self.nodes.get_mut(&host).ok_or(Error::NodeCrashed(host))?;
        let (rep, t) = k
            .area
            .digest(&mut self.fab, log, &s.entries, s.end_pos, uid, epoch, t)?;
        let touched = rep.touched.clone();
        self.drop_cached(&[host], &touched);
        Ok((rep.applied as u64, t))
    }

    /// Recover the log of a dead process from its durable ring: finish
    /// replication, digest everywhere, retire the log. Runs on the head
    /// node's KernFS.
    pub(crate) fn recover_log(&mut self, log: u64, t: SimTime) -> Result<SimTime> {
        let meta = self.logs[&log].clone();
        let node = meta.node;
        let actor = Endpoint::kernfs(node);
        self.fab.check_actor(actor)?;
        let ring = Ring {
            capacity: meta.capacity,
        };
        let sb = self
            .fab
            .peek(meta.region, 0, crate::oplog::log::SUPERBLOCK_LEN as usize)
            .ok()
            .and_then(|b| Superblock::decode(&b))
            .ok_or_else(|| Error::Corrupt(format!("superblock of log {log}")))?;
        let s = scan(ring, sb.head_pos, sb.head_seq, |o, l| {
            self.fab
                .peek(meta.region, o, l)
                .unwrap_or_else(|_| vec![0; l])
        });
        let members = self.chain_members(meta.chain, node);
        let targets: Vec<NodeId> = members
            .iter()
            .skip(1)
            .copied()
            .filter(|m| self.mirrors.contains_key(&(log, *m)))
            .collect();
        let mut t =
            self.sync_mirrors(log, &Source::Entries(s.entries.clone()), &targets, actor, t)?;
        let uid = self.cfg.uid;
        let epoch = self.cm.epoch;
        let k = self.nodes.get_mut(&node).ok_or(Error::NodeCrashed(node))?;
        let (rep, t2) = k
            .area
            .digest(&mut self.fab, log, &s.entries, s.end_pos, uid, epoch, t)?;
        t = t2;
        self.drop_cached(&[node], &rep.touched);
        for m in &targets {
            t = self
                .fab
                .request(actor, Endpoint::kernfs(*m), MSG, Tag::Evict, t)?;
            let (_, t2) = self.digest_mirror(log, *m, t)?;
            t = self
                .fab
                .reply(Endpoint::kernfs(*m), actor, MSG, Tag::EvictAck, t2)?;
        }
        let last = last_seq(&s, sb.head_seq);
        let done = Superblock {
            capacity: meta.capacity,
            head_pos: s.end_pos.max(sb.head_pos),
            head_seq: last,
        };
        t = self
            .fab
            .write(actor, meta.region, 0, &done.encode(), t, Access::Kernel)?;
        t = self.drop_leases_of(meta.pid, t)?;
        self.retire_log(log);
        Ok(t)
    }

    pub(crate) fn retire_log(&mut self, log: u64) {
        if let Some(m) = self.logs.get_mut(&log) {
            m.retired = true;
        }
        let gone: Vec<(u64, NodeId)> = self
            .mirrors
            .keys()
            .filter(|(l, _)| *l == log)
            .copied()
            .collect();
        for k in gone {
            if let Some(r) = self.mirrors.remove(&k) {
                self.fab.net.unregister_region(r);
            }
        }
    }

    /// Grow (or shrink) a process's log. All chain members vote on their
    /// log budget first; the switch happens only if everyone agrees.
    pub fn resize_log(&mut self, pid: ProcId, new_cap: u64, t: SimTime) -> Result<SimTime> {
        let mut t = self.chain_evict(pid, t)?;
        let p = self.procs.get(&pid).ok_or(Error::UnknownProcess(pid))?;
        let (node, chain, log_id, old_cap) = (p.node, p.chain, p.log.id, p.log.ring.capacity);
        let me = p.me();
        let members = self.chain_members(chain, node);
        let budget = self.cfg.sizes.log_budget_bytes;
        let mut deny = None;
        for m in &members {
            let dst = Endpoint::kernfs(*m);
            t = self.fab.request(me, dst, MSG, Tag::Resize, t)?;
            let used = self.log_bytes_on(*m) - old_cap;
            if used + new_cap > budget {
                deny.get_or_insert(*m);
            }
            t = self.fab.reply(dst, me, MSG, Tag::Resize, t)?;
        }
        // Second phase: commit or abort everywhere.
        for m in &members {
            t = self
                .fab
                .request(me, Endpoint::kernfs(*m), MSG, Tag::Resize, t)?;
        }
        if let Some(m) = deny {
            return Err(Error::ResizeAborted(format!("log budget exceeded on {m}")));
        }
        let region = self
            .fab
            .media
            .alloc(node, crate::media::Tier::Nvm, new_cap, Some(pid))?;
        let old = self.proc(pid)?.log.clone();
        let mut log = UpdateLog::new(log_id, region, new_cap);
        log.next_seq = old.next_seq;
        log.next_txn = old.next_txn;
        log.digested_seq = old.digested_seq;
        log.replicated_seq = old.digested_seq;
        t = self
            .fab
            .write(me, region, 0, &log.superblock().encode(), t, Access::Local)?;
        let old_region = old.region;
        {
            let meta = self.logs.get_mut(&log_id).unwrap();
            meta.region = region;
            meta.capacity = new_cap;
        }
        for m in members.iter().skip(1) {
            if let Some(r) = self.mirrors.remove(&(log_id, *m)) {
                self.fab.net.unregister_region(r);
                self.fab.media.free(r);
            }
            self.alloc_log_mirror(log_id, *m, new_cap)?;
        }
        for m in &members {
            let k = self.nodes.get_mut(m).ok_or(Error::NodeCrashed(*m))?;
            t = k
                .area
                .set_watermark(&mut self.fab, log_id, old.digested_seq, 0, t)?;
        }
        self.fab.media.free(old_region);
        self.proc_mut(pid)?.log = log;
        self.metrics.resizes += 1;
        self.event(t, format!("log of {pid} resized {old_cap} -> {new_cap}"));
        Ok(t)
    }
}
