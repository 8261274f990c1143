//! Media plus network plus crash injection.
//!
//! Every durable write and every message in the simulation goes through
//! [`Fabric`], which makes it the one place where a crash trap can fire:
//! the harness arms a trap on the k-th durable write cluster-wide, and the
//! target crashes right after that write is issued. Enumerating k walks
//! every cut point of a run.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::{NodeId, ProcId, RegionId};
use crate::media::{Access, CutPolicy, LatencyModel, Media, Tier};
use crate::simnet::{Endpoint, MsgKind, SimNet, Tag};
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrashTarget {
    Node(NodeId),
    Proc(ProcId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trap {
    /// Fire after this many durable writes have been issued cluster-wide.
    pub at_write: u64,
    pub target: CrashTarget,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IoStats {
    pub nvm_write_bytes: u64,
    pub ssd_write_bytes: u64,
    pub nvm_read_bytes: u64,
    pub ssd_read_bytes: u64,
    pub rdma_bytes: u64,
    pub durable_writes: u64,
}

impl IoStats {
    pub fn touched(&self) -> u64 {
        self.nvm_write_bytes
            + self.ssd_write_bytes
            + self.nvm_read_bytes
            + self.ssd_read_bytes
            + self.rdma_bytes
    }

    pub fn since(&self, earlier: &IoStats) -> IoStats {
        IoStats {
            nvm_write_bytes: self.nvm_write_bytes - earlier.nvm_write_bytes,
            ssd_write_bytes: self.ssd_write_bytes - earlier.ssd_write_bytes,
            nvm_read_bytes: self.nvm_read_bytes - earlier.nvm_read_bytes,
            ssd_read_bytes: self.ssd_read_bytes - earlier.ssd_read_bytes,
            rdma_bytes: self.rdma_bytes - earlier.rdma_bytes,
            durable_writes: self.durable_writes - earlier.durable_writes,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Fabric {
    pub media: Media,
    pub net: SimNet,
    pub lat: LatencyModel,
    pub stats: IoStats,
    trap: Option<Trap>,
    fired: Vec<CrashTarget>,
    dead_procs: BTreeSet<ProcId>,
}

impl Fabric {
    pub fn new(lat: LatencyModel) -> Self {
        Fabric {
            media: Media::new(lat.clone()),
            net: SimNet::new(lat.clone()),
            lat,
            stats: IoStats::default(),
            trap: None,
            fired: Vec::new(),
            dead_procs: BTreeSet::new(),
        }
    }

    pub fn arm(&mut self, trap: Option<Trap>) {
        self.trap = trap;
    }

    pub fn armed(&self) -> Option<Trap> {
        self.trap
    }

    /// Crashes that fired since the last call.
    pub fn take_fired(&mut self) -> Vec<CrashTarget> {
        std::mem::take(&mut self.fired)
    }

    pub fn node_up(&self, n: NodeId) -> bool {
        self.net.is_up(n) && self.media.is_mounted(n)
    }

    pub fn proc_dead(&self, p: ProcId) -> bool {
        self.dead_procs.contains(&p)
    }

    pub fn check_actor(&self, a: Endpoint) -> Result<()> {
        if a.node == crate::simnet::MANAGER_NODE && self.net.is_up(a.node) {
            return Ok(());
        }
        if !self.node_up(a.node) {
            return Err(Error::NodeCrashed(a.node));
        }
        if let Some(p) = a.proc {
            if self.dead_procs.contains(&p) {
                return Err(Error::ProcessDead(p));
            }
        }
        Ok(())
    }

    /// Crash a node now. Its DRAM is lost and each durable stream is cut
    /// according to `cut`.
    pub fn crash_node(&mut self, n: NodeId, cut: &CutPolicy) {
        if self.media.is_mounted(n) {
            let _ = self.media.crash_node(n, cut);
        }
        self.net.set_down(n, true);
    }

    pub fn crash_proc(&mut self, p: ProcId) {
        self.media.crash_process(p);
        self.dead_procs.insert(p);
    }

    pub fn restart_node(&mut self, n: NodeId) -> Result<()> {
        self.media.recover(n)?;
        self.net.set_down(n, false);
        Ok(())
    }

    fn after_write(&mut self, actor: Endpoint) -> Result<()> {
        self.stats.durable_writes += 1;
        let Some(t) = self.trap else {
            return Ok(());
        };
        if self.media.global_issued() < t.at_write {
            return Ok(());
        }
        self.trap = None;
        match t.target {
            CrashTarget::Node(n) => self.crash_node(n, &CutPolicy::KeepAll),
            CrashTarget::Proc(p) => self.crash_proc(p),
        }
        self.fired.push(t.target);
        self.check_actor(actor)
    }

    fn count_write(&mut self, tier: Tier, n: u64) {
        match tier {
            Tier::Nvm => self.stats.nvm_write_bytes += n,
            Tier::Ssd => self.stats.ssd_write_bytes += n,
            Tier::Dram => {}
        }
    }

    fn count_read(&mut self, tier: Tier, n: u64) {
        match tier {
            Tier::Nvm => self.stats.nvm_read_bytes += n,
            Tier::Ssd => self.stats.ssd_read_bytes += n,
            Tier::Dram => {}
        }
    }

    /// Local durable write by `actor`; returns its completion time.
    pub fn write(
        &mut self,
        actor: Endpoint,
        region: RegionId,
        offset: u64,
        data: &[u8],
        t: SimTime,
        access: Access,
    ) -> Result<SimTime> {
        self.check_actor(actor)?;
        let ticket = self
            .media
            .write_persistent(region, offset, data, t, access)?;
        let tier = self.media.region(region)?.tier;
        self.count_write(tier, data.len() as u64);
        self.after_write(actor)?;
        Ok(ticket.deadline)
    }

    pub fn read(
        &mut self,
        actor: Endpoint,
        region: RegionId,
        offset: u64,
        len: usize,
        t: SimTime,
        access: Access,
    ) -> Result<(Vec<u8>, SimTime)> {
        self.check_actor(actor)?;
        let r = self.media.region(region)?;
        let tier = r.tier;
        let data = self.media.read(region, offset, len)?;
        self.count_read(tier, len as u64);
        Ok((data, t + self.lat.read_ns(tier, access, len as u64)))
    }

    /// Read without charging time or checking the actor (recovery scans
    /// and oracles).
    pub fn peek(&self, region: RegionId, offset: u64, len: usize) -> Result<Vec<u8>> {
        self.media.read(region, offset, len)
    }

    pub fn volatile(&mut self, region: RegionId, offset: u64, data: &[u8]) -> Result<()> {
        self.media.write_volatile(region, offset, data)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn rdma_write(
        &mut self,
        src: Endpoint,
        dst: Endpoint,
        region: RegionId,
        offset: u64,
        data: &[u8],
        t: SimTime,
        tag: Tag,
    ) -> Result<SimTime> {
        self.check_actor(src)?;
        let ticket =
            self.net
                .rdma_write(&mut self.media, t, src, dst, region, offset, data, tag)?;
        self.stats.rdma_bytes += data.len() as u64;
        self.count_write(Tier::Nvm, data.len() as u64);
        self.after_write(src)?;
        Ok(ticket.deadline)
    }

    /// Remote fill of a DRAM region at `dst` from `src`.
    #[allow(clippy::too_many_arguments)]
    pub fn rdma_fill(
        &mut self,
        src: Endpoint,
        dst: Endpoint,
        region: RegionId,
        offset: u64,
        data: &[u8],
        t: SimTime,
        tag: Tag,
    ) -> Result<SimTime> {
        self.check_actor(src)?;
        self.stats.rdma_bytes += data.len() as u64;
        self.net
            .rdma_fill(&mut self.media, t, src, dst, region, offset, data, tag)
    }

    /// One message; returns the arrival time.
    pub fn send(
        &mut self,
        kind: MsgKind,
        src: Endpoint,
        dst: Endpoint,
        size: u64,
        tag: Tag,
        t: SimTime,
    ) -> Result<SimTime> {
        self.check_actor(src)?;
        if !self.node_up(dst.node) && dst.node != crate::simnet::MANAGER_NODE {
            return Err(Error::DstFailed {
                node: dst.node,
                detected_at: t + self.net.rpc_timeout,
            });
        }
        self.net.send(t, kind, src, dst, size, tag)
    }

    pub fn request(
        &mut self,
        src: Endpoint,
        dst: Endpoint,
        size: u64,
        tag: Tag,
        t: SimTime,
    ) -> Result<SimTime> {
        self.send(MsgKind::RpcRequest, src, dst, size, tag, t)
    }

    pub fn reply(
        &mut self,
        src: Endpoint,
        dst: Endpoint,
        size: u64,
        tag: Tag,
        t: SimTime,
    ) -> Result<SimTime> {
        self.send(MsgKind::RpcReply, src, dst, size, tag, t)
    }
}
