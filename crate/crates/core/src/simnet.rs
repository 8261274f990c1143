//! Deterministic in-process network.
//!
//! Delivery is synchronous: a send returns the simulated arrival time and
//! the caller runs the receiver's handler before doing anything else, so
//! each connection is trivially FIFO. What the network does model is
//! latency, endpoint failure, RDMA memory registration, and a stable
//! trace of every delivered message.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ids::{NodeId, ProcId, RegionId};
use crate::media::{Access, LatencyModel, Media, Tier, WriteTicket};
use crate::time::{SimTime, SEC};

/// Node id reserved for the cluster manager actor.
pub const MANAGER_NODE: NodeId = NodeId(0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Endpoint {
    pub node: NodeId,
    /// `None` addresses the node's KernFS daemon.
    pub proc: Option<ProcId>,
}

impl Endpoint {
    pub fn kernfs(node: NodeId) -> Self {
        Endpoint { node, proc: None }
    }

    pub fn libfs(node: NodeId, pid: ProcId) -> Self {
        Endpoint {
            node,
            proc: Some(pid),
        }
    }

    pub fn manager() -> Self {
        Endpoint::kernfs(MANAGER_NODE)
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.node == MANAGER_NODE {
            return write!(f, "cm");
        }
        match self.proc {
            Some(p) => write!(f, "{}.{}", self.node, p),
            None => write!(f, "{}", self.node),
        }
    }
}

impl FromStr for Endpoint {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "cm" {
            return Ok(Endpoint::manager());
        }
        let bad = || Error::Corrupt(format!("bad endpoint {s:?}"));
        let (n, p) = match s.split_once('.') {
            Some((n, p)) => (n, Some(p)),
            None => (s, None),
        };
        let node = n
            .strip_prefix('n')
            .and_then(|v| v.parse().ok())
            .map(NodeId)
            .ok_or_else(bad)?;
        let proc = match p {
            Some(p) => Some(
                p.strip_prefix('p')
                    .and_then(|v| v.parse().ok())
                    .map(ProcId)
                    .ok_or_else(bad)?,
            ),
            None => None,
        };
        Ok(Endpoint { node, proc })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MsgKind {
    RdmaWrite,
    RpcRequest,
    RpcReply,
}

impl MsgKind {
    pub fn name(self) -> &'static str {
        match self {
            MsgKind::RdmaWrite => "RDMA_WRITE",
            MsgKind::RpcRequest => "RPC_REQUEST",
            MsgKind::RpcReply => "RPC_REPLY",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "RDMA_WRITE" => MsgKind::RdmaWrite,
            "RPC_REQUEST" => MsgKind::RpcRequest,
            "RPC_REPLY" => MsgKind::RpcReply,
            _ => return None,
        })
    }
}

/// Protocol message tags. The names are part of the trace format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Tag {
    // replication
    SegmentWrite,
    ChainStep,
    ChainAck,
    Evict,
    EvictAck,
    // lease protocol
    Acquire,
    Grant,
    Revoke,
    Release,
    Forward,
    Migrate,
    // kernfs / cluster
    KfsLog,
    Heartbeat,
    Epoch,
    Bitmap,
    Resize,
    // data path
    ReadFetch,
    ReadFill,
    Echo,
}

impl Tag {
    pub const ALL: [Tag; 19] = [
        Tag::SegmentWrite,
        Tag::ChainStep,
        Tag::ChainAck,
        Tag::Evict,
        Tag::EvictAck,
        Tag::Acquire,
        Tag::Grant,
        Tag::Revoke,
        Tag::Release,
        Tag::Forward,
        Tag::Migrate,
        Tag::KfsLog,
        Tag::Heartbeat,
        Tag::Epoch,
        Tag::Bitmap,
        Tag::Resize,
        Tag::ReadFetch,
        Tag::ReadFill,
        Tag::Echo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Tag::SegmentWrite => "SEGMENT_WRITE",
            Tag::ChainStep => "CHAIN_STEP",
            Tag::ChainAck => "CHAIN_ACK",
            Tag::Evict => "EVICT",
            Tag::EvictAck => "EVICT_ACK",
            Tag::Acquire => "ACQUIRE",
            Tag::Grant => "GRANT",
            Tag::Revoke => "REVOKE",
            Tag::Release => "RELEASE",
            Tag::Forward => "FORWARD",
            Tag::Migrate => "MIGRATE",
            Tag::KfsLog => "KFS_LOG",
            Tag::Heartbeat => "HEARTBEAT",
            Tag::Epoch => "EPOCH",
            Tag::Bitmap => "BITMAP",
            Tag::Resize => "RESIZE",
            Tag::ReadFetch => "READ_FETCH",
            Tag::ReadFill => "READ_FILL",
            Tag::Echo => "ECHO",
        }
    }

    pub fn parse(s: &str) -> Option<Tag> {
        Tag::ALL.into_iter().find(|t| t.name() == s)
    }

    pub fn is_lease(self) -> bool {
        matches!(
            self,
            Tag::Acquire | Tag::Grant | Tag::Revoke | Tag::Release | Tag::Forward | Tag::Migrate
        )
    }
}

/// One delivered message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub time: SimTime,
    pub kind: MsgKind,
    pub src: Endpoint,
    pub dst: Endpoint,
    pub size: u64,
    pub tag: Tag,
    /// Per-connection sequence number (not part of the printed line).
    pub seq: u64,
}

impl TraceRecord {
    /// `time \t kind \t src \t dst \t size \t tag`
    pub fn line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            self.time,
            self.kind.name(),
            self.src,
            self.dst,
            self.size,
            self.tag.name()
        )
    }

    pub fn parse_line(line: &str) -> Result<TraceRecord> {
        let f: Vec<&str> = line.split('\t').collect();
        let bad = || Error::Trace(format!("bad line {line:?}"));
        if f.len() != 6 {
            return Err(bad());
        }
        Ok(TraceRecord {
            time: f[0].parse().map_err(|_| bad())?,
            kind: MsgKind::parse(f[1]).ok_or_else(bad)?,
            src: f[2].parse()?,
            dst: f[3].parse()?,
            size: f[4].parse().map_err(|_| bad())?,
            tag: Tag::parse(f[5]).ok_or_else(bad)?,
            seq: 0,
        })
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct NetMetrics {
    pub messages: u64,
    pub bytes: u64,
    pub by_tag: BTreeMap<String, u64>,
    pub remote_by_tag: BTreeMap<String, u64>,
    pub bytes_by_tag: BTreeMap<String, u64>,
}

impl NetMetrics {
    /// Lease-protocol messages that crossed a node boundary.
    pub fn remote_lease_hops(&self) -> u64 {
        Tag::ALL
            .iter()
            .filter(|t| t.is_lease())
            .map(|t| self.remote_by_tag.get(t.name()).copied().unwrap_or(0))
            .sum()
    }

    pub fn count(&self, tag: Tag) -> u64 {
        self.by_tag.get(tag.name()).copied().unwrap_or(0)
    }

    pub fn tag_bytes(&self, tag: Tag) -> u64 {
        self.bytes_by_tag.get(tag.name()).copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone)]
pub struct SimNet {
    down: BTreeSet<NodeId>,
    seqs: BTreeMap<(Endpoint, Endpoint), u64>,
    registry: BTreeMap<RegionId, BTreeSet<Endpoint>>,
    trace: Vec<TraceRecord>,
    keep_trace: bool,
    hasher: Sha256,
    pub metrics: NetMetrics,
    latency: LatencyModel,
    pub rpc_timeout: SimTime,
}

impl SimNet {
    pub fn new(latency: LatencyModel) -> Self {
        SimNet {
            down: BTreeSet::new(),
            seqs: BTreeMap::new(),
            registry: BTreeMap::new(),
            trace: Vec::new(),
            keep_trace: true,
            hasher: Sha256::new(),
            metrics: NetMetrics::default(),
            latency,
            rpc_timeout: SEC,
        }
    }

    /// Keep hashing every message but stop retaining trace records.
    pub fn set_keep_trace(&mut self, keep: bool) {
        self.keep_trace = keep;
    }

    pub fn set_down(&mut self, node: NodeId, down: bool) {
        if down {
            self.down.insert(node);
        } else {
            self.down.remove(&node);
        }
    }

    pub fn is_up(&self, node: NodeId) -> bool {
        !self.down.contains(&node)
    }

    /// Allow `writer` to RDMA-write into `region`.
    pub fn register(&mut self, region: RegionId, writer: Endpoint) {
        self.registry.entry(region).or_default().insert(writer);
    }

    pub fn unregister_region(&mut self, region: RegionId) {
        self.registry.remove(&region);
    }

    pub fn is_registered(&self, region: RegionId, writer: Endpoint) -> bool {
        self.registry
            .get(&region)
            .is_some_and(|s| s.contains(&writer))
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn trace_hash(&self) -> String {
        hex::encode(self.hasher.clone().finalize())
    }

    fn check_dst(&self, now: SimTime, dst: Endpoint) -> Result<()> {
        if self.is_up(dst.node) {
            Ok(())
        } else {
            Err(Error::DstFailed {
                node: dst.node,
                detected_at: now + self.rpc_timeout,
            })
        }
    }

    fn record(
        &mut self,
        time: SimTime,
        kind: MsgKind,
        src: Endpoint,
        dst: Endpoint,
        size: u64,
        tag: Tag,
    ) {
        let seq = {
            let s = self.seqs.entry((src, dst)).or_insert(0);
            *s += 1;
            *s
        };
        let rec = TraceRecord {
            time,
            kind,
            src,
            dst,
            size,
            tag,
            seq,
        };
        self.hasher.update(rec.line().as_bytes());
        self.hasher.update(b"\n");
        let m = &mut self.metrics;
        m.messages += 1;
        m.bytes += size;
        *m.by_tag.entry(tag.name().to_string()).or_default() += 1;
        *m.bytes_by_tag.entry(tag.name().to_string()).or_default() += size;
        if src.node != dst.node {
            *m.remote_by_tag.entry(tag.name().to_string()).or_default() += 1;
        }
        if self.keep_trace {
            self.trace.push(rec);
        }
    }

    /// One-way message latency between two endpoints.
    pub fn hop_ns(&self, src: Endpoint, dst: Endpoint, size: u64) -> SimTime {
        if src.node == dst.node {
            self.latency.local_call_ns
        } else {
            self.latency.rpc_ns + (size as f64 / self.latency.rdma_gbps).ceil() as u64
        }
    }

    /// Deliver a request or reply; returns the arrival time.
    pub fn send(
        &mut self,
        now: SimTime,
        kind: MsgKind,
        src: Endpoint,
        dst: Endpoint,
        size: u64,
        tag: Tag,
    ) -> Result<SimTime> {
        self.check_dst(now, dst)?;
        let at = now + self.hop_ns(src, dst, size);
        self.record(at, kind, src, dst, size, tag);
        Ok(at)
    }

    /// Request/reply with an inline handler run at the destination.
    /// Returns the reply payload and the time it reaches `src`.
    #[allow(clippy::too_many_arguments)]
    pub fn rpc<F>(
        &mut self,
        now: SimTime,
        src: Endpoint,
        dst: Endpoint,
        tag: Tag,
        req: &[u8],
        handler: F,
    ) -> Result<(Vec<u8>, SimTime)>
    where
        F: FnOnce(&[u8]) -> Vec<u8>,
    {
        let arrive = self.send(now, MsgKind::RpcRequest, src, dst, req.len() as u64, tag)?;
        let reply = handler(req);
        if !self.is_up(src.node) {
            return Err(Error::NodeCrashed(src.node));
        }
        let back = self.send(arrive, MsgKind::RpcReply, dst, src, reply.len() as u64, tag)?;
        Ok((reply, back))
    }

    /// One-sided write into a registered durable region at `dst`. The
    /// returned ticket's deadline is the completion time seen by `src`:
    /// the write is durable at `dst` when the source learns it finished.
    #[allow(clippy::too_many_arguments)]
    pub fn rdma_write(
        &mut self,
        media: &mut Media,
        now: SimTime,
        src: Endpoint,
        dst: Endpoint,
        region: RegionId,
        offset: u64,
        data: &[u8],
        tag: Tag,
    ) -> Result<WriteTicket> {
        self.check_dst(now, dst)?;
        self.check_registration(media, src, dst, region)?;
        let t = media.write_persistent(region, offset, data, now, Access::Rdma)?;
        self.record(now, MsgKind::RdmaWrite, src, dst, data.len() as u64, tag);
        Ok(t)
    }

    /// One-sided write into a registered DRAM region (read-cache fills).
    /// Returns the completion time.
    #[allow(clippy::too_many_arguments)]
    pub fn rdma_fill(
        &mut self,
        media: &mut Media,
        now: SimTime,
        src: Endpoint,
        dst: Endpoint,
        region: RegionId,
        offset: u64,
        data: &[u8],
        tag: Tag,
    ) -> Result<SimTime> {
        self.check_dst(now, dst)?;
        self.check_registration(media, src, dst, region)?;
        media.write_volatile(region, offset, data)?;
        let done = now
            + self
                .latency
                .read_ns(Tier::Nvm, Access::Rdma, data.len() as u64);
        self.record(now, MsgKind::RdmaWrite, src, dst, data.len() as u64, tag);
        Ok(done)
    }

    fn check_registration(
        &self,
        media: &Media,
        src: Endpoint,
        dst: Endpoint,
        region: RegionId,
    ) -> Result<()> {
        let r = media.region(region)?;
        if r.node != dst.node || !self.is_registered(region, src) {
            return Err(Error::UnregisteredRegion {
                region,
                src: src.to_string(),
            });
        }
        Ok(())
    }
}
