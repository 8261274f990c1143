//! Simulated storage tiers with an explicit persistence model.
//!
//! Every durable region (NVM or SSD) keeps two views: the *visible* bytes,
//! which reflect every issued write immediately, and the *durable* bytes,
//! which only include writes whose persistence deadline has passed. Writes
//! persist in issue order per region, so a crash can only lose a suffix of
//! the issued stream. DRAM regions have no durable view at all and are
//! zeroed whenever their owner crashes.
//!
//! A single write is the unit of atomicity: it is either entirely durable
//! or entirely lost. Callers never issue writes smaller than 8 bytes that
//! could tear.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::{NodeId, ProcId, RegionId};
use crate::time::SimTime;

pub const PAGE_SIZE: usize = 4096;
pub const SSD_BLOCK: u64 = 4096;

const REGION_MAGIC: &[u8; 8] = b"CCNVMREG";
const REGION_VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Dram,
    Nvm,
    Ssd,
}

impl Tier {
    pub fn is_durable(self) -> bool {
        !matches!(self, Tier::Dram)
    }

    fn code(self) -> u8 {
        match self {
            Tier::Dram => 0,
            Tier::Nvm => 1,
            Tier::Ssd => 2,
        }
    }

    fn from_code(c: u8) -> Option<Tier> {
        match c {
            0 => Some(Tier::Dram),
            1 => Some(Tier::Nvm),
            2 => Some(Tier::Ssd),
            _ => None,
        }
    }
}

/// How a tier is reached; only meaningful for NVM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Access {
    Local,
    Numa,
    Kernel,
    Rdma,
}

/// Per-(tier, access) latency and bandwidth. Latencies are nanoseconds,
/// bandwidths are bytes per nanosecond (numerically equal to GB/s).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatencyModel {
    pub dram_ns: u64,
    pub nvm_local_read_ns: u64,
    pub nvm_local_write_ns: u64,
    pub nvm_numa_ns: u64,
    pub nvm_kernel_read_ns: u64,
    pub nvm_kernel_write_ns: u64,
    pub nvm_rdma_read_ns: u64,
    pub nvm_rdma_write_ns: u64,
    pub ssd_ns: u64,
    pub dram_read_gbps: f64,
    pub dram_write_gbps: f64,
    pub nvm_read_gbps: f64,
    pub nvm_write_gbps: f64,
    pub numa_read_gbps: f64,
    pub numa_write_gbps: f64,
    pub rdma_gbps: f64,
    pub ssd_read_gbps: f64,
    pub ssd_write_gbps: f64,
    /// One-way latency of a small RPC between nodes.
    pub rpc_ns: u64,
    /// LibFS to KernFS call on the same node.
    pub local_call_ns: u64,
    /// Fixed software cost charged per digest batch by KernFS.
    pub digest_batch_ns: u64,
}

impl Default for LatencyModel {
    fn default() -> Self {
        LatencyModel {
            dram_ns: 82,
            nvm_local_read_ns: 175,
            nvm_local_write_ns: 94,
            nvm_numa_ns: 230,
            nvm_kernel_read_ns: 600,
            nvm_kernel_write_ns: 1_000,
            nvm_rdma_read_ns: 3_000,
            nvm_rdma_write_ns: 8_000,
            ssd_ns: 10_000,
            dram_read_gbps: 107.0,
            dram_write_gbps: 80.0,
            nvm_read_gbps: 32.0,
            nvm_write_gbps: 11.2,
            numa_read_gbps: 4.8,
            numa_write_gbps: 7.4,
            rdma_gbps: 3.8,
            ssd_read_gbps: 2.4,
            ssd_write_gbps: 2.0,
            rpc_ns: 3_000,
            local_call_ns: 600,
            digest_batch_ns: 2_000,
        }
    }
}

fn transfer_ns(bytes: u64, gbps: f64) -> u64 {
    if gbps <= 0.0 {
        return 0;
    }
    (bytes as f64 / gbps).ceil() as u64
}

impl LatencyModel {
    pub fn read_ns(&self, tier: Tier, access: Access, bytes: u64) -> u64 {
        match tier {
            Tier::Dram => self.dram_ns + transfer_ns(bytes, self.dram_read_gbps),
            Tier::Ssd => self.ssd_ns + transfer_ns(bytes, self.ssd_read_gbps),
            Tier::Nvm => match access {
                Access::Local => self.nvm_local_read_ns + transfer_ns(bytes, self.nvm_read_gbps),
                Access::Numa => self.nvm_numa_ns + transfer_ns(bytes, self.numa_read_gbps),
                Access::Kernel => self.nvm_kernel_read_ns + transfer_ns(bytes, self.nvm_read_gbps),
                Access::Rdma => self.nvm_rdma_read_ns + transfer_ns(bytes, self.rdma_gbps),
            },
        }
    }

    pub fn write_ns(&self, tier: Tier, access: Access, bytes: u64) -> u64 {
        match tier {
            Tier::Dram => self.dram_ns + transfer_ns(bytes, self.dram_write_gbps),
            Tier::Ssd => self.ssd_ns + transfer_ns(bytes, self.ssd_write_gbps),
            Tier::Nvm => match access {
                Access::Local => self.nvm_local_write_ns + transfer_ns(bytes, self.nvm_write_gbps),
                Access::Numa => self.nvm_numa_ns + transfer_ns(bytes, self.numa_write_gbps),
                Access::Kernel => {
                    self.nvm_kernel_write_ns + transfer_ns(bytes, self.nvm_write_gbps)
                }
                Access::Rdma => self.nvm_rdma_write_ns + transfer_ns(bytes, self.rdma_gbps),
            },
        }
    }

    /// Small-read latencies in the order of the storage hierarchy:
    /// DRAM, NVM-local, NVM-NUMA, NVM-kernel, NVM-RDMA, SSD.
    pub fn hierarchy(&self) -> [u64; 6] {
        [
            self.read_ns(Tier::Dram, Access::Local, 0),
            self.read_ns(Tier::Nvm, Access::Local, 0),
            self.read_ns(Tier::Nvm, Access::Numa, 0),
            self.read_ns(Tier::Nvm, Access::Kernel, 0),
            self.read_ns(Tier::Nvm, Access::Rdma, 0),
            self.read_ns(Tier::Ssd, Access::Local, 0),
        ]
    }
}

/// Sparse byte store with 4KB pages; untouched bytes read as zero.
#[derive(Debug, Clone, Default)]
pub struct PageStore {
    pages: HashMap<u64, Box<[u8; PAGE_SIZE]>>,
}

impl PageStore {
    pub fn write(&mut self, offset: u64, data: &[u8]) {
        let mut done = 0usize;
        while done < data.len() {
            let pos = offset + done as u64;
            let page = pos / PAGE_SIZE as u64;
            let within = (pos % PAGE_SIZE as u64) as usize;
            let n = (PAGE_SIZE - within).min(data.len() - done);
            let p = self
                .pages
                .entry(page)
                .or_insert_with(|| Box::new([0u8; PAGE_SIZE]));
            p[within..within + n].copy_from_slice(&data[done..done + n]);
            done += n;
        }
    }

    pub fn read_into(&self, offset: u64, out: &mut [u8]) {
        let mut done = 0usize;
        while done < out.len() {
            let pos = offset + done as u64;
            let page = pos / PAGE_SIZE as u64;
            let within = (pos % PAGE_SIZE as u64) as usize;
            let n = (PAGE_SIZE - within).min(out.len() - done);
            match self.pages.get(&page) {
                Some(p) => out[done..done + n].copy_from_slice(&p[within..within + n]),
                None => out[done..done + n].fill(0),
            }
            done += n;
        }
    }

    pub fn read(&self, offset: u64, len: usize) -> Vec<u8> {
        let mut out = vec![0u8; len];
        self.read_into(offset, &mut out);
        out
    }

    pub fn clear(&mut self) {
        self.pages.clear();
    }

    pub fn resident_bytes(&self) -> u64 {
        (self.pages.len() * PAGE_SIZE) as u64
    }
}

#[derive(Debug, Clone)]
struct PendingWrite {
    index: u64,
    offset: u64,
    data: Vec<u8>,
    deadline: SimTime,
}

/// Handle for an issued durable write.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WriteTicket {
    pub region: RegionId,
    /// Issue index within the region stream, starting at 1.
    pub index: u64,
    /// Issue index across all durable regions, starting at 1.
    pub global: u64,
    pub deadline: SimTime,
}

#[derive(Debug, Clone)]
pub struct Region {
    pub id: RegionId,
    pub tier: Tier,
    pub node: NodeId,
    pub owner: Option<ProcId>,
    pub capacity: u64,
    durable: PageStore,
    pending: VecDeque<PendingWrite>,
    issued: u64,
    persisted: u64,
    journal: Option<Vec<(u64, Vec<u8>)>>,
}

impl Region {
    fn new(id: RegionId, tier: Tier, node: NodeId, owner: Option<ProcId>, capacity: u64) -> Self {
        Region {
            id,
            tier,
            node,
            owner,
            capacity,
            durable: PageStore::default(),
            pending: VecDeque::new(),
            issued: 0,
            persisted: 0,
            journal: None,
        }
    }

    fn check_range(&self, offset: u64, len: u64) -> Result<()> {
        if offset
            .checked_add(len)
            .is_none_or(|end| end > self.capacity)
        {
            return Err(Error::OutOfRange {
                offset,
                len,
                capacity: self.capacity,
            });
        }
        Ok(())
    }

    fn read(&self, offset: u64, len: usize) -> Vec<u8> {
        let mut out = self.durable.read(offset, len);
        let end = offset + len as u64;
        for w in &self.pending {
            let wend = w.offset + w.data.len() as u64;
            if wend <= offset || w.offset >= end {
                continue;
            }
            let lo = w.offset.max(offset);
            let hi = wend.min(end);
            out[(lo - offset) as usize..(hi - offset) as usize]
                .copy_from_slice(&w.data[(lo - w.offset) as usize..(hi - w.offset) as usize]);
        }
        out
    }

    fn persist_until(&mut self, now: SimTime) {
        while self.pending.front().is_some_and(|w| w.deadline <= now) {
            let w = self.pending.pop_front().unwrap();
            self.durable.write(w.offset, &w.data);
            self.persisted = w.index;
        }
    }

    fn persist_first(&mut self, n: usize) {
        for _ in 0..n {
            let Some(w) = self.pending.pop_front() else {
                break;
            };
            self.durable.write(w.offset, &w.data);
            self.persisted = w.index;
        }
        self.pending.clear();
    }

    pub fn issued(&self) -> u64 {
        self.issued
    }

    pub fn persisted(&self) -> u64 {
        self.persisted
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    /// Bytes that would survive a crash right now.
    pub fn durable_bytes(&self, offset: u64, len: usize) -> Vec<u8> {
        self.durable.read(offset, len)
    }
}

/// Where each durable region's in-flight write stream is cut at a crash.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub enum CutPolicy {
    /// Every issued write survives.
    #[default]
    KeepAll,
    /// Only writes whose persistence deadline already passed survive.
    DropUnpersisted,
    /// Keep the first `n` still-pending writes of the listed regions;
    /// regions not listed lose all pending writes.
    Prefix(BTreeMap<RegionId, usize>),
}

/// All storage regions of the simulated cluster.
#[derive(Debug, Clone)]
pub struct Media {
    regions: BTreeMap<RegionId, Region>,
    mounted: BTreeMap<NodeId, bool>,
    next_region: u32,
    global_issued: u64,
    pub latency: LatencyModel,
}

impl Media {
    pub fn new(latency: LatencyModel) -> Self {
        Media {
            regions: BTreeMap::new(),
            mounted: BTreeMap::new(),
            next_region: 1,
            global_issued: 0,
            latency,
        }
    }

    pub fn add_node(&mut self, node: NodeId) {
        self.mounted.insert(node, true);
    }

    pub fn is_mounted(&self, node: NodeId) -> bool {
        self.mounted.get(&node).copied().unwrap_or(false)
    }

    pub fn alloc(
        &mut self,
        node: NodeId,
        tier: Tier,
        capacity: u64,
        owner: Option<ProcId>,
    ) -> Result<RegionId> {
        if !self.mounted.contains_key(&node) {
            return Err(Error::UnknownNode(node));
        }
        if capacity == 0 {
            return Err(Error::CapacityExceeded {
                offset: 0,
                len: 0,
                capacity: 0,
            });
        }
        let id = RegionId(self.next_region);
        self.next_region += 1;
        self.regions
            .insert(id, Region::new(id, tier, node, owner, capacity));
        Ok(id)
    }

    pub fn free(&mut self, id: RegionId) {
        self.regions.remove(&id);
    }

    pub fn region(&self, id: RegionId) -> Result<&Region> {
        self.regions.get(&id).ok_or(Error::UnknownRegion(id))
    }

    fn region_mut(&mut self, id: RegionId) -> Result<&mut Region> {
        self.regions.get_mut(&id).ok_or(Error::UnknownRegion(id))
    }

    fn live_region_mut(&mut self, id: RegionId) -> Result<&mut Region> {
        let node = self.region(id)?.node;
        if !self.is_mounted(node) {
            return Err(Error::NodeCrashed(node));
        }
        self.region_mut(id)
    }

    /// Total durable writes issued so far across every region.
    pub fn global_issued(&self) -> u64 {
        self.global_issued
    }

    /// Record every issued write of `id` so it can be exported as a sidecar
    /// journal for cut-point replay.
    pub fn set_journaling(&mut self, id: RegionId, on: bool) -> Result<()> {
        let r = self.region_mut(id)?;
        r.journal = if on { Some(Vec::new()) } else { None };
        Ok(())
    }

    /// Issue an ordered durable write. It is visible immediately and
    /// becomes durable at the returned deadline.
    pub fn write_persistent(
        &mut self,
        id: RegionId,
        offset: u64,
        data: &[u8],
        now: SimTime,
        access: Access,
    ) -> Result<WriteTicket> {
        let latency = self.latency.clone();
        let r = self.live_region_mut(id)?;
        if !r.tier.is_durable() {
            return Err(Error::NotDurable(id));
        }
        let len = data.len() as u64;
        if offset >= r.capacity || offset + len > r.capacity {
            return Err(Error::CapacityExceeded {
                offset,
                len,
                capacity: r.capacity,
            });
        }
        if r.tier == Tier::Ssd && (offset % SSD_BLOCK != 0 || len % SSD_BLOCK != 0) {
            return Err(Error::Misaligned { offset, len });
        }
        let floor = r.pending.back().map(|w| w.deadline).unwrap_or(0);
        let deadline = (now + latency.write_ns(r.tier, access, len)).max(floor);
        r.issued += 1;
        let index = r.issued;
        if let Some(j) = r.journal.as_mut() {
            j.push((offset, data.to_vec()));
        }
        r.pending.push_back(PendingWrite {
            index,
            offset,
            data: data.to_vec(),
            deadline,
        });
        self.global_issued += 1;
        Ok(WriteTicket {
            region: id,
            index,
            global: self.global_issued,
            deadline,
        })
    }

    /// Store into a DRAM region (local stores or remote fills).
    pub fn write_volatile(&mut self, id: RegionId, offset: u64, data: &[u8]) -> Result<()> {
        let r = self.live_region_mut(id)?;
        if r.tier.is_durable() {
            return Err(Error::NotDurable(id));
        }
        r.check_range(offset, data.len() as u64)?;
        r.durable.write(offset, data);
        Ok(())
    }

    /// Latest issued contents; durability is not implied.
    pub fn read(&self, id: RegionId, offset: u64, len: usize) -> Result<Vec<u8>> {
        let r = self.region(id)?;
        if !self.is_mounted(r.node) {
            return Err(Error::NodeCrashed(r.node));
        }
        r.check_range(offset, len as u64)?;
        Ok(r.read(offset, len))
    }

    pub fn is_persisted(&self, t: &WriteTicket) -> bool {
        self.regions
            .get(&t.region)
            .is_some_and(|r| r.persisted >= t.index)
    }

    /// Persist every write whose deadline is at or before `now`.
    pub fn advance_to(&mut self, now: SimTime) {
        for r in self.regions.values_mut() {
            if !r.pending.is_empty() {
                r.persist_until(now);
            }
        }
    }

    /// Crash a node: zero its DRAM and cut each durable stream.
    pub fn crash_node(&mut self, node: NodeId, cut: &CutPolicy) -> Result<()> {
        if !self.mounted.contains_key(&node) {
            return Err(Error::UnknownNode(node));
        }
        self.mounted.insert(node, false);
        for r in self.regions.values_mut().filter(|r| r.node == node) {
            if !r.tier.is_durable() {
                r.durable.clear();
                continue;
            }
            let keep = match cut {
                CutPolicy::KeepAll => r.pending.len(),
                CutPolicy::DropUnpersisted => 0,
                CutPolicy::Prefix(m) => m.get(&r.id).copied().unwrap_or(0),
            };
            r.persist_first(keep);
        }
        Ok(())
    }

    /// A process crash loses its DRAM. Its stores to NVM were already
    /// flushed from the CPU, so they still persist.
    pub fn crash_process(&mut self, pid: ProcId) {
        for r in self.regions.values_mut().filter(|r| r.owner == Some(pid)) {
            if r.tier.is_durable() {
                let n = r.pending.len();
                r.persist_first(n);
            } else {
                r.durable.clear();
            }
        }
    }

    /// Remount the durable regions of a crashed node.
    pub fn recover(&mut self, node: NodeId) -> Result<()> {
        match self.mounted.get_mut(&node) {
            Some(m) => {
                *m = true;
                Ok(())
            }
            None => Err(Error::UnknownNode(node)),
        }
    }

    pub fn regions_of(&self, node: NodeId) -> impl Iterator<Item = &Region> {
        self.regions.values().filter(move |r| r.node == node)
    }

    /// Write the durable image of a region to `path`, plus a sidecar
    /// journal (`<path>.journal`) if journaling was enabled.
    ///
    /// Layout: 8-byte magic, version byte, tier byte, capacity (u64 LE),
    /// then `capacity` raw bytes. Journal records are
    /// `offset: u64 LE, len: u32 LE, data`.
    pub fn save_region(&self, id: RegionId, path: &Path) -> Result<()> {
        let r = self.region(id)?;
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(REGION_MAGIC)?;
        out.write_all(&[REGION_VERSION, r.tier.code()])?;
        out.write_all(&r.capacity.to_le_bytes())?;
        let mut off = 0u64;
        let mut buf = vec![0u8; 1 << 16];
        while off < r.capacity {
            let n = ((r.capacity - off) as usize).min(buf.len());
            r.durable.read_into(off, &mut buf[..n]);
            out.write_all(&buf[..n])?;
            off += n as u64;
        }
        out.flush()?;
        if let Some(j) = &r.journal {
            let mut jw = BufWriter::new(File::create(journal_path(path))?);
            for (o, d) in j {
                jw.write_all(&o.to_le_bytes())?;
                jw.write_all(&(d.len() as u32).to_le_bytes())?;
                jw.write_all(d)?;
            }
            jw.flush()?;
        }
        Ok(())
    }

    /// Mount a saved region image on `node` as a new region.
    pub fn load_region(&mut self, node: NodeId, path: &Path) -> Result<RegionId> {
        let img = read_region_file(path)?;
        let id = self.alloc(node, img.tier, img.capacity, None)?;
        let r = self.region_mut(id)?;
        r.durable.write(0, &img.bytes);
        Ok(id)
    }
}

pub fn journal_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".journal");
    PathBuf::from(p)
}

pub struct RegionImage {
    pub tier: Tier,
    pub capacity: u64,
    pub bytes: Vec<u8>,
}

pub fn read_region_file(path: &Path) -> Result<RegionImage> {
    let mut f = BufReader::new(File::open(path)?);
    let mut hdr = [0u8; 18];
    f.read_exact(&mut hdr)?;
    if &hdr[..8] != REGION_MAGIC {
        return Err(Error::Corrupt("bad region magic".into()));
    }
    if hdr[8] != REGION_VERSION {
        return Err(Error::Corrupt(format!("unsupported version {}", hdr[8])));
    }
    let tier = Tier::from_code(hdr[9]).ok_or_else(|| Error::Corrupt("bad tier".into()))?;
    let capacity = u64::from_le_bytes(hdr[10..18].try_into().unwrap());
    let mut bytes = Vec::with_capacity(capacity as usize);
    f.read_to_end(&mut bytes)?;
    if bytes.len() as u64 != capacity {
        return Err(Error::Corrupt("truncated region image".into()));
    }
    Ok(RegionImage {
        tier,
        capacity,
        bytes,
    })
}

/// Read a sidecar journal as `(offset, data)` records in issue order.
pub fn read_journal(path: &Path) -> Result<Vec<(u64, Vec<u8>)>> {
    let mut raw = Vec::new();
    File::open(path)?.read_to_end(&mut raw)?;
    let mut out = Vec::new();
    let mut i = 0usize;
    while i < raw.len() {
        if i + 12 > raw.len() {
            return Err(Error::Corrupt("truncated journal record".into()));
        }
        let off = u64::from_le_bytes(raw[i..i + 8].try_into().unwrap());
        let len = u32::from_le_bytes(raw[i + 8..i + 12].try_into().unwrap()) as usize;
        i += 12;
        if i + len > raw.len() {
            return Err(Error::Corrupt("truncated journal payload".into()));
        }
        out.push((off, raw[i..i + len].to_vec()));
        i += len;
    }
    Ok(out)
}

/// Contents a region would hold if exactly the first `k` journal records
/// had persisted.
pub fn replay_prefix(capacity: u64, journal: &[(u64, Vec<u8>)], k: usize) -> Vec<u8> {
    let mut img = vec![0u8; capacity as usize];
    for (off, data) in journal.iter().take(k) {
        img[*off as usize..*off as usize + data.len()].copy_from_slice(data);
    }
    img
}
