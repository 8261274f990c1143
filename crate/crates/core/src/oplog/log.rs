//! Ring layout of an update log inside one NVM region.
//!
//! The first 64 bytes hold a superblock; the rest is a ring addressed by a
//! monotone logical position. Physical offset = 64 + pos mod usable. An
//! entry never straddles the ring end: a PAD marker (or fewer than 64
//! spare bytes) sends the writer back to the ring start.
//!
//! [`UpdateLog`] is pure bookkeeping. It decides what bytes go where and
//! keeps the DRAM index; the caller performs the IO.

use std::collections::{HashMap, VecDeque};

use crate::error::Error;
use crate::ids::{Ino, RegionId, Seq};
use crate::media::PAGE_SIZE;

use super::entry::{self, Decoded, LogEntry, LogOp, HEADER_LEN};

pub const SUPERBLOCK_LEN: u64 = 64;
const SB_MAGIC: &[u8; 8] = b"CCLOGSB1";
const SB_VERSION: u32 = 1;

/// Log superblock: where the undigested part of the ring starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Superblock {
    pub capacity: u64,
    pub head_pos: u64,
    /// Last seq that was digested everywhere.
    pub head_seq: Seq,
}

impl Superblock {
    pub fn encode(&self) -> Vec<u8> {
        let mut b = vec![0u8; SUPERBLOCK_LEN as usize];
        b[0..8].copy_from_slice(SB_MAGIC);
        b[8..12].copy_from_slice(&SB_VERSION.to_le_bytes());
        b[16..24].copy_from_slice(&self.capacity.to_le_bytes());
        b[24..32].copy_from_slice(&self.head_pos.to_le_bytes());
        b[32..40].copy_from_slice(&self.head_seq.to_le_bytes());
        let crc = crc32c::crc32c(&b[..60]);
        b[60..64].copy_from_slice(&crc.to_le_bytes());
        b
    }

    pub fn decode(b: &[u8]) -> Option<Superblock> {
        if b.len() < SUPERBLOCK_LEN as usize || &b[0..8] != SB_MAGIC {
            return None;
        }
        let crc = u32::from_le_bytes(b[60..64].try_into().unwrap());
        if crc != crc32c::crc32c(&b[..60]) {
            return None;
        }
        let g = |at: usize| u64::from_le_bytes(b[at..at + 8].try_into().unwrap());
        Some(Superblock {
            capacity: g(16),
            head_pos: g(24),
            head_seq: g(32),
        })
    }
}

/// Ring geometry shared by a log and its mirrors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ring {
    pub capacity: u64,
}

impl Ring {
    pub fn usable(&self) -> u64 {
        self.capacity - SUPERBLOCK_LEN
    }

    pub fn phys(&self, pos: u64) -> u64 {
        SUPERBLOCK_LEN + pos % self.usable()
    }

    fn lap_left(&self, pos: u64) -> u64 {
        self.usable() - pos % self.usable()
    }

    /// Place encoded entries starting at `pos`. Returns the physical
    /// writes (pads included) and the position after the last entry.
    pub fn layout(&self, mut pos: u64, items: &[(Seq, Vec<u8>)]) -> (Vec<(u64, Vec<u8>)>, u64) {
        let mut writes = Vec::with_capacity(items.len());
        for (seq, bytes) in items {
            let left = self.lap_left(pos);
            if left < bytes.len() as u64 {
                if left >= HEADER_LEN as u64 {
                    writes.push((self.phys(pos), entry::encode_pad(*seq)));
                }
                pos += left;
            }
            writes.push((self.phys(pos), bytes.clone()));
            pos += bytes.len() as u64;
        }
        (writes, pos)
    }

    /// Bytes a layout of `lens` would consume from `pos`, pads included.
    pub fn span(&self, mut pos: u64, lens: impl IntoIterator<Item = usize>) -> u64 {
        let start = pos;
        for len in lens {
            let left = self.lap_left(pos);
            if left < len as u64 {
                pos += left;
            }
            pos += len as u64;
        }
        pos - start
    }

    /// Physical pieces covering logical `[from, to)`; at most two.
    pub fn slices(&self, from: u64, to: u64) -> Vec<(u64, u64)> {
        let mut out = Vec::new();
        let mut pos = from;
        while pos < to {
            let n = self.lap_left(pos).min(to - pos);
            out.push((self.phys(pos), n));
            pos += n;
        }
        out
    }
}

/// One live (undigested) entry as tracked in DRAM.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LiveEntry {
    pub pos: u64,
    pub len: u64,
    pub entry: LogEntry,
}

/// Outcome of scanning a ring from a known position.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Scan {
    /// Entries of complete batches only, in order.
    pub entries: Vec<LiveEntry>,
    /// Position just after the last complete batch.
    pub end_pos: u64,
    /// Entries seen after the last complete batch (discarded).
    pub partial: usize,
    /// Seq of a corrupt entry that stopped the scan.
    pub corrupt: Option<Seq>,
}

/// Walk a ring from `pos`, accepting entries whose seq strictly increases
/// from `after_seq`. Stops at an empty slot, a stale seq, a bad checksum,
/// or after one full lap.
pub fn scan<F>(ring: Ring, pos: u64, after_seq: Seq, mut read: F) -> Scan
where
    F: FnMut(u64, usize) -> Vec<u8>,
{
    let mut out = Scan {
        end_pos: pos,
        ..Scan::default()
    };
    let limit = pos + ring.usable();
    let mut cur = pos;
    let mut last = after_seq;
    let mut pending: Vec<LiveEntry> = Vec::new();
    loop {
        let left = ring.lap_left(cur);
        if left < HEADER_LEN as u64 {
            cur += left;
        }
        if cur >= limit {
            break;
        }
        let head = read(ring.phys(cur), HEADER_LEN);
        let Some(len) = entry::peek_len(&head) else {
            break;
        };
        if len as u64 > ring.lap_left(cur) {
            break;
        }
        let buf = if len > HEADER_LEN {
            let mut b = head;
            b.extend(read(ring.phys(cur) + HEADER_LEN as u64, len - HEADER_LEN));
            b
        } else {
            head
        };
        match entry::decode(&buf) {
            Ok(Decoded::Pad { next_seq }) => {
                if next_seq <= last {
                    break;
                }
                cur += ring.lap_left(cur);
            }
            Ok(Decoded::Entry(e, n)) => {
                if e.seq <= last || cur + n as u64 > limit {
                    break;
                }
                last = e.seq;
                let end = e.batch_end;
                pending.push(LiveEntry {
                    pos: cur,
                    len: n as u64,
                    entry: e,
                });
                cur += n as u64;
                if end {
                    out.entries.append(&mut pending);
                    out.end_pos = cur;
                }
            }
            Ok(Decoded::Empty) => break,
            Err(Error::Checksum(seq)) => {
                if seq > last {
                    out.corrupt = Some(seq);
                }
                break;
            }
            Err(_) => break,
        }
    }
    out.partial = pending.len();
    out
}

/// Split one POSIX write into block-aligned log operations.
pub fn split_write(ino: Ino, offset: u64, data: &[u8]) -> Vec<LogOp> {
    let bs = PAGE_SIZE as u64;
    let mut ops = Vec::new();
    let mut done = 0usize;
    while done < data.len() {
        let pos = offset + done as u64;
        let n = ((bs - pos % bs) as usize).min(data.len() - done);
        ops.push(LogOp::Write {
            ino,
            offset: pos,
            data: data[done..done + n].to_vec(),
        });
        done += n;
    }
    ops
}

/// The per-process update log as known to its owner.
#[derive(Debug, Clone)]
pub struct UpdateLog {
    pub id: u64,
    pub region: RegionId,
    pub ring: Ring,
    pub head_pos: u64,
    pub tail_pos: u64,
    pub next_seq: Seq,
    pub next_txn: u64,
    pub digested_seq: Seq,
    pub replicated_seq: Seq,
    pub replicated_pos: u64,
    /// Write cursor and digested start of the mirrors on chain replicas.
    pub mirror_pos: u64,
    pub mirror_head: u64,
    pub live: VecDeque<LiveEntry>,
    /// (inode, block) to the latest live write covering it.
    pub index: HashMap<(Ino, u64), Seq>,
}

impl UpdateLog {
    pub fn new(id: u64, region: RegionId, capacity: u64) -> Self {
        UpdateLog {
            id,
            region,
            ring: Ring { capacity },
            head_pos: 0,
            tail_pos: 0,
            next_seq: 1,
            next_txn: 1,
            digested_seq: 0,
            replicated_seq: 0,
            replicated_pos: 0,
            mirror_pos: 0,
            mirror_head: 0,
            live: VecDeque::new(),
            index: HashMap::new(),
        }
    }

    pub fn superblock(&self) -> Superblock {
        Superblock {
            capacity: self.ring.capacity,
            head_pos: self.head_pos,
            head_seq: self.digested_seq,
        }
    }

    pub fn used(&self) -> u64 {
        (self.tail_pos - self.head_pos).max(self.mirror_pos - self.mirror_head)
    }

    pub fn tail_seq(&self) -> Seq {
        self.next_seq - 1
    }

    pub fn is_empty(&self) -> bool {
        self.live.is_empty()
    }

    pub fn unreplicated(&self) -> bool {
        self.replicated_seq < self.tail_seq()
    }

    /// Bytes appending `ops` as one transaction would add.
    pub fn txn_span(&self, ops: &[LogOp]) -> u64 {
        let lens: Vec<usize> = ops
            .iter()
            .map(|op| {
                LogEntry {
                    seq: 0,
                    txn: 0,
                    batch_end: false,
                    op: op.clone(),
                }
                .encoded_len()
            })
            .collect();
        let local = self.ring.span(self.tail_pos, lens.iter().copied());
        let mirror = self.ring.span(self.mirror_pos, lens.iter().copied());
        local.max(mirror)
    }

    /// Whether the transaction fits below the digest threshold, expressed
    /// as the fraction of the ring that must stay free.
    pub fn fits_below(&self, ops: &[LogOp], free_fraction: f64) -> bool {
        let limit = (self.ring.usable() as f64 * (1.0 - free_fraction)) as u64;
        self.used() + self.txn_span(ops) <= limit
    }

    /// Whether the transaction fits below the threshold of an empty ring.
    pub fn can_ever_fit(&self, ops: &[LogOp], free_fraction: f64) -> bool {
        let lens = ops.iter().map(|op| {
            LogEntry {
                seq: 0,
                txn: 0,
                batch_end: false,
                op: op.clone(),
            }
            .encoded_len()
        });
        self.ring.span(0, lens) <= (self.ring.usable() as f64 * (1.0 - free_fraction)) as u64
    }

    /// Assign seqs to `ops` as one transaction and return the physical
    /// writes to issue in order.
    pub fn append_txn(&mut self, ops: Vec<LogOp>) -> Vec<(u64, Vec<u8>)> {
        let txn = self.next_txn;
        self.next_txn += 1;
        let n = ops.len();
        let mut items = Vec::with_capacity(n);
        let mut entries = Vec::with_capacity(n);
        for (i, op) in ops.into_iter().enumerate() {
            let e = LogEntry {
                seq: self.next_seq,
                txn,
                batch_end: i + 1 == n,
                op,
            };
            self.next_seq += 1;
            items.push((e.seq, entry::encode(&e)));
            entries.push(e);
        }
        let (writes, end) = self.ring.layout(self.tail_pos, &items);
        // Positions of the entries themselves (pads skipped).
        let mut pos = self.tail_pos;
        for (e, (_, bytes)) in entries.into_iter().zip(items.iter()) {
            let left = self.ring.usable() - pos % self.ring.usable();
            if left < bytes.len() as u64 {
                pos += left;
            }
            if let LogOp::Write { ino, offset, data } = &e.op {
                let bs = PAGE_SIZE as u64;
                for blk in offset / bs..(offset + data.len() as u64).div_ceil(bs) {
                    self.index.insert((*ino, blk), e.seq);
                }
            }
            self.live.push_back(LiveEntry {
                pos,
                len: bytes.len() as u64,
                entry: e,
            });
            pos += bytes.len() as u64;
        }
        self.tail_pos = end;
        writes
    }

    /// Live entries not yet replicated.
    pub fn unreplicated_entries(&self) -> impl Iterator<Item = &LiveEntry> {
        let r = self.replicated_seq;
        self.live.iter().filter(move |e| e.entry.seq > r)
    }

    /// Everything up to the tail has been digested on every replica.
    pub fn mark_digested(&mut self) {
        self.digested_seq = self.tail_seq();
        self.head_pos = self.tail_pos;
        self.mirror_head = self.mirror_pos;
        self.live.clear();
        self.index.clear();
    }

    /// Rebuild the DRAM state from a scan of the durable ring.
    pub fn recover(id: u64, region: RegionId, sb: Superblock, scan: &Scan) -> UpdateLog {
        let mut log = UpdateLog::new(id, region, sb.capacity);
        log.head_pos = sb.head_pos;
        log.tail_pos = scan.end_pos.max(sb.head_pos);
        log.digested_seq = sb.head_seq;
        log.replicated_seq = sb.head_seq;
        log.replicated_pos = sb.head_pos;
        log.mirror_pos = sb.head_pos;
        log.mirror_head = sb.head_pos;
        let mut max_txn = 0;
        let mut last_seq = sb.head_seq;
        for le in &scan.entries {
            last_seq = le.entry.seq;
            max_txn = max_txn.max(le.entry.txn);
            if let LogOp::Write { ino, offset, data } = &le.entry.op {
                let bs = PAGE_SIZE as u64;
                for blk in offset / bs..(offset + data.len() as u64).div_ceil(bs) {
                    log.index.insert((*ino, blk), le.entry.seq);
                }
            }
            log.live.push_back(le.clone());
        }
        log.next_seq = last_seq + 1;
        log.next_txn = max_txn + 1;
        log
    }

    /// Linear-scan answer to the index query, for cross-checking.
    pub fn latest_write_scan(&self, ino: Ino, blk: u64) -> Option<Seq> {
        let bs = PAGE_SIZE as u64;
        self.live
            .iter()
            .rev()
            .find(|le| match &le.entry.op {
                LogOp::Write {
                    ino: i,
                    offset,
                    data,
                } => {
                    *i == ino
                        && *offset / bs <= blk
                        && blk < (*offset + data.len() as u64).div_ceil(bs)
                }
                _ => false,
            })
            .map(|le| le.entry.seq)
    }
}
