//! Append-only record stream in a durable region.
//!
//! Each record is one durable write: a 24-byte header followed by a JSON
//! payload, padded to 8 bytes.
//!
//! ```text
//!  0  magic   u32  0x4A524E4C
//!  4  len     u32  payload bytes
//!  8  jseq    u64  consecutive from 1
//! 16  crc32c  u32  over bytes 0..16 and the payload
//! 20  zero    u32
//! ```
//!
//! A scan accepts records while the magic, checksum and sequence number
//! all line up; the first mismatch is the end of the stream.

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::Result;
use crate::fabric::Fabric;
use crate::ids::RegionId;
use crate::media::Access;
use crate::simnet::Endpoint;
use crate::time::SimTime;

const MAGIC: u32 = 0x4A52_4E4C;
const HEADER: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Journal {
    pub region: RegionId,
    pub end: u64,
    pub next_jseq: u64,
}

pub fn encode<R: Serialize>(jseq: u64, rec: &R) -> Vec<u8> {
    let payload = serde_json::to_vec(rec).expect("journal records serialize");
    let total = (HEADER + payload.len()).div_ceil(8) * 8;
    let mut b = vec![0u8; total];
    b[0..4].copy_from_slice(&MAGIC.to_le_bytes());
    b[4..8].copy_from_slice(&(payload.len() as u32).to_le_bytes());
    b[8..16].copy_from_slice(&jseq.to_le_bytes());
    b[HEADER..HEADER + payload.len()].copy_from_slice(&payload);
    let crc = crc32c::crc32c_append(crc32c::crc32c(&b[0..16]), &payload);
    b[16..20].copy_from_slice(&crc.to_le_bytes());
    b
}

impl Journal {
    pub fn new(region: RegionId) -> Self {
        Journal {
            region,
            end: 0,
            next_jseq: 1,
        }
    }

    /// Read every valid record from the start of the region.
    pub fn scan<R, F>(region: RegionId, capacity: u64, mut read: F) -> (Journal, Vec<R>)
    where
        R: DeserializeOwned,
        F: FnMut(u64, usize) -> Vec<u8>,
    {
        let mut j = Journal::new(region);
        let mut out = Vec::new();
        while j.end + HEADER as u64 <= capacity {
            let h = read(j.end, HEADER);
            if u32::from_le_bytes(h[0..4].try_into().unwrap()) != MAGIC {
                break;
            }
            let len = u32::from_le_bytes(h[4..8].try_into().unwrap()) as usize;
            let jseq = u64::from_le_bytes(h[8..16].try_into().unwrap());
            let crc = u32::from_le_bytes(h[16..20].try_into().unwrap());
            if jseq != j.next_jseq || j.end + (HEADER + len) as u64 > capacity {
                break;
            }
            let payload = read(j.end + HEADER as u64, len);
            if crc32c::crc32c_append(crc32c::crc32c(&h[0..16]), &payload) != crc {
                break;
            }
            let Ok(rec) = serde_json::from_slice::<R>(&payload) else {
                break;
            };
            out.push(rec);
            j.end += ((HEADER + len).div_ceil(8) * 8) as u64;
            j.next_jseq += 1;
        }
        (j, out)
    }

    /// Append one record as a single durable write; returns its
    /// persistence deadline.
    pub fn append<R: Serialize>(
        &mut self,
        fab: &mut Fabric,
        actor: Endpoint,
        rec: &R,
        t: SimTime,
        access: Access,
    ) -> Result<SimTime> {
        let b = encode(self.next_jseq, rec);
        let done = fab.write(actor, self.region, self.end, &b, t, access)?;
        self.end += b.len() as u64;
        self.next_jseq += 1;
        Ok(done)
    }

    /// Append to a peer's copy of this stream over RDMA.
    pub fn append_remote<R: Serialize>(
        &mut self,
        fab: &mut Fabric,
        src: Endpoint,
        dst: Endpoint,
        rec: &R,
        t: SimTime,
        tag: crate::simnet::Tag,
    ) -> Result<SimTime> {
        let b = encode(self.next_jseq, rec);
        let done = fab.rdma_write(src, dst, self.region, self.end, &b, t, tag)?;
        self.end += b.len() as u64;
        self.next_jseq += 1;
        Ok(done)
    }
}
