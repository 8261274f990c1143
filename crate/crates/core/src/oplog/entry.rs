//! On-media encoding of update-log entries.
//!
//! Every entry is a fixed 64-byte little-endian header followed by its
//! payload, padded to 8 bytes:
//!
//! ```text
//!  0  magic        u32  0x4C4F4731 ("1GOL" on disk)
//!  4  op           u8
//!  5  flags        u8   BATCH_END = 1, PAD = 2
//!  6  reserved     u16
//!  8  seq          u64
//! 16  txn          u64
//! 24  ino          u64
//! 32  offset       u64
//! 40  aux          u64
//! 48  aux2         u64
//! 56  payload_len  u32
//! 60  crc32c       u32  over bytes 0..60 and the payload
//! ```
//!
//! A PAD entry carries no payload and tells a scanner to continue at the
//! start of the ring. Its `seq` is the seq of the entry that follows it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::{Ino, Seq};

pub const ENTRY_MAGIC: u32 = 0x4C4F_4731;
pub const HEADER_LEN: usize = 64;
pub const FLAG_BATCH_END: u8 = 1;
pub const FLAG_PAD: u8 = 2;

const OP_WRITE: u8 = 1;
const OP_CREATE: u8 = 2;
const OP_MKDIR: u8 = 3;
const OP_UNLINK: u8 = 4;
const OP_RENAME: u8 = 5;
const OP_TRUNCATE: u8 = 6;
const OP_SETATTR: u8 = 7;
const OP_PAD: u8 = 0;

/// A POSIX-level mutation as recorded in the log.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LogOp {
    Write {
        ino: Ino,
        offset: u64,
        data: Vec<u8>,
    },
    Create {
        parent: Ino,
        name: String,
        ino: Ino,
        mode: u32,
        uid: u32,
    },
    Mkdir {
        parent: Ino,
        name: String,
        ino: Ino,
        mode: u32,
        uid: u32,
    },
    /// Removes a file or an empty directory.
    Unlink {
        parent: Ino,
        name: String,
        ino: Ino,
    },
    Rename {
        src_parent: Ino,
        src_name: String,
        dst_parent: Ino,
        dst_name: String,
        ino: Ino,
        /// Inode displaced at the destination, if any.
        replaced: Option<Ino>,
    },
    Truncate {
        ino: Ino,
        size: u64,
    },
    SetAttr {
        ino: Ino,
        mode: u32,
    },
}

impl LogOp {
    /// The inode whose contents or attributes change.
    pub fn ino(&self) -> Ino {
        match self {
            LogOp::Write { ino, .. }
            | LogOp::Create { ino, .. }
            | LogOp::Mkdir { ino, .. }
            | LogOp::Unlink { ino, .. }
            | LogOp::Rename { ino, .. }
            | LogOp::Truncate { ino, .. }
            | LogOp::SetAttr { ino, .. } => *ino,
        }
    }

    /// Every inode this entry writes: the target plus touched directories.
    pub fn touched(&self) -> Vec<Ino> {
        match self {
            LogOp::Create { parent, ino, .. }
            | LogOp::Mkdir { parent, ino, .. }
            | LogOp::Unlink { parent, ino, .. } => vec![*parent, *ino],
            LogOp::Rename {
                src_parent,
                dst_parent,
                ino,
                replaced,
                ..
            } => {
                let mut v = vec![*src_parent, *dst_parent, *ino];
                v.extend(replaced.iter().copied());
                v.sort();
                v.dedup();
                v
            }
            other => vec![other.ino()],
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            LogOp::Write { .. } => "WRITE",
            LogOp::Create { .. } => "CREATE",
            LogOp::Mkdir { .. } => "MKDIR",
            LogOp::Unlink { .. } => "UNLINK",
            LogOp::Rename { .. } => "RENAME",
            LogOp::Truncate { .. } => "TRUNCATE",
            LogOp::SetAttr { .. } => "SETATTR",
        }
    }

    fn payload_len(&self) -> usize {
        match self {
            LogOp::Write { data, .. } => data.len(),
            LogOp::Create { name, .. } | LogOp::Mkdir { name, .. } | LogOp::Unlink { name, .. } => {
                name.len()
            }
            LogOp::Rename {
                src_name, dst_name, ..
            } => src_name.len() + 1 + dst_name.len(),
            LogOp::Truncate { .. } | LogOp::SetAttr { .. } => 0,
        }
    }
}

/// A decoded log entry.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LogEntry {
    pub seq: Seq,
    pub txn: u64,
    pub batch_end: bool,
    pub op: LogOp,
}

impl LogEntry {
    pub fn encoded_len(&self) -> usize {
        encoded_len(self.op.payload_len())
    }
}

pub fn encoded_len(payload: usize) -> usize {
    HEADER_LEN + payload.div_ceil(8) * 8
}

fn put64(h: &mut [u8], at: usize, v: u64) {
    h[at..at + 8].copy_from_slice(&v.to_le_bytes());
}

fn get64(h: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(h[at..at + 8].try_into().unwrap())
}

fn get32(h: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(h[at..at + 4].try_into().unwrap())
}

fn checksum(header: &[u8], payload: &[u8]) -> u32 {
    crc32c::crc32c_append(crc32c::crc32c(&header[..60]), payload)
}

pub fn encode(e: &LogEntry) -> Vec<u8> {
    let mut h = [0u8; HEADER_LEN];
    h[0..4].copy_from_slice(&ENTRY_MAGIC.to_le_bytes());
    h[5] = if e.batch_end { FLAG_BATCH_END } else { 0 };
    put64(&mut h, 8, e.seq);
    put64(&mut h, 16, e.txn);
    let payload: Vec<u8> = match &e.op {
        LogOp::Write { ino, offset, data } => {
            h[4] = OP_WRITE;
            put64(&mut h, 24, ino.0);
            put64(&mut h, 32, *offset);
            data.clone()
        }
        LogOp::Create {
            parent,
            name,
            ino,
            mode,
            uid,
        }
        | LogOp::Mkdir {
            parent,
            name,
            ino,
            mode,
            uid,
        } => {
            h[4] = if matches!(e.op, LogOp::Create { .. }) {
                OP_CREATE
            } else {
                OP_MKDIR
            };
            put64(&mut h, 24, ino.0);
            put64(&mut h, 40, parent.0);
            put64(&mut h, 48, *mode as u64 | (*uid as u64) << 32);
            name.as_bytes().to_vec()
        }
        LogOp::Unlink { parent, name, ino } => {
            h[4] = OP_UNLINK;
            put64(&mut h, 24, ino.0);
            put64(&mut h, 40, parent.0);
            name.as_bytes().to_vec()
        }
        LogOp::Rename {
            src_parent,
            src_name,
            dst_parent,
            dst_name,
            ino,
            replaced,
        } => {
            h[4] = OP_RENAME;
            put64(&mut h, 24, ino.0);
            put64(&mut h, 32, src_parent.0);
            put64(&mut h, 40, dst_parent.0);
            put64(&mut h, 48, replaced.map_or(0, |i| i.0));
            let mut p = src_name.as_bytes().to_vec();
            p.push(0);
            p.extend_from_slice(dst_name.as_bytes());
            p
        }
        LogOp::Truncate { ino, size } => {
            h[4] = OP_TRUNCATE;
            put64(&mut h, 24, ino.0);
            put64(&mut h, 40, *size);
            Vec::new()
        }
        LogOp::SetAttr { ino, mode } => {
            h[4] = OP_SETATTR;
            put64(&mut h, 24, ino.0);
            put64(&mut h, 40, *mode as u64);
            Vec::new()
        }
    };
    h[56..60].copy_from_slice(&(payload.len() as u32).to_le_bytes());
    let crc = checksum(&h, &payload);
    h[60..64].copy_from_slice(&crc.to_le_bytes());
    let mut out = Vec::with_capacity(encoded_len(payload.len()));
    out.extend_from_slice(&h);
    out.extend_from_slice(&payload);
    out.resize(encoded_len(payload.len()), 0);
    out
}

/// Encoded wrap marker; `next_seq` is the seq expected after the wrap.
pub fn encode_pad(next_seq: Seq) -> Vec<u8> {
    let mut h = [0u8; HEADER_LEN];
    h[0..4].copy_from_slice(&ENTRY_MAGIC.to_le_bytes());
    h[4] = OP_PAD;
    h[5] = FLAG_PAD;
    put64(&mut h, 8, next_seq);
    let crc = checksum(&h, &[]);
    h[60..64].copy_from_slice(&crc.to_le_bytes());
    h.to_vec()
}

/// Result of decoding the bytes at one log position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decoded {
    Entry(LogEntry, usize),
    Pad {
        next_seq: Seq,
    },
    /// No entry here: zero bytes or a foreign magic.
    Empty,
}

/// Parse the header only; returns the full encoded length if the magic
/// matches.
pub fn peek_len(header: &[u8]) -> Option<usize> {
    if header.len() < HEADER_LEN || get32(header, 0) != ENTRY_MAGIC {
        return None;
    }
    if header[5] & FLAG_PAD != 0 {
        return Some(HEADER_LEN);
    }
    Some(encoded_len(get32(header, 56) as usize))
}

/// Decode one entry from `buf` (header plus at least the payload).
/// A checksum mismatch is an error, distinct from an empty slot.
pub fn decode(buf: &[u8]) -> Result<Decoded> {
    if buf.len() < HEADER_LEN || get32(buf, 0) != ENTRY_MAGIC {
        return Ok(Decoded::Empty);
    }
    let h = &buf[..HEADER_LEN];
    let seq = get64(h, 8);
    if h[5] & FLAG_PAD != 0 {
        if checksum(h, &[]) != get32(h, 60) {
            return Err(Error::Checksum(seq));
        }
        return Ok(Decoded::Pad { next_seq: seq });
    }
    let plen = get32(h, 56) as usize;
    let total = encoded_len(plen);
    if buf.len() < total {
        return Err(Error::Checksum(seq));
    }
    let payload = &buf[HEADER_LEN..HEADER_LEN + plen];
    if checksum(h, payload) != get32(h, 60) {
        return Err(Error::Checksum(seq));
    }
    let ino = Ino(get64(h, 24));
    let name = || {
        String::from_utf8(payload.to_vec()).map_err(|_| Error::Corrupt(format!("name in {seq}")))
    };
    let op = match h[4] {
        OP_WRITE => LogOp::Write {
            ino,
            offset: get64(h, 32),
            data: payload.to_vec(),
        },
        OP_CREATE | OP_MKDIR => {
            let a2 = get64(h, 48);
            let (parent, name, mode, uid) =
                (Ino(get64(h, 40)), name()?, a2 as u32, (a2 >> 32) as u32);
            if h[4] == OP_CREATE {
                LogOp::Create {
                    parent,
                    name,
                    ino,
                    mode,
                    uid,
                }
            } else {
                LogOp::Mkdir {
                    parent,
                    name,
                    ino,
                    mode,
                    uid,
                }
            }
        }
        OP_UNLINK => LogOp::Unlink {
            parent: Ino(get64(h, 40)),
            name: name()?,
            ino,
        },
        OP_RENAME => {
            let split = payload
                .iter()
                .position(|&b| b == 0)
                .ok_or_else(|| Error::Corrupt(format!("rename payload in {seq}")))?;
            let s = |b: &[u8]| {
                String::from_utf8(b.to_vec())
                    .map_err(|_| Error::Corrupt(format!("rename name in {seq}")))
            };
            let replaced = get64(h, 48);
            LogOp::Rename {
                src_parent: Ino(get64(h, 32)),
                src_name: s(&payload[..split])?,
                dst_parent: Ino(get64(h, 40)),
                dst_name: s(&payload[split + 1..])?,
                ino,
                replaced: (replaced != 0).then_some(Ino(replaced)),
            }
        }
        OP_TRUNCATE => LogOp::Truncate {
            ino,
            size: get64(h, 40),
        },
        OP_SETATTR => LogOp::SetAttr {
            ino,
            mode: get64(h, 40) as u32,
        },
        other => return Err(Error::Corrupt(format!("unknown op code {other} in {seq}"))),
    };
    Ok(Decoded::Entry(
        LogEntry {
            seq,
            txn: get64(h, 16),
            batch_end: h[5] & FLAG_BATCH_END != 0,
            op,
        },
        total,
    ))
}
