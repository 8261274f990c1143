//! Crate-wide error type.

use crate::ids::{NodeId, ProcId, RegionId};
use crate::posix::Errno;
use crate::time::SimTime;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Error {
    #[error("unknown region {0}")]
    UnknownRegion(RegionId),
    #[error("write of {len} bytes at offset {offset} exceeds region capacity {capacity}")]
    CapacityExceeded {
        offset: u64,
        len: u64,
        capacity: u64,
    },
    #[error("range {offset}+{len} out of bounds for region of {capacity} bytes")]
    OutOfRange {
        offset: u64,
        len: u64,
        capacity: u64,
    },
    #[error("SSD IO must be 4KB aligned (offset {offset}, len {len})")]
    Misaligned { offset: u64, len: u64 },
    #[error("region {0} is volatile; use a volatile write")]
    NotDurable(RegionId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("unknown process {0}")]
    UnknownProcess(ProcId),
    #[error("node {0} crashed")]
    NodeCrashed(NodeId),
    #[error("process {0} is dead")]
    ProcessDead(ProcId),
    #[error("destination node {node} failed (detected at {detected_at}ns)")]
    DstFailed { node: NodeId, detected_at: SimTime },
    #[error("region {region} is not registered for remote writes from {src}")]
    UnregisteredRegion { region: RegionId, src: String },
    #[error("update log full")]
    LogFull,
    #[error("log entry of {0} bytes can never fit in the update log")]
    EntryTooLarge(u64),
    #[error("checksum mismatch in log entry seq {0}")]
    Checksum(u64),
    #[error("permission denied")]
    PermissionDenied,
    #[error("{0}")]
    Posix(Errno),
    #[error("lease acquisition timed out")]
    LeaseTimeout,
    #[error("operation must wait until {until}ns")]
    Blocked { until: SimTime },
    #[error("replica {0} failed during replication")]
    ReplicaFailed(NodeId),
    #[error("chain for {0} has no live replica")]
    ChainUnavailable(String),
    #[error("log resize aborted: {0}")]
    ResizeAborted(String),
    #[error("invalid scenario: {0}")]
    ScenarioInvalid(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("malformed trace: {0}")]
    Trace(String),
    #[error("corrupt durable image: {0}")]
    Corrupt(String),
    #[error("linearizability search bound exceeded ({0} states)")]
    SearchBoundExceeded(usize),
    #[error("io: {0}")]
    Io(String),
}

impl From<Errno> for Error {
    fn from(e: Errno) -> Self {
        Error::Posix(e)
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl Error {
    /// True for failures that end the calling actor rather than the request.
    pub fn is_crash(&self) -> bool {
        matches!(self, Error::NodeCrashed(_) | Error::ProcessDead(_))
    }
}
