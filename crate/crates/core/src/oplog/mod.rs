//! The per-process persistent update log.

pub mod coalesce;
pub mod entry;
pub mod log;

pub use coalesce::coalesce;
pub use entry::{LogEntry, LogOp};
pub use log::{scan, split_write, LiveEntry, Ring, Scan, Superblock, UpdateLog};

/// Growth policy for log resizing: double until `threshold`, then add
/// `increment` at a time.
pub fn next_log_size(current: u64, threshold: u64, increment: u64) -> u64 {
    if current < threshold {
        (current * 2).min(threshold.max(current + 1))
    } else {
        current + increment
    }
}
