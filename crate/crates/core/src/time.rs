//! Simulated time. Everything is measured in nanoseconds on a single
//! logical clock owned by the event loop; nothing reads the wall clock.

pub type SimTime = u64;

pub const NS: SimTime = 1;
pub const US: SimTime = 1_000;
pub const MS: SimTime = 1_000_000;
pub const SEC: SimTime = 1_000_000_000;
