//! Test harness: workloads, runs under faults, and the checkers.

pub mod digest;
pub mod lincheck;
pub mod par;
pub mod prefix;
pub mod rejoin;
pub mod scenario;
pub mod sweeps;
pub mod workload;
