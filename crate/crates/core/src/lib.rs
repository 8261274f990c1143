//! Deterministic simulation of a replicated NVM file system with a
//! crash-consistent cache coherence layer.

pub mod cluster;
pub mod coherence;
pub mod config;
pub mod error;
pub mod fabric;
pub mod fscore;
pub mod harness;
pub mod ids;
pub mod kernfs;
pub mod media;
pub mod oplog;
pub mod posix;
pub mod replication;
pub mod simnet;
pub mod time;
pub mod world;

pub use error::{Error, Result};
