//! Cluster configuration: nodes, chains, timeouts, sizes and latencies.
//!
//! Stored as TOML. Every field except `nodes` and `chains` has a default,
//! so a minimal file is just the topology:
//!
//! ```toml
//! nodes = [1, 2, 3]
//!
//! [[chains]]
//! mounts = ["/data"]
//! replicas = [1, 2]
//! reserve = 3
//! ```

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::NodeId;
use crate::media::LatencyModel;
use crate::posix::components;
use crate::simnet::MANAGER_NODE;
use crate::time::{MS, SEC};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// fsync replicates synchronously.
    #[default]
    Pessimistic,
    /// Replication waits for dsync; batches apply atomically.
    Optimistic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainSpec {
    /// Top-level directories served by this chain.
    pub mounts: Vec<String>,
    /// Cache replicas in preference order.
    pub replicas: Vec<NodeId>,
    #[serde(default)]
    pub reserve: Option<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Timeouts {
    pub heartbeat_ns: u64,
    pub heartbeat_timeout_ns: u64,
    pub lease_ns: u64,
    pub grace_ns: u64,
    pub manager_expiry_ns: u64,
    pub rpc_timeout_ns: u64,
    /// Fixed delay between a node restart and the start of its recovery
    /// (boot from a checkpointed OS image).
    pub boot_ns: u64,
}

impl Default for Timeouts {
    fn default() -> Self {
        Timeouts {
            heartbeat_ns: SEC,
            heartbeat_timeout_ns: SEC,
            lease_ns: 10 * SEC,
            grace_ns: SEC,
            manager_expiry_ns: 5 * SEC,
            rpc_timeout_ns: SEC,
            boot_ns: 10 * MS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Sizes {
    pub log_bytes: u64,
    pub hot_bytes: u64,
    pub cold_bytes: u64,
    pub dram_cache_bytes: u64,
    /// Digest starts when less than this fraction of the log is free.
    pub digest_free_fraction: f64,
    /// Log growth doubles up to this size, then adds `resize_increment`.
    pub resize_threshold: u64,
    pub resize_increment: u64,
    /// Grow the log on every threshold digest until it reaches this size;
    /// zero disables automatic resizing.
    pub auto_resize_max: u64,
    /// NVM each node may devote to update logs and their mirrors.
    pub log_budget_bytes: u64,
}

impl Default for Sizes {
    fn default() -> Self {
        Sizes {
            log_bytes: 16 << 20,
            hot_bytes: 256 << 20,
            cold_bytes: 4 << 30,
            dram_cache_bytes: 2 << 30,
            digest_free_fraction: 0.3,
            resize_threshold: 256 << 20,
            resize_increment: 64 << 20,
            auto_resize_max: 0,
            log_budget_bytes: 64 << 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    pub nodes: Vec<NodeId>,
    pub chains: Vec<ChainSpec>,
    #[serde(default)]
    pub mode: Mode,
    /// Coalesce segments before optimistic replication.
    #[serde(default = "yes")]
    pub coalesce: bool,
    /// Route every lease through one dedicated manager node that also
    /// forbids lease caching.
    #[serde(default)]
    pub single_manager: Option<NodeId>,
    /// Uid every application process runs as.
    #[serde(default = "default_uid")]
    pub uid: u32,
    #[serde(default)]
    pub timeouts: Timeouts,
    #[serde(default)]
    pub sizes: Sizes,
    #[serde(default)]
    pub latency: LatencyModel,
}

fn default_version() -> u32 {
    CONFIG_VERSION
}

fn yes() -> bool {
    true
}

fn default_uid() -> u32 {
    1000
}

impl ClusterConfig {
    /// One chain over `mounts` replicated on `replicas`.
    pub fn simple(replicas: &[u32], mounts: &[&str]) -> Self {
        ClusterConfig {
            version: CONFIG_VERSION,
            nodes: replicas.iter().map(|n| NodeId(*n)).collect(),
            chains: vec![ChainSpec {
                mounts: mounts.iter().map(|m| m.to_string()).collect(),
                replicas: replicas.iter().map(|n| NodeId(*n)).collect(),
                reserve: None,
            }],
            mode: Mode::Pessimistic,
            coalesce: true,
            single_manager: None,
            uid: default_uid(),
            timeouts: Timeouts::default(),
            sizes: Sizes::default(),
            latency: LatencyModel::default(),
        }
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        let c: ClusterConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.version != CONFIG_VERSION {
            return bad(format!("unsupported config version {}", self.version));
        }
        if self.nodes.is_empty() {
            return bad("no nodes".into());
        }
        let nodes: BTreeSet<NodeId> = self.nodes.iter().copied().collect();
        if nodes.len() != self.nodes.len() {
            return bad("duplicate node id".into());
        }
        if nodes.contains(&MANAGER_NODE) {
            return bad(format!(
                "node id {MANAGER_NODE} is reserved for the cluster manager"
            ));
        }
        if self.chains.is_empty() {
            return bad("no chains".into());
        }
        let mut mounts = BTreeSet::new();
        for c in &self.chains {
            if c.replicas.is_empty() {
                return bad("chain without replicas".into());
            }
            let reps: BTreeSet<NodeId> = c.replicas.iter().copied().collect();
            if reps.len() != c.replicas.len() {
                return bad("duplicate replica in chain".into());
            }
            for n in c.replicas.iter().chain(c.reserve.iter()) {
                if !nodes.contains(n) {
                    return bad(format!("chain member {n} is not a configured node"));
                }
            }
            if let Some(r) = c.reserve {
                if reps.contains(&r) {
                    return bad(format!("reserve {r} is also a cache replica"));
                }
            }
            if c.mounts.is_empty() {
                return bad("chain without mounts".into());
            }
            for m in &c.mounts {
                match components(m) {
                    Ok(cs) if cs.len() == 1 => {}
                    _ => return bad(format!("mount {m:?} must be a top-level directory")),
                }
                if !mounts.insert(m.clone()) {
                    return bad(format!("mount {m} served by two chains"));
                }
            }
        }
        if self.uid == 0 {
            return bad("application uid must be nonzero".into());
        }
        if let Some(m) = self.single_manager {
            if m == MANAGER_NODE {
                return bad("single manager cannot be the cluster manager node".into());
            }
        }
        let s = &self.sizes;
        if s.log_bytes < 4096 || s.hot_bytes < 4096 || s.cold_bytes < 4096 {
            return bad("log, hot and cold sizes must be at least 4 KB".into());
        }
        if !(0.0..1.0).contains(&s.digest_free_fraction) {
            return bad("digest_free_fraction must be in [0, 1)".into());
        }
        Ok(())
    }

    /// All nodes that need simulated hardware, including a dedicated
    /// manager node.
    pub fn all_nodes(&self) -> Vec<NodeId> {
        let mut v: BTreeSet<NodeId> = self.nodes.iter().copied().collect();
        v.extend(self.single_manager);
        v.into_iter().collect()
    }

    /// Every mount, in chain order.
    pub fn mounts(&self) -> Vec<String> {
        self.chains.iter().flat_map(|c| c.mounts.clone()).collect()
    }

    pub fn chain_of_mount(&self, mount: &str) -> Option<usize> {
        self.chains
            .iter()
            .position(|c| c.mounts.iter().any(|m| m == mount))
    }

    /// Chain serving an absolute path.
    pub fn chain_of_path(&self, path: &str) -> Option<usize> {
        let c = components(path).ok()?;
        self.chain_of_mount(&format!("/{}", c.first()?))
    }
}
