//! Scenario files and single runs.
//!
//! A scenario is a cluster config (same TOML keys) plus a seed, a
//! workload and a fault schedule:
//!
//! ```toml
//! seed = 7
//! nodes = [1, 2, 3]
//! mode = "optimistic"
//!
//! [[chains]]
//! mounts = ["/d"]
//! replicas = [1, 2, 3]
//!
//! [workload]
//! kind = "random"
//! procs = 3
//! ops = 40
//!
//! [[faults]]
//! at_ns = 2000000
//! kind = "crash_node"
//! node = 2
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ClusterConfig;
use crate::error::{Error, Result};
use crate::fabric::CrashTarget;
use crate::ids::{NodeId, ProcId};
use crate::posix::FsOp;
use crate::time::SimTime;
use crate::world::{Driver, Metrics, Timer, World};

use super::prefix;
use super::workload::{generate, ProcPlan, WorkloadSpec};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FaultKind {
    CrashNode { node: NodeId },
    CrashProc { proc: u32 },
    RestartNode { node: NodeId },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fault {
    pub at_ns: SimTime,
    #[serde(flatten)]
    pub kind: FaultKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub seed: u64,
    /// Stop the run at this simulated time.
    #[serde(default)]
    pub until_ns: Option<SimTime>,
    /// Restart crashed nodes after this delay.
    #[serde(default)]
    pub restart_after_ns: Option<SimTime>,
    #[serde(default)]
    pub workload: WorkloadSpec,
    #[serde(default)]
    pub faults: Vec<Fault>,
    #[serde(flatten)]
    pub cluster: ClusterConfig,
}

impl Scenario {
    pub fn new(cluster: ClusterConfig, workload: WorkloadSpec, seed: u64) -> Self {
        Scenario {
            seed,
            until_ns: None,
            restart_after_ns: None,
            workload,
            faults: vec![],
            cluster,
        }
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        let sc: Scenario = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        sc.cluster.validate()?;
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn plans(&self) -> Vec<ProcPlan> {
        generate(&self.workload, &self.cluster, self.seed)
    }

    /// A world with the workload spawned and faults scheduled.
    pub fn build(&self) -> Result<World> {
        build_world(
            &self.cluster,
            &self.plans(),
            &self.faults,
            self.restart_after_ns,
        )
    }
}

pub fn build_world(
    cfg: &ClusterConfig,
    plans: &[ProcPlan],
    faults: &[Fault],
    restart_after: Option<SimTime>,
) -> Result<World> {
    let mut w = World::new(cfg.clone())?;
    w.restart_after = restart_after;
    for p in plans {
        w.spawn(p.node, p.chain, p.ops.clone())?;
    }
    for f in faults {
        let t = match &f.kind {
            FaultKind::CrashNode { node } => Timer::Crash(CrashTarget::Node(*node)),
            FaultKind::CrashProc { proc } => Timer::Crash(CrashTarget::Proc(ProcId(*proc))),
            FaultKind::RestartNode { node } => Timer::Restart(*node),
        };
        w.schedule(f.at_ns, t);
    }
    Ok(w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub calls: usize,
    pub completed: usize,
    pub sim_time_ns: SimTime,
    pub trace_hash: String,
    pub node_hashes: BTreeMap<String, String>,
    pub metrics: Metrics,
    pub net_bytes: BTreeMap<String, u64>,
    pub remote_lease_hops: u64,
    pub checks: Vec<Check>,
}

impl RunSummary {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// Hash of everything observable about a run: the network trace, the
/// history and the final replica states.
pub fn run_hash(w: &World) -> String {
    let mut h = Sha256::new();
    h.update(w.fab.net.trace_hash().as_bytes());
    h.update(serde_json::to_vec(&w.history).expect("history serializes"));
    for n in w.nodes.keys() {
        h.update(w.hash_of(*n).unwrap_or_default().as_bytes());
    }
    hex::encode(h.finalize())
}

fn summarize(seed: u64, w: &World, checks: Vec<Check>) -> RunSummary {
    RunSummary {
        seed,
        calls: w.history.len(),
        completed: w.history.iter().filter(|r| r.response.is_some()).count(),
        sim_time_ns: w.now,
        trace_hash: run_hash(w),
        node_hashes: w
            .nodes
            .keys()
            .map(|n| (n.to_string(), w.hash_of(*n).unwrap_or_default()))
            .collect(),
        metrics: w.metrics.clone(),
        net_bytes: w
            .fab
            .net
            .metrics
            .bytes_by_tag
            .iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect(),
        remote_lease_hops: w.fab.net.metrics.remote_lease_hops(),
        checks,
    }
}

/// Run to completion, then run the checkers: no stuck calls, no lease
/// overlaps, histories explained by the model (allowing lost suffixes of
/// crashed processes), and converged replicas after quiesce.
pub fn run_checked(
    mut w: World,
    seed: u64,
    until: Option<SimTime>,
    mut driver: Driver,
) -> (World, RunSummary) {
    w.audit_steps = true;
    let until = until.unwrap_or(SimTime::MAX);
    w.run(&mut driver, until);
    // Finish whatever an explicit schedule left over.
    w.run(&mut Driver::Earliest, until);
    let mut checks = Vec::new();
    checks.push(Check {
        name: "no_fatal".into(),
        pass: w.metrics.fatal.is_empty(),
        detail: w.metrics.fatal.join("; "),
    });
    checks.push(Check {
        name: "lease_safety".into(),
        pass: w.metrics.lease_violations == 0,
        detail: format!(
            "{} violations in {} audits {}",
            w.metrics.lease_violations,
            w.metrics.lease_audits,
            w.metrics.violation_notes.join("; ")
        ),
    });
    let quiesced = w.quiesce();
    let verdict = prefix::check(&w);
    checks.push(Check {
        name: "prefix_consistency".into(),
        pass: verdict.is_ok() && quiesced.is_ok(),
        detail: match (&verdict, &quiesced) {
            (Err(e), _) => e.clone(),
            (_, Err(e)) => format!("quiesce: {e}"),
            (Ok(cut), _) => format!("cuts {cut:?}"),
        },
    });
    let conv = convergence(&w);
    checks.push(Check {
        name: "convergence".into(),
        pass: conv.is_ok(),
        detail: conv.err().unwrap_or_default(),
    });
    let s = summarize(seed, &w, checks);
    (w, s)
}

/// Every live replica of each chain holds the same namespace.
pub fn convergence(w: &World) -> std::result::Result<(), String> {
    for c in 0..w.cfg.chains.len() {
        let reps = w.replicas_of(c);
        let trees: Vec<_> = reps
            .iter()
            .filter_map(|n| w.tree_of(*n).map(|t| (*n, t)))
            .collect();
        if let Some((n0, t0)) = trees.first() {
            for (n, t) in &trees[1..] {
                if t != t0 {
                    return Err(format!(
                        "chain {c}: {n} and {n0} differ at {:?}",
                        t.first_difference(t0)
                    ));
                }
            }
        }
    }
    Ok(())
}

pub fn run_scenario(sc: &Scenario) -> Result<(World, RunSummary)> {
    let w = sc.build()?;
    Ok(run_checked(w, sc.seed, sc.until_ns, Driver::Earliest))
}

/// Ops of a plan, for quick construction in tests.
pub fn plan(node: u32, chain: usize, ops: Vec<FsOp>) -> ProcPlan {
    ProcPlan {
        node: NodeId(node),
        chain,
        ops,
    }
}
