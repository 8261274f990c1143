//! The simulated cluster and its event loop.
//!
//! A [`World`] owns the fabric, one KernFS per live node, every LibFS
//! process and the cluster manager. Time advances by discrete steps: a
//! process step runs one POSIX call (or one retry of a blocked call)
//! atomically, and timers drive crashes, heartbeats and recovery.
//!
//! Steps are taken in order of start time, so the order in which calls
//! take effect is always consistent with real time. That order is kept
//! in the history for the checkers.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::cluster::ClusterManager;
use crate::config::{ClusterConfig, Mode};
use crate::error::{Error, Result};
use crate::fabric::{CrashTarget, Fabric, IoStats};
use crate::fscore::{LibFs, Provenance, ReadCache};
use crate::ids::{Ino, LeaseId, NodeId, ProcId, RegionId, ROOT_INO};
use crate::kernfs::journal::Journal;
use crate::kernfs::node::{KernFs, KfsRec};
use crate::kernfs::shared::{AreaLayout, Role, SharedArea};
use crate::media::{Access, CutPolicy, Tier};
use crate::oplog::{Superblock, UpdateLog};
use crate::posix::{FsOp, FsRet, FsTree};
use crate::simnet::Endpoint;
use crate::time::SimTime;

/// KernFS log regions are sparse; this only bounds their address space.
pub const KFS_LOG_BYTES: u64 = 1 << 34;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Timer {
    Crash(CrashTarget),
    Restart(NodeId),
    Heartbeat,
    Detect(NodeId),
    RejoinReady(NodeId),
    RecoverLog(u64),
    Spawn(usize),
}

/// Catalog entry of an update log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogMeta {
    pub pid: ProcId,
    pub node: NodeId,
    pub chain: usize,
    pub region: RegionId,
    pub capacity: u64,
    pub retired: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpRecord {
    pub pid: ProcId,
    pub index: usize,
    pub op: FsOp,
    pub invoke: SimTime,
    pub response: Option<SimTime>,
    pub ret: Option<FsRet>,
    /// Position in the order in which calls took effect.
    pub exec: Option<u64>,
    pub provenance: Vec<Provenance>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterEvent {
    pub time: SimTime,
    pub what: String,
}

/// Timing and IO of one fail-over.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailoverRecord {
    pub node: NodeId,
    pub crashed_at: SimTime,
    pub detected_at: SimTime,
    pub finished_at: SimTime,
    pub logs_recovered: usize,
    pub entries_digested: u64,
    pub io: IoStats,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejoinRecord {
    pub node: NodeId,
    pub crashed_at: SimTime,
    pub restarted_at: SimTime,
    pub finished_at: SimTime,
    pub fail_epoch: u64,
    pub invalidated: BTreeSet<Ino>,
    /// Each peer's bitmap epochs at or above the fail epoch, as read.
    pub peer_bitmaps: BTreeMap<NodeId, BTreeMap<u64, BTreeSet<Ino>>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RestartRecord {
    pub node: NodeId,
    pub crashed_at: SimTime,
    pub restarted_at: SimTime,
    pub finished_at: SimTime,
    pub logs_recovered: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metrics {
    pub ops: u64,
    pub ops_by_kind: BTreeMap<String, u64>,
    pub appended_bytes: u64,
    /// Log bytes written to mirrors, summed over replicas.
    pub replicated_bytes: u64,
    pub chain_evictions: u64,
    pub threshold_evictions: u64,
    pub lease_grants: u64,
    pub lease_renewals: u64,
    pub revocations: u64,
    pub migrations: u64,
    pub lease_audits: u64,
    pub lease_violations: u64,
    pub violation_notes: Vec<String>,
    pub blocked_retries: u64,
    pub refetched_inodes: u64,
    pub provenance: BTreeMap<String, u64>,
    pub resizes: u64,
    pub resize_aborts: u64,
    pub failovers: Vec<FailoverRecord>,
    pub rejoins: Vec<RejoinRecord>,
    pub restarts: Vec<RestartRecord>,
    pub promotions: u64,
    pub fatal: Vec<String>,
}

/// Which process runs next.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Driver {
    /// Earliest ready process first, ties by pid.
    Earliest,
    /// An explicit interleaving: one step per entry.
    Script(VecDeque<ProcId>),
}

/// A process to start later.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpawnSpec {
    pub node: NodeId,
    pub chain: usize,
    pub ops: Vec<FsOp>,
}

#[derive(Clone)]
pub struct World {
    pub cfg: ClusterConfig,
    pub fab: Fabric,
    pub now: SimTime,
    /// Start time of the latest step; later steps never start earlier.
    pub floor: SimTime,
    pub layouts: BTreeMap<NodeId, AreaLayout>,
    pub nodes: BTreeMap<NodeId, KernFs>,
    pub procs: BTreeMap<ProcId, LibFs>,
    pub logs: BTreeMap<u64, LogMeta>,
    /// Mirror of a log on a chain member.
    pub mirrors: BTreeMap<(u64, NodeId), RegionId>,
    pub kfs_regions: BTreeMap<NodeId, RegionId>,
    /// Mirror of a writer's KernFS log hosted on another node.
    pub kfs_mirrors: BTreeMap<(NodeId, NodeId), RegionId>,
    pub cm: ClusterManager,
    pub history: Vec<OpRecord>,
    pub metrics: Metrics,
    pub events: Vec<ClusterEvent>,
    pub timers: BTreeMap<(SimTime, u64), Timer>,
    pub spawns: Vec<SpawnSpec>,
    /// When set, every appended transaction is recorded with the inodes
    /// it touches.
    pub record_appends: bool,
    pub appends: Vec<(SimTime, ProcId, Vec<Ino>)>,
    /// Restart crashed nodes after this delay.
    pub restart_after: Option<SimTime>,
    /// Check every pair of held leases after each step, not only at
    /// grant time.
    pub audit_steps: bool,
    /// Inodes fetched from a peer during the current step.
    pub(crate) refetched: BTreeSet<Ino>,
    timer_seq: u64,
    next_pid: u32,
    pub(crate) next_lease: u64,
    exec_counter: u64,
}

pub(crate) enum Outcome {
    Retry(SimTime),
    OwnCrash,
    Fatal(Error),
}

impl World {
    pub fn new(cfg: ClusterConfig) -> Result<World> {
        cfg.validate()?;
        let mut fab = Fabric::new(cfg.latency.clone());
        fab.net.rpc_timeout = cfg.timeouts.rpc_timeout_ns;
        let mounts: Vec<(String, Ino)> = cfg
            .mounts()
            .into_iter()
            .enumerate()
            .map(|(i, m)| (m, Ino::for_process(ProcId(0), 2 + i as u32)))
            .collect();
        let reserves: BTreeSet<NodeId> = cfg.chains.iter().filter_map(|c| c.reserve).collect();
        let mut layouts = BTreeMap::new();
        let mut nodes = BTreeMap::new();
        let mut kfs_regions = BTreeMap::new();
        let mut t = 0;
        for n in cfg.all_nodes() {
            fab.media.add_node(n);
            let layout = AreaLayout::alloc(&mut fab, n, cfg.sizes.hot_bytes, cfg.sizes.cold_bytes)?;
            let role = if reserves.contains(&n) {
                Role::Reserve
            } else {
                Role::Cache
            };
            let (area, t2) = SharedArea::format(&mut fab, n, layout, role, &mounts, t)?;
            t = t2;
            let kfs = fab.media.alloc(n, Tier::Nvm, KFS_LOG_BYTES, None)?;
            kfs_regions.insert(n, kfs);
            layouts.insert(n, layout);
            nodes.insert(n, KernFs::new(n, area, Journal::new(kfs)));
        }
        let cm = ClusterManager::new(&cfg);
        let mut w = World {
            cfg,
            fab,
            now: 0,
            floor: 0,
            layouts,
            nodes,
            procs: BTreeMap::new(),
            logs: BTreeMap::new(),
            mirrors: BTreeMap::new(),
            kfs_regions,
            kfs_mirrors: BTreeMap::new(),
            cm,
            history: Vec::new(),
            metrics: Metrics::default(),
            events: Vec::new(),
            timers: BTreeMap::new(),
            spawns: Vec::new(),
            record_appends: false,
            appends: Vec::new(),
            restart_after: None,
            audit_steps: false,
            refetched: BTreeSet::new(),
            timer_seq: 0,
            next_pid: 1,
            next_lease: 1,
            exec_counter: 0,
        };
        for n in w.cfg.all_nodes() {
            for p in w.kfs_peers_all(n) {
                w.alloc_kfs_mirror(n, p)?;
            }
        }
        // Initial domain managers: the first replica of each chain, or the
        // dedicated manager.
        let assigns: Vec<(String, NodeId)> =
            w.cm.domains
                .iter()
                .map(|(d, i)| (d.clone(), i.manager))
                .collect();
        for (d, m) in assigns {
            w.nodes
                .get_mut(&m)
                .expect("manager node")
                .tables
                .insert(d.clone(), Default::default());
            t = w.kfs_append(m, &d, &KfsRec::Assign { domain: d.clone() }, t)?;
            for k in w.nodes.values_mut() {
                k.hints.insert(d.clone(), m);
            }
        }
        w.fab.media.advance_to(t);
        w.now = t;
        w.floor = t;
        Ok(w)
    }

    // ----- small helpers -------------------------------------------------

    pub fn mounts(&self) -> Vec<String> {
        self.cfg.mounts()
    }

    pub fn single_manager(&self) -> bool {
        self.cfg.single_manager.is_some()
    }

    pub fn mode(&self) -> Mode {
        self.cfg.mode
    }

    pub fn event(&mut self, time: SimTime, what: impl Into<String>) {
        self.events.push(ClusterEvent {
            time,
            what: what.into(),
        });
    }

    pub fn schedule(&mut self, at: SimTime, t: Timer) {
        self.timer_seq += 1;
        self.timers.insert((at, self.timer_seq), t);
    }

    pub fn kernfs(&self, n: NodeId) -> Result<&KernFs> {
        self.nodes.get(&n).ok_or(Error::NodeCrashed(n))
    }

    pub fn kernfs_mut(&mut self, n: NodeId) -> Result<&mut KernFs> {
        self.nodes.get_mut(&n).ok_or(Error::NodeCrashed(n))
    }

    pub fn proc(&self, p: ProcId) -> Result<&LibFs> {
        self.procs.get(&p).ok_or(Error::UnknownProcess(p))
    }

    pub fn proc_mut(&mut self, p: ProcId) -> Result<&mut LibFs> {
        self.procs.get_mut(&p).ok_or(Error::UnknownProcess(p))
    }

    /// Nodes that mirror `n`'s KernFS log: every other member of a chain
    /// `n` belongs to.
    pub(crate) fn kfs_peers_all(&self, n: NodeId) -> Vec<NodeId> {
        let mut s = BTreeSet::new();
        if let Some(m) = self.cfg.single_manager {
            // The dedicated manager's log is mirrored everywhere.
            if m == n {
                s.extend(self.cfg.nodes.iter().copied().filter(|x| *x != n));
            } else {
                s.insert(m);
            }
        }
        for c in &self.cfg.chains {
            let members: Vec<NodeId> = c.replicas.iter().copied().chain(c.reserve).collect();
            if members.contains(&n) {
                s.extend(members.into_iter().filter(|m| *m != n));
            }
        }
        s.into_iter().collect()
    }

    pub(crate) fn alloc_kfs_mirror(&mut self, writer: NodeId, host: NodeId) -> Result<RegionId> {
        let r = self.fab.media.alloc(host, Tier::Nvm, KFS_LOG_BYTES, None)?;
        self.fab.net.register(r, Endpoint::kernfs(writer));
        self.kfs_mirrors.insert((writer, host), r);
        if let Some(k) = self.nodes.get_mut(&writer) {
            k.kfs_out.insert(host, Journal::new(r));
        }
        Ok(r)
    }

    /// Append a record to `n`'s KernFS log and to its mirrors on the live
    /// members of the domain's chain.
    pub(crate) fn kfs_append(
        &mut self,
        n: NodeId,
        domain: &str,
        rec: &KfsRec,
        t: SimTime,
    ) -> Result<SimTime> {
        let me = Endpoint::kernfs(n);
        let peers: Vec<NodeId> = match self.cfg.chain_of_mount(domain) {
            Some(c) => self
                .cm
                .chain_nodes(c)
                .into_iter()
                .filter(|p| *p != n && self.kfs_mirrors.contains_key(&(n, *p)))
                .collect(),
            None => vec![],
        };
        let k = self.nodes.get_mut(&n).ok_or(Error::NodeCrashed(n))?;
        let mut t = k.kfs.append(&mut self.fab, me, rec, t, Access::Kernel)?;
        for p in peers {
            let region = self.kfs_mirrors[&(n, p)];
            let j = k.kfs_out.entry(p).or_insert_with(|| Journal::new(region));
            t = j.append_remote(
                &mut self.fab,
                me,
                Endpoint::kernfs(p),
                rec,
                t,
                crate::simnet::Tag::KfsLog,
            )?;
        }
        Ok(t)
    }

    /// Bytes of update logs and mirrors held on a node.
    pub(crate) fn log_bytes_on(&self, n: NodeId) -> u64 {
        let own: u64 = self
            .logs
            .values()
            .filter(|m| m.node == n && !m.retired)
            .map(|m| m.capacity)
            .sum();
        let mirrored: u64 = self
            .mirrors
            .iter()
            .filter(|((l, host), _)| *host == n && self.logs.get(l).is_some_and(|m| !m.retired))
            .map(|((l, _), _)| self.logs[l].capacity)
            .sum();
        own + mirrored
    }

    // ----- processes -----------------------------------------------------

    /// Start a process at simulated time `at`.
    pub fn spawn_at(&mut self, at: SimTime, node: NodeId, chain: usize, ops: Vec<FsOp>) {
        self.spawns.push(SpawnSpec { node, chain, ops });
        let i = self.spawns.len() - 1;
        self.schedule(at, Timer::Spawn(i));
    }

    /// Start a LibFS process on `node` serving `chain`, with a script.
    pub fn spawn(&mut self, node: NodeId, chain: usize, ops: Vec<FsOp>) -> Result<ProcId> {
        if chain >= self.cfg.chains.len() {
            return Err(Error::ScenarioInvalid(format!("no chain {chain}")));
        }
        if !self.cm.chains[chain].caches.contains(&node) {
            return Err(Error::ScenarioInvalid(format!(
                "node {node} is not a live cache replica of chain {chain}"
            )));
        }
        if !self.fab.node_up(node) {
            return Err(Error::NodeCrashed(node));
        }
        let pid = ProcId(self.next_pid);
        self.next_pid += 1;
        let cap = self.cfg.sizes.log_bytes;
        let log_id = pid.0 as u64;
        let members = self.chain_members(chain, node);
        for m in &members {
            if self.log_bytes_on(*m) + cap > self.cfg.sizes.log_budget_bytes {
                return Err(Error::ScenarioInvalid(format!(
                    "log budget exhausted on {m}"
                )));
            }
        }
        let region = self.fab.media.alloc(node, Tier::Nvm, cap, Some(pid))?;
        let t = self.now;
        let me = Endpoint::libfs(node, pid);
        let log = UpdateLog::new(log_id, region, cap);
        self.fab
            .write(me, region, 0, &log.superblock().encode(), t, Access::Local)?;
        self.logs.insert(
            log_id,
            LogMeta {
                pid,
                node,
                chain,
                region,
                capacity: cap,
                retired: false,
            },
        );
        for m in members.iter().skip(1) {
            self.alloc_log_mirror(log_id, *m, cap)?;
        }
        let dram =
            self.fab
                .media
                .alloc(node, Tier::Dram, self.cfg.sizes.dram_cache_bytes, Some(pid))?;
        for m in self.chain_spec_nodes(chain) {
            self.fab.net.register(dram, Endpoint::kernfs(m));
        }
        let cache = ReadCache::new(
            dram,
            self.cfg.sizes.dram_cache_bytes / crate::kernfs::state::BLOCK,
        );
        let uid = self.cfg.uid;
        self.procs
            .insert(pid, LibFs::new(pid, node, chain, uid, log, cache, t, ops));
        self.event(t, format!("spawn {pid} on {node}"));
        Ok(pid)
    }

    pub(crate) fn alloc_log_mirror(
        &mut self,
        log: u64,
        host: NodeId,
        cap: u64,
    ) -> Result<RegionId> {
        let meta = self.logs[&log].clone();
        let r = self.fab.media.alloc(host, Tier::Nvm, cap, None)?;
        self.fab
            .net
            .register(r, Endpoint::libfs(meta.node, meta.pid));
        for m in self.chain_spec_nodes(meta.chain) {
            self.fab.net.register(r, Endpoint::kernfs(m));
        }
        self.mirrors.insert((log, host), r);
        Ok(r)
    }

    /// Every node configured for a chain, live or not.
    pub(crate) fn chain_spec_nodes(&self, chain: usize) -> Vec<NodeId> {
        let c = &self.cfg.chains[chain];
        c.replicas.iter().copied().chain(c.reserve).collect()
    }

    /// Live chain order for a log headed at `head`: the head, the other
    /// cache replicas, then the reserve.
    pub fn chain_members(&self, chain: usize, head: NodeId) -> Vec<NodeId> {
        let mut v = vec![head];
        v.extend(
            self.cm
                .chain_nodes(chain)
                .into_iter()
                .filter(|n| *n != head),
        );
        v
    }

    pub fn push_ops(&mut self, pid: ProcId, ops: impl IntoIterator<Item = FsOp>) -> Result<()> {
        self.proc_mut(pid)?.script.extend(ops);
        Ok(())
    }

    // ----- event loop ----------------------------------------------------

    fn runnable(&self, p: &LibFs) -> bool {
        p.alive && !p.stuck && (p.current.is_some() || !p.script.is_empty() || p.pending_release)
    }

    fn next_proc(&self, driver: &mut Driver) -> Option<(ProcId, SimTime)> {
        match driver {
            Driver::Earliest => self
                .procs
                .values()
                .filter(|p| self.runnable(p))
                .map(|p| (p.clock, p.pid))
                .min()
                .map(|(c, p)| (p, c)),
            Driver::Script(q) => {
                while let Some(pid) = q.front().copied() {
                    match self.procs.get(&pid) {
                        Some(p) if self.runnable(p) => return Some((pid, p.clock.max(self.floor))),
                        _ => {
                            q.pop_front();
                        }
                    }
                }
                None
            }
        }
    }

    /// Run until nothing is left to do or simulated time passes `until`.
    pub fn run(&mut self, driver: &mut Driver, until: SimTime) {
        loop {
            let proc_next = self.next_proc(driver);
            let timer_next = self.timers.keys().next().copied();
            match (proc_next, timer_next) {
                (None, None) => break,
                (p, Some((tt, seq))) if p.is_none_or(|(_, pt)| tt <= pt) => {
                    if tt > until {
                        break;
                    }
                    let timer = self.timers.remove(&(tt, seq)).expect("timer present");
                    self.now = self.now.max(tt);
                    self.floor = self.floor.max(tt);
                    self.fab.media.advance_to(self.now);
                    self.fire(timer, tt);
                }
                (Some((pid, pt)), _) => {
                    if pt > until {
                        break;
                    }
                    if let Driver::Script(q) = driver {
                        q.pop_front();
                    }
                    self.step(pid);
                }
                (None, Some(_)) => unreachable!("handled by the timer arm"),
            }
        }
    }

    /// Run to completion with the default driver.
    pub fn run_all(&mut self, until: SimTime) {
        self.run(&mut Driver::Earliest, until);
    }

    fn fire(&mut self, timer: Timer, t: SimTime) {
        match timer {
            Timer::Crash(CrashTarget::Node(n)) => {
                if self.fab.node_up(n) {
                    self.fab.crash_node(n, &CutPolicy::KeepAll);
                    self.on_node_crash(n, t);
                }
            }
            Timer::Crash(CrashTarget::Proc(p)) => {
                if self.procs.get(&p).is_some_and(|x| x.alive) {
                    self.fab.crash_proc(p);
                    self.on_proc_crash(p, t);
                }
            }
            Timer::Restart(n) => self.on_restart(n, t),
            Timer::Heartbeat => self.on_heartbeat(t),
            Timer::Detect(n) => self.on_detect(n, t),
            Timer::RejoinReady(n) => self.on_rejoin_ready(n, t),
            Timer::RecoverLog(l) => self.on_recover_log(l, t),
            Timer::Spawn(i) => {
                let s = self.spawns[i].clone();
                if let Err(e) = self.spawn(s.node, s.chain, s.ops) {
                    self.event(t, format!("spawn {i} failed: {e}"));
                }
            }
        }
        self.handle_fired(t);
    }

    /// React to crashes fired by an armed trap.
    pub(crate) fn handle_fired(&mut self, t: SimTime) {
        for target in self.fab.take_fired() {
            match target {
                CrashTarget::Node(n) => self.on_node_crash(n, t),
                CrashTarget::Proc(p) => self.on_proc_crash(p, t),
            }
        }
    }

    pub(crate) fn classify(&self, e: Error, pid: ProcId, t: SimTime) -> Outcome {
        let own_node = self.procs[&pid].node;
        let timeout = self.cfg.timeouts.rpc_timeout_ns;
        match e {
            Error::Blocked { until } => Outcome::Retry(until),
            Error::DstFailed { detected_at, .. } => Outcome::Retry(detected_at),
            Error::NodeCrashed(n) if n == own_node => Outcome::OwnCrash,
            Error::ProcessDead(p) if p == pid => Outcome::OwnCrash,
            Error::NodeCrashed(_) => Outcome::Retry(t + timeout),
            Error::ProcessDead(_) => Outcome::Retry(t + 1),
            Error::ChainUnavailable(_) | Error::ReplicaFailed(_) => Outcome::Retry(t + timeout),
            other => Outcome::Fatal(other),
        }
    }

    fn step(&mut self, pid: ProcId) {
        let (clock, node) = {
            let p = &self.procs[&pid];
            (p.clock, p.node)
        };
        let t0 = clock.max(self.floor);
        self.floor = t0;
        self.now = self.now.max(t0);
        self.fab.media.advance_to(t0);
        self.refetched.clear();
        let _ = node;
        if self.procs[&pid].pending_release {
            match self.release_all(pid, t0) {
                Ok(t) => {
                    let p = self.procs.get_mut(&pid).unwrap();
                    p.pending_release = false;
                    p.clock = t.max(t0 + 1);
                }
                Err(e) => self.park(pid, e, t0),
            }
            self.handle_fired(t0);
            return;
        }
        let h = match self.procs[&pid].current {
            Some(h) => h,
            None => {
                let p = self.procs.get_mut(&pid).unwrap();
                let Some(op) = p.script.pop_front() else {
                    return;
                };
                let index = p.issued;
                p.issued += 1;
                self.history.push(OpRecord {
                    pid,
                    index,
                    op,
                    invoke: t0,
                    response: None,
                    ret: None,
                    exec: None,
                    provenance: vec![],
                });
                let h = self.history.len() - 1;
                self.procs.get_mut(&pid).unwrap().current = Some(h);
                h
            }
        };
        let op = self.history[h].op.clone();
        match self.exec(pid, h, &op, t0) {
            Ok((ret, prov, t)) => {
                let t = t.max(t0 + 1);
                let rec = &mut self.history[h];
                rec.response = Some(t);
                rec.ret = Some(ret);
                for pv in &prov {
                    *self
                        .metrics
                        .provenance
                        .entry(pv.name().to_string())
                        .or_default() += 1;
                }
                rec.provenance = prov;
                self.metrics.ops += 1;
                *self
                    .metrics
                    .ops_by_kind
                    .entry(op.name().to_string())
                    .or_default() += 1;
                let single = self.single_manager();
                let p = self.procs.get_mut(&pid).unwrap();
                p.current = None;
                p.completed += 1;
                if op.is_sync() && (op == FsOp::Dsync || self.cfg.mode == Mode::Pessimistic) {
                    p.durable_upto = p.completed;
                }
                p.clock = t;
                if single {
                    p.pending_release = true;
                }
            }
            Err(e) => self.park(pid, e, t0),
        }
        self.handle_fired(t0);
        if self.audit_steps {
            self.audit_held(t0);
        }
    }

    fn audit_held(&mut self, now: SimTime) {
        let held = self.held_leases(now);
        let bad = crate::coherence::overlapping(&held, now);
        self.metrics.lease_audits += 1;
        for (a, b) in bad {
            self.metrics.lease_violations += 1;
            if self.metrics.violation_notes.len() < 16 {
                self.metrics
                    .violation_notes
                    .push(format!("t={now}: held leases {a} and {b} overlap"));
            }
        }
    }

    fn park(&mut self, pid: ProcId, e: Error, t0: SimTime) {
        match self.classify(e, pid, t0) {
            Outcome::Retry(at) => {
                self.metrics.blocked_retries += 1;
                let p = self.procs.get_mut(&pid).unwrap();
                p.clock = at.max(t0 + 1);
            }
            Outcome::OwnCrash => {
                let p = self.procs.get_mut(&pid).unwrap();
                p.clock = t0 + 1;
            }
            Outcome::Fatal(e) => {
                self.metrics.fatal.push(format!("{pid} at {t0}: {e}"));
                let p = self.procs.get_mut(&pid).unwrap();
                p.stuck = true;
            }
        }
    }

    pub(crate) fn next_exec(&mut self) -> u64 {
        self.exec_counter += 1;
        self.exec_counter
    }

    // ----- crashes -------------------------------------------------------

    pub(crate) fn on_proc_crash(&mut self, p: ProcId, t: SimTime) {
        let Some(lp) = self.procs.get_mut(&p) else {
            return;
        };
        if !lp.alive {
            return;
        }
        lp.alive = false;
        lp.held.clear();
        let node = lp.node;
        self.event(t, format!("crash {p}"));
        if self.fab.node_up(node) && self.nodes.contains_key(&node) {
            self.on_recover_log(p.0 as u64, t);
        }
    }

    pub(crate) fn on_recover_log(&mut self, log: u64, t: SimTime) {
        let Some(meta) = self.logs.get(&log) else {
            return;
        };
        if meta.retired || !self.fab.node_up(meta.node) || !self.nodes.contains_key(&meta.node) {
            return;
        }
        match self.recover_log(log, t) {
            Ok(done) => {
                self.event(done, format!("log {log} recovered"));
            }
            Err(e) => {
                let at = match e {
                    Error::Blocked { until } => until,
                    Error::DstFailed { detected_at, .. } => detected_at,
                    _ => t + self.cfg.timeouts.rpc_timeout_ns,
                };
                self.event(t, format!("log {log} recovery deferred: {e}"));
                self.schedule(at.max(t + 1), Timer::RecoverLog(log));
            }
        }
    }

    pub(crate) fn on_node_crash(&mut self, n: NodeId, t: SimTime) {
        self.event(t, format!("crash {n}"));
        for p in self.procs.values_mut().filter(|p| p.node == n && p.alive) {
            p.alive = false;
            p.held.clear();
        }
        self.nodes.remove(&n);
        self.cm.crashed_at.insert(n, t);
        if let Some(d) = self.restart_after {
            self.schedule(t + d, Timer::Restart(n));
        }
        if !self.cm.heartbeat_pending {
            let hb = self.cfg.timeouts.heartbeat_ns;
            self.cm.heartbeat_pending = true;
            self.schedule((t / hb + 1) * hb, Timer::Heartbeat);
        }
    }

    // ----- audits and views ----------------------------------------------

    /// Namespace of one node's shared area below all mounts.
    pub fn tree_of(&self, n: NodeId) -> Option<FsTree> {
        let k = self.nodes.get(&n)?;
        Some(k.area.tree(&self.fab, &self.mounts()))
    }

    pub fn hash_of(&self, n: NodeId) -> Option<String> {
        let k = self.nodes.get(&n)?;
        Some(k.area.state_hash(&self.fab, &self.mounts()))
    }

    /// Every live lease held by a live process.
    pub fn held_leases(&self, now: SimTime) -> Vec<crate::coherence::Lease> {
        self.procs
            .values()
            .filter(|p| p.alive)
            .flat_map(|p| p.held.values().filter(|l| l.live(now)).cloned())
            .collect()
    }

    pub(crate) fn audit_grant(&mut self, new: &crate::coherence::Lease, now: SimTime) {
        self.metrics.lease_audits += 1;
        for p in self.procs.values().filter(|p| p.alive) {
            for l in p.held.values().filter(|l| l.live(now)) {
                if l.id != new.id && crate::coherence::conflicts(l, new) {
                    self.metrics.lease_violations += 1;
                    if self.metrics.violation_notes.len() < 16 {
                        self.metrics.violation_notes.push(format!(
                            "t={now}: {:?} {} by {} overlaps {:?} {} by {}",
                            new.kind,
                            new.scope.display(),
                            new.holder,
                            l.kind,
                            l.scope.display(),
                            l.holder
                        ));
                    }
                }
            }
        }
    }

    /// Drain every live log into the shared areas and refresh stale
    /// inodes, so replicas can be compared.
    pub fn quiesce(&mut self) -> Result<SimTime> {
        let mut t = self.now.max(self.floor);
        let pids: Vec<ProcId> = self
            .procs
            .values()
            .filter(|p| p.alive)
            .map(|p| p.pid)
            .collect();
        for pid in pids {
            t = self.chain_evict(pid, t)?;
        }
        let up: Vec<NodeId> = self.nodes.keys().copied().collect();
        for n in up {
            t = self.repair_invalid(n, t)?;
        }
        self.now = self.now.max(t);
        self.floor = self.floor.max(t);
        Ok(t)
    }

    /// Live replicas (cache and reserve) of a chain.
    pub fn replicas_of(&self, chain: usize) -> Vec<NodeId> {
        self.cm
            .chain_nodes(chain)
            .into_iter()
            .filter(|n| self.nodes.contains_key(n))
            .collect()
    }

    pub fn new_lease_id(&mut self) -> LeaseId {
        let id = LeaseId(self.next_lease);
        self.next_lease += 1;
        id
    }

    pub fn superblock_of(&self, log: u64) -> Superblock {
        let m = &self.logs[&log];
        self.fab
            .peek(m.region, 0, crate::oplog::log::SUPERBLOCK_LEN as usize)
            .ok()
            .and_then(|b| Superblock::decode(&b))
            .unwrap_or(Superblock {
                capacity: m.capacity,
                head_pos: 0,
                head_seq: 0,
            })
    }

    pub fn root_ino() -> Ino {
        ROOT_INO
    }
}
