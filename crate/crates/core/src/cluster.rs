//! Cluster manager: membership, failure detection, fail-over, restart and
//! rejoin.
//!
//! The manager pings nodes only while some node is down. A node that
//! misses its heartbeat deadline is declared failed: its chains continue
//! without it, the logs it headed are finished from the freshest surviving
//! mirror, and its lease domains move to a surviving chain member, which
//! rebuilds the tables from its mirror of the failed node's KernFS log.
//!
//! A node that restarts before it is declared failed recovers in place.
//! One that restarts after must rejoin: it waits out every lease it may
//! have missed, collects the epoch bitmaps of its peers and marks every
//! inode written since its failure as stale.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::config::ClusterConfig;
use crate::error::{Error, Result};
use crate::ids::{Ino, NodeId};
use crate::kernfs::journal::Journal;
use crate::kernfs::node::{replay, replay_domain, KernFs, KfsRec};
use crate::kernfs::shared::{Role, SharedArea};
use crate::media::Tier;
use crate::oplog::Ring;
use crate::replication::{scan_mirror, Source};
use crate::simnet::{Endpoint, MsgKind, Tag};
use crate::time::SimTime;
use crate::world::{FailoverRecord, RejoinRecord, RestartRecord, Timer, World, KFS_LOG_BYTES};

const MSG: u64 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeStatus {
    Up,
    Failed,
    Rejoining,
}

/// Live membership of one chain.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainState {
    pub caches: Vec<NodeId>,
    pub reserve: Option<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainInfo {
    pub manager: NodeId,
    pub expires: SimTime,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterManager {
    pub epoch: u64,
    pub chains: Vec<ChainState>,
    pub domains: BTreeMap<String, DomainInfo>,
    pub status: BTreeMap<NodeId, NodeStatus>,
    /// Epoch current when a node was declared failed.
    pub fail_epoch: BTreeMap<NodeId, u64>,
    pub crashed_at: BTreeMap<NodeId, SimTime>,
    pub restarted_at: BTreeMap<NodeId, SimTime>,
    pub detected_at: BTreeMap<NodeId, SimTime>,
    pub suspected: BTreeSet<NodeId>,
    pub heartbeat_pending: bool,
}

impl ClusterManager {
    pub fn new(cfg: &ClusterConfig) -> Self {
        let chains = cfg
            .chains
            .iter()
            .map(|c| ChainState {
                caches: c.replicas.clone(),
                reserve: c.reserve,
            })
            .collect();
        let mut domains = BTreeMap::new();
        for c in &cfg.chains {
            for (i, m) in c.mounts.iter().enumerate() {
                let (manager, expires) = match cfg.single_manager {
                    Some(s) => (s, u64::MAX),
                    None => (
                        c.replicas[i % c.replicas.len()],
                        cfg.timeouts.manager_expiry_ns,
                    ),
                };
                domains.insert(m.clone(), DomainInfo { manager, expires });
            }
        }
        ClusterManager {
            epoch: 1,
            chains,
            domains,
            status: cfg
                .all_nodes()
                .into_iter()
                .map(|n| (n, NodeStatus::Up))
                .collect(),
            fail_epoch: BTreeMap::new(),
            crashed_at: BTreeMap::new(),
            restarted_at: BTreeMap::new(),
            detected_at: BTreeMap::new(),
            suspected: BTreeSet::new(),
            heartbeat_pending: false,
        }
    }

    /// Live members: cache replicas in order, then the reserve.
    pub fn chain_nodes(&self, c: usize) -> Vec<NodeId> {
        let ch = &self.chains[c];
        ch.caches.iter().copied().chain(ch.reserve).collect()
    }

    pub fn renew(&mut self, domain: &str, until: SimTime) {
        if let Some(d) = self.domains.get_mut(domain) {
            if d.expires != u64::MAX {
                d.expires = d.expires.max(until);
            }
        }
    }

    pub fn assign(&mut self, domain: &str, node: NodeId, expires: SimTime) {
        let expires = match self.domains.get(domain) {
            Some(d) if d.expires == u64::MAX => u64::MAX,
            _ => expires,
        };
        self.domains.insert(
            domain.to_string(),
            DomainInfo {
                manager: node,
                expires,
            },
        );
    }

    pub fn status_of(&self, n: NodeId) -> NodeStatus {
        self.status.get(&n).copied().unwrap_or(NodeStatus::Up)
    }
}

fn retry_at(e: &Error, t: SimTime, timeout: u64) -> SimTime {
    match e {
        Error::Blocked { until } => *until,
        Error::DstFailed { detected_at, .. } => *detected_at,
        _ => t + timeout,
    }
    .max(t + 1)
}

impl World {
    fn broadcast(&mut self, tag: Tag, t: SimTime) -> SimTime {
        let mut done = t;
        for n in self.cfg.all_nodes() {
            if self.fab.node_up(n) {
                if let Ok(d) = self.fab.send(
                    MsgKind::RpcRequest,
                    Endpoint::manager(),
                    Endpoint::kernfs(n),
                    MSG,
                    tag,
                    t,
                ) {
                    done = done.max(d);
                }
            }
        }
        done
    }

    pub(crate) fn on_heartbeat(&mut self, t: SimTime) {
        self.broadcast(Tag::Heartbeat, t);
        let timeout = self.cfg.timeouts.heartbeat_timeout_ns;
        let mut pending = false;
        for n in self.cfg.all_nodes() {
            if self.cm.status_of(n) != NodeStatus::Up {
                continue;
            }
            if self.fab.node_up(n) {
                self.cm.suspected.remove(&n);
                continue;
            }
            pending = true;
            if self.cm.suspected.insert(n) {
                self.schedule(t + timeout, Timer::Detect(n));
            }
        }
        if pending {
            self.schedule(t + self.cfg.timeouts.heartbeat_ns, Timer::Heartbeat);
        } else {
            self.cm.heartbeat_pending = false;
        }
    }

    pub(crate) fn on_detect(&mut self, n: NodeId, t: SimTime) {
        if self.fab.node_up(n) && self.cm.status_of(n) == NodeStatus::Up {
            self.cm.suspected.remove(&n);
            return;
        }
        if self.cm.status_of(n) == NodeStatus::Rejoining {
            return;
        }
        if let Err(e) = self.failover(n, t) {
            let at = retry_at(&e, t, self.cfg.timeouts.rpc_timeout_ns);
            self.event(t, format!("fail-over of {n} deferred: {e}"));
            self.schedule(at, Timer::Detect(n));
        }
    }

    /// Declare `f` failed and move its work to the survivors. Safe to run
    /// again after a partial attempt.
    fn failover(&mut self, f: NodeId, t: SimTime) -> Result<SimTime> {
        let before = self.fab.stats.clone();
        let mut t = t;
        if self.cm.status_of(f) == NodeStatus::Up {
            self.cm.fail_epoch.insert(f, self.cm.epoch);
            self.cm.epoch += 1;
            self.cm.status.insert(f, NodeStatus::Failed);
            self.cm.suspected.remove(&f);
            self.cm.detected_at.insert(f, t);
            for c in &mut self.cm.chains {
                c.caches.retain(|x| *x != f);
                if c.reserve == Some(f) {
                    c.reserve = None;
                }
            }
            t = self.broadcast(Tag::Epoch, t);
            self.event(t, format!("{f} declared failed, epoch {}", self.cm.epoch));
        }
        let mgr = Endpoint::manager();

        // Logs headed at the failed node.
        let orphans: Vec<u64> = self
            .logs
            .iter()
            .filter(|(_, m)| m.node == f && !m.retired)
            .map(|(l, _)| *l)
            .collect();
        let mut logs_recovered = 0;
        let mut entries_digested = 0;
        for log in orphans {
            let meta = self.logs[&log].clone();
            let ring = Ring {
                capacity: meta.capacity,
            };
            let hosts: Vec<NodeId> = self
                .cm
                .chain_nodes(meta.chain)
                .into_iter()
                .filter(|h| self.nodes.contains_key(h) && self.mirrors.contains_key(&(log, *h)))
                .collect();
            let best = hosts
                .iter()
                .map(|h| {
                    let r = self.mirrors[&(log, *h)];
                    let s = scan_mirror(self, log, *h, r, ring);
                    let wm = self.nodes[h].area.watermark(log).seq;
                    (s.entries.last().map_or(wm, |e| e.entry.seq), *h)
                })
                .max_by_key(|(s, h)| (*s, std::cmp::Reverse(*h)));
            if let Some((_, src)) = best {
                let actor = Endpoint::kernfs(src);
                t = self.fab.request(mgr, actor, MSG, Tag::Evict, t)?;
                let region = self.mirrors[&(log, src)];
                let others: Vec<NodeId> = hosts.iter().copied().filter(|h| *h != src).collect();
                t = self.sync_mirrors(log, &Source::Mirror(region), &others, actor, t)?;
                for h in &hosts {
                    let (n, t2) = self.digest_mirror(log, *h, t)?;
                    entries_digested += n;
                    t = t2;
                }
            }
            self.retire_log(log);
            logs_recovered += 1;
        }
        let dead: Vec<_> = self
            .procs
            .values()
            .filter(|p| p.node == f)
            .map(|p| p.pid)
            .collect();
        for pid in dead {
            t = self.drop_leases_of(pid, t)?;
        }

        // Lease domains it managed.
        let moved: Vec<String> = self
            .cm
            .domains
            .iter()
            .filter(|(_, i)| i.manager == f)
            .map(|(d, _)| d.clone())
            .collect();
        for d in moved {
            let Some(c) = self.cfg.chain_of_mount(&d) else {
                continue;
            };
            let Some(to) = self
                .cm
                .chain_nodes(c)
                .into_iter()
                .find(|n| self.nodes.contains_key(n))
            else {
                continue;
            };
            t = self
                .fab
                .request(mgr, Endpoint::kernfs(to), MSG, Tag::Migrate, t)?;
            let recs: Vec<KfsRec> = match self.kfs_mirrors.get(&(f, to)) {
                Some(r) => {
                    let r = *r;
                    let (j, recs) = Journal::scan::<KfsRec, _>(r, KFS_LOG_BYTES, |o, l| {
                        self.fab.peek(r, o, l).unwrap_or_else(|_| vec![0; l])
                    });
                    let (_, t2) = self.fab.read(
                        Endpoint::kernfs(to),
                        r,
                        0,
                        j.end as usize,
                        t,
                        crate::media::Access::Kernel,
                    )?;
                    t = t2;
                    recs
                }
                None => vec![],
            };
            let mut table = replay_domain(&recs, &d);
            table.leases.retain(|_, l| {
                l.holder_node != f && self.procs.get(&l.holder).is_some_and(|p| p.alive)
            });
            for l in table.leases.values_mut() {
                l.manager = to;
            }
            t = self.kfs_append(to, &d, &KfsRec::Assign { domain: d.clone() }, t)?;
            for l in table.leases.values() {
                t = self.kfs_append(
                    to,
                    &d,
                    &KfsRec::Grant {
                        domain: d.clone(),
                        lease: l.clone(),
                    },
                    t,
                )?;
            }
            self.kernfs_mut(to)?.tables.insert(d.clone(), table);
            self.cm
                .assign(&d, to, t + self.cfg.timeouts.manager_expiry_ns);
            for k in self.nodes.values_mut() {
                k.hints.insert(d.clone(), to);
            }
            self.metrics.migrations += 1;
            self.event(t, format!("domain {d} taken over by {to}"));
        }

        // Drop every mirror involving the failed node.
        let gone: Vec<(u64, NodeId)> = self
            .mirrors
            .keys()
            .filter(|(_, h)| *h == f)
            .copied()
            .collect();
        for k in gone {
            let r = self.mirrors.remove(&k).expect("present");
            self.fab.net.unregister_region(r);
            self.fab.media.free(r);
        }
        let gone: Vec<(NodeId, NodeId)> = self
            .kfs_mirrors
            .keys()
            .filter(|(w, h)| *w == f || *h == f)
            .copied()
            .collect();
        for (w, h) in gone {
            let r = self.kfs_mirrors.remove(&(w, h)).expect("present");
            self.fab.net.unregister_region(r);
            self.fab.media.free(r);
            if let Some(k) = self.nodes.get_mut(&w) {
                k.kfs_out.remove(&h);
            }
        }

        // A chain left without cache replicas serves from its reserve.
        for c in 0..self.cm.chains.len() {
            let ch = &self.cm.chains[c];
            if !ch.caches.is_empty() {
                continue;
            }
            let Some(r) = ch.reserve else { continue };
            let Some(k) = self.nodes.get_mut(&r) else {
                continue;
            };
            t = k.area.set_role(&mut self.fab, Role::Promoted, t)?;
            let ch = &mut self.cm.chains[c];
            ch.caches.push(r);
            ch.reserve = None;
            self.metrics.promotions += 1;
            self.event(t, format!("reserve {r} promoted in chain {c}"));
        }

        let crashed_at = self.cm.crashed_at.get(&f).copied().unwrap_or(t);
        let detected_at = self.cm.detected_at.get(&f).copied().unwrap_or(t);
        self.metrics.failovers.push(FailoverRecord {
            node: f,
            crashed_at,
            detected_at,
            finished_at: t,
            logs_recovered,
            entries_digested,
            io: self.fab.stats.since(&before),
        });
        self.event(t, format!("fail-over of {f} done"));
        Ok(t)
    }

    pub(crate) fn on_restart(&mut self, n: NodeId, t: SimTime) {
        if self.fab.node_up(n) {
            return;
        }
        if let Err(e) = self.fab.restart_node(n) {
            self.event(t, format!("restart of {n} failed: {e}"));
            return;
        }
        self.cm.restarted_at.insert(n, t);
        let r = match self.cm.status_of(n) {
            NodeStatus::Failed => self.rejoin_begin(n, t),
            _ => self.fast_restart(n, t),
        };
        if let Err(e) = r {
            self.metrics.fatal.push(format!("restart of {n}: {e}"));
        }
    }

    /// Recover a node that was never declared failed: its chains still
    /// count on it, so it resumes with its own state.
    fn fast_restart(&mut self, n: NodeId, t: SimTime) -> Result<SimTime> {
        let mut t = t + self.cfg.timeouts.boot_ns;
        self.cm.suspected.remove(&n);
        let layout = self.layouts[&n];
        let (mut area, dirty) = SharedArea::recover(&self.fab, n, layout);
        if dirty {
            t = area.seal(&mut self.fab, t)?;
        }
        let region = self.kfs_regions[&n];
        let (j, recs) = Journal::scan::<KfsRec, _>(region, KFS_LOG_BYTES, |o, l| {
            self.fab.peek(region, o, l).unwrap_or_else(|_| vec![0; l])
        });
        let mut k = KernFs::new(n, area, j);
        k.tables = replay(&recs)
            .into_iter()
            .filter(|(d, _)| self.cm.domains.get(d).is_some_and(|i| i.manager == n))
            .collect();
        for ((w, h), r) in &self.kfs_mirrors {
            if *w == n {
                let r = *r;
                let (cur, _) = Journal::scan::<KfsRec, _>(r, KFS_LOG_BYTES, |o, l| {
                    self.fab.peek(r, o, l).unwrap_or_else(|_| vec![0; l])
                });
                k.kfs_out.insert(*h, cur);
            }
        }
        k.hints = self
            .cm
            .domains
            .iter()
            .map(|(d, i)| (d.clone(), i.manager))
            .collect();
        self.nodes.insert(n, k);
        let crashed_at = self.cm.crashed_at.get(&n).copied().unwrap_or(t);
        let headed: Vec<u64> = self
            .logs
            .iter()
            .filter(|(_, m)| m.node == n && !m.retired)
            .map(|(l, _)| *l)
            .collect();
        let mut recovered = 0;
        for log in headed {
            match self.recover_log(log, t) {
                Ok(t2) => {
                    t = t2;
                    recovered += 1;
                }
                Err(e) => {
                    let at = retry_at(&e, t, self.cfg.timeouts.rpc_timeout_ns);
                    self.schedule(at, Timer::RecoverLog(log));
                }
            }
        }
        self.metrics.restarts.push(RestartRecord {
            node: n,
            crashed_at,
            restarted_at: self.cm.restarted_at[&n],
            finished_at: t,
            logs_recovered: recovered,
        });
        self.event(t, format!("{n} restarted"));
        Ok(t)
    }

    /// First half of a rejoin: bring the node up with its stale area and
    /// an empty KernFS log, then wait until no lease from before the crash
    /// can still be live.
    fn rejoin_begin(&mut self, n: NodeId, t: SimTime) -> Result<SimTime> {
        let mut t = t + self.cfg.timeouts.boot_ns;
        let layout = self.layouts[&n];
        let (mut area, dirty) = SharedArea::recover(&self.fab, n, layout);
        if dirty {
            t = area.seal(&mut self.fab, t)?;
        }
        if let Some(old) = self.kfs_regions.remove(&n) {
            self.fab.media.free(old);
        }
        let kfs = self.fab.media.alloc(n, Tier::Nvm, KFS_LOG_BYTES, None)?;
        self.kfs_regions.insert(n, kfs);
        let mut k = KernFs::new(n, area, Journal::new(kfs));
        k.hints = self
            .cm
            .domains
            .iter()
            .map(|(d, i)| (d.clone(), i.manager))
            .collect();
        self.nodes.insert(n, k);
        self.cm.status.insert(n, NodeStatus::Rejoining);
        let crashed = self.cm.crashed_at.get(&n).copied().unwrap_or(t);
        let to = self.cfg.timeouts.clone();
        let ready = (t).max(crashed + to.lease_ns + to.grace_ns);
        self.schedule(ready, Timer::RejoinReady(n));
        self.event(t, format!("{n} rejoining"));
        Ok(t)
    }

    pub(crate) fn on_rejoin_ready(&mut self, n: NodeId, t: SimTime) {
        if self.cm.status_of(n) != NodeStatus::Rejoining || !self.nodes.contains_key(&n) {
            return;
        }
        if let Err(e) = self.rejoin_finish(n, t) {
            let at = retry_at(&e, t, self.cfg.timeouts.rpc_timeout_ns);
            self.event(t, format!("rejoin of {n} deferred: {e}"));
            self.schedule(at, Timer::RejoinReady(n));
        }
    }

    fn rejoin_finish(&mut self, n: NodeId, t: SimTime) -> Result<SimTime> {
        let mut t = t;
        let chains: Vec<usize> = (0..self.cfg.chains.len())
            .filter(|c| self.chain_spec_nodes(*c).contains(&n))
            .collect();
        // Drain the live logs so every write made while away is in the
        // peers' areas and bitmaps.
        let writers: Vec<_> = self
            .procs
            .values()
            .filter(|p| p.alive && chains.contains(&p.chain))
            .map(|p| p.pid)
            .collect();
        for pid in writers {
            t = self.chain_evict(pid, t)?;
        }

        let fail_epoch = self.cm.fail_epoch.get(&n).copied().unwrap_or(self.cm.epoch);
        let me = Endpoint::kernfs(n);
        let mut peers = BTreeSet::new();
        for c in &chains {
            peers.extend(
                self.cm
                    .chain_nodes(*c)
                    .into_iter()
                    .filter(|p| *p != n && self.nodes.contains_key(p)),
            );
        }
        let mut union: BTreeSet<Ino> = BTreeSet::new();
        let mut peer_bitmaps = BTreeMap::new();
        for p in &peers {
            let dst = Endpoint::kernfs(*p);
            t = self.fab.request(me, dst, MSG, Tag::Bitmap, t)?;
            let maps: BTreeMap<u64, BTreeSet<Ino>> = self.nodes[p]
                .area
                .bitmaps
                .range(fail_epoch..)
                .map(|(e, s)| (*e, s.clone()))
                .collect();
            let size = MSG + 8 * maps.values().map(|s| s.len() as u64).sum::<u64>();
            t = self.fab.reply(dst, me, size, Tag::Bitmap, t)?;
            for s in maps.values() {
                union.extend(s.iter().copied());
            }
            peer_bitmaps.insert(*p, maps);
        }
        let k = self.nodes.get_mut(&n).expect("rejoining node present");
        t = k.area.invalidate(&mut self.fab, &union, t)?;
        self.drop_cached(&[n], &union);

        // Take the configured role back.
        for c in &chains {
            let spec = self.cfg.chains[*c].clone();
            if spec.replicas.contains(&n) {
                let live: BTreeSet<NodeId> = self.cm.chains[*c]
                    .caches
                    .iter()
                    .copied()
                    .chain([n])
                    .collect();
                if let Some(r) = spec.reserve {
                    if self.cm.chains[*c].caches.contains(&r) {
                        if let Some(rk) = self.nodes.get_mut(&r) {
                            t = rk.area.set_role(&mut self.fab, Role::Reserve, t)?;
                        }
                        self.cm.chains[*c].reserve = Some(r);
                    }
                }
                self.cm.chains[*c].caches = spec
                    .replicas
                    .iter()
                    .copied()
                    .filter(|x| live.contains(x))
                    .collect();
                let k = self.nodes.get_mut(&n).expect("present");
                t = k.area.set_role(&mut self.fab, Role::Cache, t)?;
            } else {
                self.cm.chains[*c].reserve = Some(n);
                let k = self.nodes.get_mut(&n).expect("present");
                t = k.area.set_role(&mut self.fab, Role::Reserve, t)?;
            }
        }

        // Mirrors of the live logs, starting after what is already
        // digested everywhere.
        let logs: Vec<(u64, usize)> = self
            .logs
            .iter()
            .filter(|(_, m)| !m.retired && m.node != n && chains.contains(&m.chain))
            .map(|(l, m)| (*l, m.capacity as usize))
            .collect();
        for (log, cap) in logs {
            let pid = self.logs[&log].pid;
            let Some(p) = self.procs.get(&pid).filter(|p| p.alive) else {
                continue;
            };
            let (seq, pos) = (p.log.digested_seq, p.log.mirror_head);
            if !self.mirrors.contains_key(&(log, n)) {
                self.alloc_log_mirror(log, n, cap as u64)?;
            }
            let k = self.nodes.get_mut(&n).expect("present");
            t = k.area.set_watermark(&mut self.fab, log, seq, pos, t)?;
        }

        // KernFS log mirrors both ways. Peers seed the new mirror with a
        // snapshot of the tables they manage.
        let kpeers = self.kfs_peers_all(n);
        for p in kpeers {
            if !self.nodes.contains_key(&p) {
                continue;
            }
            if !self.kfs_mirrors.contains_key(&(n, p)) {
                self.alloc_kfs_mirror(n, p)?;
            }
            if !self.kfs_mirrors.contains_key(&(p, n)) {
                self.alloc_kfs_mirror(p, n)?;
                let tables: Vec<(String, Vec<crate::coherence::Lease>)> = self.nodes[&p]
                    .tables
                    .iter()
                    .map(|(d, tb)| (d.clone(), tb.leases.values().cloned().collect()))
                    .collect();
                let src = Endpoint::kernfs(p);
                for (d, leases) in tables {
                    let mut recs = vec![KfsRec::Assign { domain: d.clone() }];
                    recs.extend(leases.into_iter().map(|lease| KfsRec::Grant {
                        domain: d.clone(),
                        lease,
                    }));
                    for rec in recs {
                        let pk = self.nodes.get_mut(&p).expect("present");
                        let j = pk.kfs_out.get_mut(&n).expect("cursor just made");
                        t = j.append_remote(&mut self.fab, src, me, &rec, t, Tag::KfsLog)?;
                    }
                }
            }
        }

        self.cm.epoch += 1;
        t = self.broadcast(Tag::Epoch, t);
        self.cm.status.insert(n, NodeStatus::Up);
        self.cm.fail_epoch.remove(&n);
        if self.cm.status.values().all(|s| *s == NodeStatus::Up) {
            let below = self.cm.epoch;
            let up: Vec<NodeId> = self.nodes.keys().copied().collect();
            for u in up {
                let k = self.nodes.get_mut(&u).expect("present");
                t = k.area.drop_epochs(&mut self.fab, below, t)?;
            }
        }
        let crashed_at = self.cm.crashed_at.get(&n).copied().unwrap_or(0);
        self.metrics.rejoins.push(RejoinRecord {
            node: n,
            crashed_at,
            restarted_at: self.cm.restarted_at.get(&n).copied().unwrap_or(0),
            finished_at: t,
            fail_epoch,
            invalidated: union,
            peer_bitmaps,
        });
        self.event(t, format!("{n} rejoined, epoch {}", self.cm.epoch));
        Ok(t)
    }

    /// Refetch every stale inode of `n` from a peer.
    pub fn repair_invalid(&mut self, n: NodeId, t: SimTime) -> Result<SimTime> {
        let mut t = t;
        let stale: Vec<Ino> = self.kernfs(n)?.area.invalid.iter().copied().collect();
        for ino in stale {
            if self.kernfs(n)?.area.invalid.contains(&ino) {
                t = self.refetch(n, ino, t)?;
            }
        }
        Ok(t)
    }
}
