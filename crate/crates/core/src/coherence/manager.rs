//! Manager side of the lease protocol.
//!
//! A LibFS asks its local KernFS, which forwards to the domain's manager
//! (found through a hint or the cluster manager). The manager revokes
//! conflicting leases, logs the grant to its KernFS log (mirrored on the
//! chain) and only then hands the lease out.

use crate::error::{Error, Result};
use crate::ids::{LeaseId, NodeId, ProcId};
use crate::kernfs::node::KfsRec;
use crate::simnet::{Endpoint, Tag};
use crate::time::SimTime;
use crate::world::World;

use super::lease::{req_conflicts, Lease, LeaseKind, LeaseReq, LeaseTable};

const MSG: u64 = 64;

enum Managed {
    Granted(Lease, SimTime),
    /// The domain is no longer (or not yet) managed there.
    Moved(SimTime),
}

impl World {
    /// Whether `domain` is a mount, i.e. has a lease manager at all.
    fn is_domain(&self, domain: &str) -> bool {
        self.cfg.chain_of_mount(domain).is_some()
    }

    /// Obtain a lease covering `req` for `pid`.
    pub(crate) fn acquire(&mut self, pid: ProcId, req: &LeaseReq, t: SimTime) -> Result<SimTime> {
        let domain = req.scope.domain();
        if !self.is_domain(&domain) {
            return Ok(t);
        }
        let single = self.single_manager();
        let grace = self.cfg.timeouts.grace_ns;
        let p = self.proc(pid)?;
        let node = p.node;
        if !single
            && p.held
                .values()
                .any(|l| l.covers(req) && l.expires > t + grace)
        {
            return Ok(t);
        }
        let me = Endpoint::libfs(node, pid);
        let kfs = Endpoint::kernfs(node);
        let mut t = self.fab.request(me, kfs, MSG, Tag::Acquire, t)?;
        for _ in 0..4 {
            let (mgr, t2) = self.locate_manager(node, &domain, t)?;
            t = t2;
            if mgr != node {
                t = self
                    .fab
                    .request(kfs, Endpoint::kernfs(mgr), MSG, Tag::Forward, t)?;
            }
            match self.manage(mgr, pid, node, req, t)? {
                Managed::Moved(t2) => {
                    t = t2;
                    if mgr != node {
                        t = self
                            .fab
                            .reply(Endpoint::kernfs(mgr), kfs, MSG, Tag::Forward, t)?;
                    }
                    if let Some(k) = self.nodes.get_mut(&node) {
                        k.hints.remove(&domain);
                    }
                }
                Managed::Granted(lease, t2) => {
                    t = t2;
                    if mgr != node {
                        t = self
                            .fab
                            .reply(Endpoint::kernfs(mgr), kfs, MSG, Tag::Grant, t)?;
                    }
                    t = self.fab.reply(kfs, me, MSG, Tag::Grant, t)?;
                    let p = self.proc_mut(pid)?;
                    p.held
                        .retain(|_, l| !(l.scope == lease.scope && l.kind == lease.kind));
                    p.held.insert(lease.id, lease);
                    return Ok(t);
                }
            }
        }
        Err(Error::LeaseTimeout)
    }

    /// Find the manager of `domain` as seen from `node`.
    fn locate_manager(
        &mut self,
        node: NodeId,
        domain: &str,
        t: SimTime,
    ) -> Result<(NodeId, SimTime)> {
        let k = self.kernfs(node)?;
        if k.tables.contains_key(domain) {
            return Ok((node, t));
        }
        if let Some(h) = k.hints.get(domain) {
            return Ok((*h, t));
        }
        let kfs = Endpoint::kernfs(node);
        let t = self
            .fab
            .request(kfs, Endpoint::manager(), MSG, Tag::Acquire, t)?;
        let (m, t) = self.cm_lookup(domain, node, t)?;
        let t = self
            .fab
            .reply(Endpoint::manager(), kfs, MSG, Tag::Grant, t)?;
        self.kernfs_mut(node)?.hints.insert(domain.to_string(), m);
        Ok((m, t))
    }

    /// Cluster-manager view: who manages `domain`, moving it to the
    /// requester when the current assignment has expired.
    fn cm_lookup(
        &mut self,
        domain: &str,
        requester: NodeId,
        t: SimTime,
    ) -> Result<(NodeId, SimTime)> {
        let expiry = self.cfg.timeouts.manager_expiry_ns;
        let Some(info) = self.cm.domains.get(domain).cloned() else {
            let t = self.assign_domain(domain, requester, t)?;
            return Ok((requester, t));
        };
        if !self.nodes.contains_key(&info.manager) {
            // Fail-over pending.
            return Err(Error::DstFailed {
                node: info.manager,
                detected_at: t + self.cfg.timeouts.rpc_timeout_ns,
            });
        }
        if !self.single_manager() && info.expires <= t && info.manager != requester {
            let t = self.migrate(domain, info.manager, requester, t)?;
            return Ok((requester, t));
        }
        if info.manager == requester {
            self.cm.renew(domain, t + expiry);
        }
        Ok((info.manager, t))
    }

    fn assign_domain(&mut self, domain: &str, to: NodeId, t: SimTime) -> Result<SimTime> {
        let t = self.fab.send(
            crate::simnet::MsgKind::RpcRequest,
            Endpoint::manager(),
            Endpoint::kernfs(to),
            MSG,
            Tag::Migrate,
            t,
        )?;
        let t = self.kfs_append(
            to,
            domain,
            &KfsRec::Assign {
                domain: domain.to_string(),
            },
            t,
        )?;
        self.kernfs_mut(to)?
            .tables
            .insert(domain.to_string(), LeaseTable::default());
        let expires = t + self.cfg.timeouts.manager_expiry_ns;
        self.cm.assign(domain, to, expires);
        Ok(t)
    }

    /// Hand a domain's lease table from `from` to `to`. The new manager
    /// logs the table before the old one lets go, so a crash of either
    /// side leaves exactly one durable owner.
    pub(crate) fn migrate(
        &mut self,
        domain: &str,
        from: NodeId,
        to: NodeId,
        t: SimTime,
    ) -> Result<SimTime> {
        let d = domain.to_string();
        let mut t = self.fab.request(
            Endpoint::manager(),
            Endpoint::kernfs(from),
            MSG,
            Tag::Migrate,
            t,
        )?;
        let mut table = self
            .kernfs(from)?
            .tables
            .get(domain)
            .cloned()
            .unwrap_or_default();
        for l in table.leases.values_mut() {
            l.manager = to;
        }
        let size = MSG * (1 + table.leases.len() as u64);
        t = self.fab.request(
            Endpoint::kernfs(from),
            Endpoint::kernfs(to),
            size,
            Tag::Migrate,
            t,
        )?;
        t = self.kfs_append(to, domain, &KfsRec::Assign { domain: d.clone() }, t)?;
        for l in table.leases.values() {
            t = self.kfs_append(
                to,
                domain,
                &KfsRec::Grant {
                    domain: d.clone(),
                    lease: l.clone(),
                },
                t,
            )?;
        }
        self.kernfs_mut(to)?.tables.insert(d.clone(), table);
        if let Some(k) = self.nodes.get_mut(&from) {
            k.tables.remove(domain);
            k.hints.insert(d.clone(), to);
        }
        if let Some(k) = self.nodes.get_mut(&to) {
            k.hints.insert(d.clone(), to);
        }
        let expires = t + self.cfg.timeouts.manager_expiry_ns;
        self.cm.assign(domain, to, expires);
        self.metrics.migrations += 1;
        // The old manager's drop record only matters for its own restart.
        match self.kfs_append(from, domain, &KfsRec::Drop { domain: d }, t) {
            Ok(t2) => t = t2,
            Err(e) if e.is_crash() || matches!(e, Error::DstFailed { .. }) => {}
            Err(e) => return Err(e),
        }
        self.event(t, format!("domain {domain} migrated {from} -> {to}"));
        Ok(t)
    }

    fn manage(
        &mut self,
        mgr: NodeId,
        pid: ProcId,
        holder_node: NodeId,
        req: &LeaseReq,
        t: SimTime,
    ) -> Result<Managed> {
        let domain = req.scope.domain();
        let single = self.single_manager();
        let expiry = self.cfg.timeouts.manager_expiry_ns;
        let lease_ns = self.cfg.timeouts.lease_ns;
        let k = self.kernfs(mgr)?;
        if !k.tables.contains_key(&domain) {
            return Ok(Managed::Moved(t));
        }
        if !single {
            let expired = self.cm.domains.get(&domain).is_none_or(|i| i.expires <= t);
            if holder_node == mgr {
                self.cm.renew(&domain, t + expiry);
            } else if expired {
                return Ok(Managed::Moved(t));
            }
        }
        let mut t = t;
        let table = self
            .kernfs_mut(mgr)?
            .tables
            .get_mut(&domain)
            .expect("table present");
        if let Some(id) = table.find(pid, req) {
            let mut l = table.leases[&id].clone();
            l.expires = t + lease_ns;
            t = self.kfs_append(
                mgr,
                &domain,
                &KfsRec::Grant {
                    domain: domain.clone(),
                    lease: l.clone(),
                },
                t,
            )?;
            self.table_mut(mgr, &domain)?.leases.insert(id, l.clone());
            self.metrics.lease_renewals += 1;
            self.audit_grant(&l, t);
            return Ok(Managed::Granted(l, t));
        }
        // Expired leases count too: their holder may still have an
        // undigested log.
        let conflicting: Vec<Lease> = table
            .leases
            .values()
            .filter(|l| req_conflicts(l, pid, req))
            .cloned()
            .collect();
        for c in conflicting {
            t = self.revoke(mgr, &domain, &c, t)?;
        }
        let id = self.new_lease_id();
        let l = Lease {
            id,
            scope: req.scope.clone(),
            kind: req.kind,
            holder: pid,
            holder_node,
            manager: mgr,
            granted: t,
            expires: t + lease_ns,
        };
        t = self.kfs_append(
            mgr,
            &domain,
            &KfsRec::Grant {
                domain: domain.clone(),
                lease: l.clone(),
            },
            t,
        )?;
        self.table_mut(mgr, &domain)?.leases.insert(id, l.clone());
        self.metrics.lease_grants += 1;
        self.audit_grant(&l, t);
        Ok(Managed::Granted(l, t))
    }

    fn table_mut(&mut self, mgr: NodeId, domain: &str) -> Result<&mut LeaseTable> {
        self.kernfs_mut(mgr)?
            .tables
            .get_mut(domain)
            .ok_or_else(|| Error::ChainUnavailable(domain.to_string()))
    }

    /// Take a lease away from its holder. A write lease forces the
    /// holder's log to be digested on its chain first, so the next holder
    /// sees the data.
    fn revoke(&mut self, mgr: NodeId, domain: &str, l: &Lease, t: SimTime) -> Result<SimTime> {
        let holder_alive = self.procs.get(&l.holder).is_some_and(|p| p.alive)
            && self.fab.node_up(l.holder_node)
            && self.nodes.contains_key(&l.holder_node);
        if !holder_alive {
            let recovered = self
                .logs
                .get(&(l.holder.0 as u64))
                .is_none_or(|m| m.retired);
            if l.live(t) || !recovered {
                let until = l.expires.max(t + self.cfg.timeouts.rpc_timeout_ns);
                return Err(Error::Blocked { until });
            }
            return self.forget_lease(mgr, domain, l.id, t);
        }
        let mgr_ep = Endpoint::kernfs(mgr);
        let hk = Endpoint::kernfs(l.holder_node);
        let hp = Endpoint::libfs(l.holder_node, l.holder);
        let mut t = t;
        if l.holder_node != mgr {
            t = self.fab.request(mgr_ep, hk, MSG, Tag::Revoke, t)?;
        }
        t = self.fab.request(hk, hp, MSG, Tag::Revoke, t)?;
        if l.kind == LeaseKind::Write {
            t = self.chain_evict(l.holder, t)?;
        }
        if let Some(p) = self.procs.get_mut(&l.holder) {
            p.held.remove(&l.id);
            p.cache.clear();
        }
        t = self.fab.reply(hp, hk, MSG, Tag::Release, t)?;
        if l.holder_node != mgr {
            t = self.fab.reply(hk, mgr_ep, MSG, Tag::Release, t)?;
        }
        self.metrics.revocations += 1;
        self.forget_lease(mgr, domain, l.id, t)
    }

    fn forget_lease(
        &mut self,
        mgr: NodeId,
        domain: &str,
        id: LeaseId,
        t: SimTime,
    ) -> Result<SimTime> {
        let t = self.kfs_append(
            mgr,
            domain,
            &KfsRec::Release {
                domain: domain.to_string(),
                id,
            },
            t,
        )?;
        self.table_mut(mgr, domain)?.leases.remove(&id);
        Ok(t)
    }

    /// Give back every lease `pid` holds (no lease caching). Write leases
    /// are only released after the log has been digested.
    pub(crate) fn release_all(&mut self, pid: ProcId, t: SimTime) -> Result<SimTime> {
        let p = self.proc(pid)?;
        let node = p.node;
        let leases: Vec<Lease> = p.held.values().cloned().collect();
        let mut t = t;
        if leases.iter().any(|l| l.kind == LeaseKind::Write) && !p.log.is_empty() {
            t = self.chain_evict(pid, t)?;
        }
        let me = Endpoint::libfs(node, pid);
        let kfs = Endpoint::kernfs(node);
        for l in leases {
            let domain = l.scope.domain();
            let mgr = self
                .cm
                .domains
                .get(&domain)
                .map(|i| i.manager)
                .unwrap_or(l.manager);
            t = self.fab.request(me, kfs, MSG, Tag::Release, t)?;
            if mgr != node {
                t = self
                    .fab
                    .request(kfs, Endpoint::kernfs(mgr), MSG, Tag::Release, t)?;
            }
            if self
                .nodes
                .get(&mgr)
                .and_then(|k| k.tables.get(&domain))
                .is_some_and(|tb| tb.leases.contains_key(&l.id))
            {
                t = self.forget_lease(mgr, &domain, l.id, t)?;
            }
            self.proc_mut(pid)?.held.remove(&l.id);
        }
        Ok(t)
    }

    /// Drop every lease of a process whose log has been fully recovered.
    pub(crate) fn drop_leases_of(&mut self, pid: ProcId, t: SimTime) -> Result<SimTime> {
        let mut t = t;
        let owned: Vec<(NodeId, String, LeaseId)> = self
            .nodes
            .iter()
            .flat_map(|(n, k)| {
                k.tables.iter().flat_map(move |(d, tb)| {
                    tb.leases
                        .values()
                        .filter(move |l| l.holder == pid)
                        .map(move |l| (*n, d.clone(), l.id))
                })
            })
            .collect();
        for (n, d, id) in owned {
            t = self.forget_lease(n, &d, id, t)?;
        }
        if let Some(p) = self.procs.get_mut(&pid) {
            p.held.clear();
        }
        Ok(t)
    }
}
