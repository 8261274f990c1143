//! Per-node daemon state: the shared area plus lease management.
//!
//! Lease-management state is made durable by the KernFS log, a journal of
//! [`KfsRec`] records that is mirrored onto the other members of each
//! domain's chain before a grant is handed out. A node that takes over a
//! domain rebuilds the table from its mirror of the previous manager's log.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::coherence::{Lease, LeaseTable};
use crate::ids::{LeaseId, NodeId};

use super::journal::Journal;
use super::shared::SharedArea;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "k", rename_all = "snake_case")]
pub enum KfsRec {
    Assign { domain: String },
    Grant { domain: String, lease: Lease },
    Release { domain: String, id: LeaseId },
    Drop { domain: String },
}

impl KfsRec {
    pub fn domain(&self) -> &str {
        match self {
            KfsRec::Assign { domain }
            | KfsRec::Grant { domain, .. }
            | KfsRec::Release { domain, .. }
            | KfsRec::Drop { domain } => domain,
        }
    }
}

/// Rebuild lease tables from a KernFS log. Only domains whose last
/// Assign/Drop was an Assign are returned.
pub fn replay(recs: &[KfsRec]) -> BTreeMap<String, LeaseTable> {
    let mut out: BTreeMap<String, LeaseTable> = BTreeMap::new();
    for r in recs {
        match r {
            KfsRec::Assign { domain } => {
                out.entry(domain.clone()).or_default();
            }
            KfsRec::Grant { domain, lease } => {
                out.entry(domain.clone())
                    .or_default()
                    .leases
                    .insert(lease.id, lease.clone());
            }
            KfsRec::Release { domain, id } => {
                if let Some(t) = out.get_mut(domain) {
                    t.leases.remove(id);
                }
            }
            KfsRec::Drop { domain } => {
                out.remove(domain);
            }
        }
    }
    out
}

/// Records of one domain only, used when taking over from a failed
/// manager.
pub fn replay_domain(recs: &[KfsRec], domain: &str) -> LeaseTable {
    let mine: Vec<KfsRec> = recs
        .iter()
        .filter(|r| r.domain() == domain)
        .cloned()
        .collect();
    let mut m = replay(&mine);
    // A Drop followed by nothing means the domain moved away; the lease
    // set at the time of the drop is still the best knowledge.
    m.remove(domain).unwrap_or_else(|| {
        let mut t = LeaseTable::default();
        for r in &mine {
            match r {
                KfsRec::Grant { lease, .. } => {
                    t.leases.insert(lease.id, lease.clone());
                }
                KfsRec::Release { id, .. } => {
                    t.leases.remove(id);
                }
                _ => {}
            }
        }
        t
    })
}

#[derive(Debug, Clone)]
pub struct KernFs {
    pub node: NodeId,
    pub area: SharedArea,
    pub kfs: Journal,
    /// Write cursors of this node's log mirrors on peers.
    pub kfs_out: BTreeMap<NodeId, Journal>,
    /// Domains managed here.
    pub tables: BTreeMap<String, LeaseTable>,
    /// Last known manager of each domain.
    pub hints: BTreeMap<String, NodeId>,
}

impl KernFs {
    pub fn new(node: NodeId, area: SharedArea, kfs: Journal) -> Self {
        KernFs {
            node,
            area,
            kfs,
            kfs_out: BTreeMap::new(),
            tables: BTreeMap::new(),
            hints: BTreeMap::new(),
        }
    }
}
