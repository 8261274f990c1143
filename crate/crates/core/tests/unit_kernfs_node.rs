use ccnvm::coherence::Lease;
use ccnvm::coherence::{LeaseKind, Scope};
use ccnvm::ids::ProcId;
use ccnvm::ids::{LeaseId, NodeId};
use ccnvm::kernfs::node::*;

fn lease(id: u64) -> Lease {
    Lease {
        id: LeaseId(id),
        scope: Scope::path("/d/f"),
        kind: LeaseKind::Write,
        holder: ProcId(1),
        holder_node: NodeId(1),
        manager: NodeId(1),
        granted: 0,
        expires: 100,
    }
}

#[test]
fn replay_tracks_assign_grant_release_drop() {
    let d = "/d".to_string();
    let recs = vec![
        KfsRec::Assign { domain: d.clone() },
        KfsRec::Grant {
            domain: d.clone(),
            lease: lease(1),
        },
        KfsRec::Grant {
            domain: d.clone(),
            lease: lease(2),
        },
        KfsRec::Release {
            domain: d.clone(),
            id: LeaseId(1),
        },
    ];
    let t = replay(&recs);
    assert_eq!(
        t[&d].leases.keys().copied().collect::<Vec<_>>(),
        vec![LeaseId(2)]
    );
    let mut dropped = recs.clone();
    dropped.push(KfsRec::Drop { domain: d.clone() });
    assert!(replay(&dropped).is_empty());
    assert_eq!(replay_domain(&dropped, &d).leases.len(), 1);
}
