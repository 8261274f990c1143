use ccnvm::coherence::lease::*;
use ccnvm::ids::{LeaseId, NodeId, ProcId};
use ccnvm::posix::FsOp;

#[test]
fn subtree_overlap_is_componentwise() {
    let a = Scope::subtree("/m/ab");
    assert!(a.overlaps(&Scope::path("/m/ab/c")));
    assert!(!a.overlaps(&Scope::path("/m/abc")));
    assert!(!Scope::path("/m/a").overlaps(&Scope::path("/m/a/b")));
    assert!(Scope::path("/m/a/b").overlaps(&Scope::subtree("/m/a")));
}

#[test]
fn create_needs_parent_and_path() {
    let r = required(&FsOp::Create {
        path: "/m/d/f".into(),
    });
    let shown: Vec<String> = r
        .iter()
        .map(|r| format!("{:?} {}", r.kind, r.scope.display()))
        .collect();
    assert_eq!(shown, vec!["Write /m/d", "Write /m/d/f"]);
}

#[test]
fn rename_subtrees_absorb_inner_requests() {
    let r = required(&FsOp::Rename {
        from: "/m/a".into(),
        to: "/m/a2".into(),
    });
    let shown: Vec<String> = r.iter().map(|r| r.scope.display()).collect();
    assert_eq!(shown, vec!["/m", "/m/a/**", "/m/a2/**"]);
    assert!(r.iter().all(|r| r.kind == LeaseKind::Write));
    let nested = required(&FsOp::Rename {
        from: "/m/a/b".into(),
        to: "/m/a".into(),
    });
    let shown: Vec<String> = nested.iter().map(|r| r.scope.display()).collect();
    assert_eq!(shown, vec!["/m", "/m/a/**"]);
}

#[test]
fn write_lease_covers_read() {
    let l = Lease {
        id: LeaseId(1),
        scope: Scope::subtree("/m/a"),
        kind: LeaseKind::Write,
        holder: ProcId(1),
        holder_node: NodeId(1),
        manager: NodeId(1),
        granted: 0,
        expires: 10,
    };
    assert!(l.covers(&LeaseReq {
        scope: Scope::path("/m/a/x"),
        kind: LeaseKind::Read
    }));
    assert!(!l.covers(&LeaseReq {
        scope: Scope::path("/m/b"),
        kind: LeaseKind::Read
    }));
}
