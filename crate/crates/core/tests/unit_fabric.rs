use ccnvm::error::Error;
use ccnvm::fabric::*;
use ccnvm::ids::{NodeId, ProcId};
use ccnvm::media::{Access, LatencyModel, Tier};
use ccnvm::simnet::Endpoint;

#[test]
fn trap_fires_after_kth_write() {
    let mut f = Fabric::new(LatencyModel::default());
    f.media.add_node(NodeId(1));
    let r = f.media.alloc(NodeId(1), Tier::Nvm, 4096, None).unwrap();
    let me = Endpoint::kernfs(NodeId(1));
    f.arm(Some(Trap {
        at_write: 2,
        target: CrashTarget::Node(NodeId(1)),
    }));
    f.write(me, r, 0, &[1; 8], 0, Access::Local).unwrap();
    let err = f.write(me, r, 8, &[2; 8], 0, Access::Local).unwrap_err();
    assert_eq!(err, Error::NodeCrashed(NodeId(1)));
    assert_eq!(f.take_fired(), vec![CrashTarget::Node(NodeId(1))]);
    f.restart_node(NodeId(1)).unwrap();
    assert_eq!(f.peek(r, 0, 16).unwrap(), [[1u8; 8], [2u8; 8]].concat());
}

#[test]
fn dead_process_cannot_act() {
    let mut f = Fabric::new(LatencyModel::default());
    f.media.add_node(NodeId(1));
    let r = f
        .media
        .alloc(NodeId(1), Tier::Nvm, 4096, Some(ProcId(3)))
        .unwrap();
    let p = Endpoint::libfs(NodeId(1), ProcId(3));
    f.crash_proc(ProcId(3));
    assert_eq!(
        f.write(p, r, 0, &[0; 8], 0, Access::Local),
        Err(Error::ProcessDead(ProcId(3)))
    );
}
