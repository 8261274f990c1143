use ccnvm::config::{ClusterConfig, Mode};
use ccnvm::fabric::CrashTarget;
use ccnvm::ids::NodeId;
use ccnvm::posix::{FsOp, ModelFs};
use ccnvm::world::{Timer, World};

fn ops() -> Vec<FsOp> {
    let mut v = vec![
        FsOp::Mkdir {
            path: "/d/a".into(),
        },
        FsOp::Create {
            path: "/d/a/f".into(),
        },
    ];
    for i in 0..20u64 {
        v.push(FsOp::Write {
            path: "/d/a/f".into(),
            offset: i * 1000,
            data: vec![i as u8; 3000],
        });
    }
    v.push(FsOp::Fsync {
        path: "/d/a/f".into(),
    });
    v.push(FsOp::Dsync);
    v.push(FsOp::Read {
        path: "/d/a/f".into(),
        offset: 500,
        len: 9000,
    });
    v
}

#[test]
fn writes_replicate_and_converge() {
    for mode in [Mode::Pessimistic, Mode::Optimistic] {
        let mut cfg = ClusterConfig::simple(&[1, 2, 3], &["/d"]);
        cfg.mode = mode;
        let mut w = World::new(cfg).unwrap();
        w.spawn(NodeId(1), 0, ops()).unwrap();
        w.run_all(u64::MAX);
        assert!(w.metrics.fatal.is_empty(), "{:?}", w.metrics.fatal);
        let mut m = ModelFs::with_mounts(&["/d"]);
        for r in &w.history {
            let want = m.apply(&r.op);
            assert_eq!(r.ret.as_ref(), Some(&want), "{:?}", r.op);
        }
        w.quiesce().unwrap();
        let h1 = w.hash_of(NodeId(1)).unwrap();
        assert_eq!(
            w.tree_of(NodeId(1)).unwrap().first_difference(&m.tree()),
            None
        );
        assert_eq!(w.tree_of(NodeId(1)).unwrap().hash(), m.tree().hash());
        assert_eq!(w.hash_of(NodeId(2)).unwrap(), h1);
        assert_eq!(w.hash_of(NodeId(3)).unwrap(), h1);
    }
}

#[test]
fn failover_and_rejoin() {
    let mut cfg = ClusterConfig::simple(&[1, 2, 3], &["/d"]);
    cfg.mode = Mode::Pessimistic;
    let mut w = World::new(cfg).unwrap();
    w.spawn(NodeId(1), 0, ops()).unwrap();
    w.run_all(u64::MAX);
    let t = w.now;
    w.schedule(t + 10, Timer::Crash(CrashTarget::Node(NodeId(1))));
    w.schedule(t + 60_000_000_000, Timer::Restart(NodeId(1)));
    w.run_all(u64::MAX);
    assert_eq!(w.metrics.failovers.len(), 1, "{:?}", w.events);
    let late = vec![
        FsOp::Write {
            path: "/d/a/f".into(),
            offset: 0,
            data: vec![9; 10],
        },
        FsOp::Fsync {
            path: "/d/a/f".into(),
        },
    ];
    w.spawn(NodeId(2), 0, late).unwrap();
    w.run_all(u64::MAX);
    assert!(w.metrics.fatal.is_empty(), "{:?}", w.metrics.fatal);
    assert_eq!(w.metrics.rejoins.len(), 1, "{:#?}", w.events);
    w.quiesce().unwrap();
    let h = w.hash_of(NodeId(2)).unwrap();
    assert_eq!(w.hash_of(NodeId(1)).unwrap(), h);
    assert_eq!(w.hash_of(NodeId(3)).unwrap(), h);
    // Data written before the crash was synced, so the rejoined node must
    // have been told about the later overwrite.
    assert!(!w.metrics.rejoins[0].invalidated.is_empty());
}
