use ccnvm::config::{ClusterConfig, Mode};
use ccnvm::fabric::{CrashTarget, Trap};
use ccnvm::harness::par::Exec;
use ccnvm::harness::scenario::Scenario;
use ccnvm::harness::workload::{WorkloadKind, WorkloadSpec};
use ccnvm::harness::{digest, prefix, rejoin};
use ccnvm::ids::NodeId;
use ccnvm::posix::FsOp;

fn scenario(mode: Mode, replicas: &[u32], procs: usize, seed: u64) -> Scenario {
    let mut cfg = ClusterConfig::simple(replicas, &["/d"]);
    cfg.mode = mode;
    let spec = WorkloadSpec {
        kind: WorkloadKind::Random,
        procs,
        ops: 12,
        io_bytes: 512,
        sync_every: 4,
        ..WorkloadSpec::default()
    };
    Scenario::new(cfg, spec, seed)
}

#[test]
fn crash_cuts_leave_a_prefix() {
    for mode in [Mode::Pessimistic, Mode::Optimistic] {
        let sc = scenario(mode, &[1, 2, 3], 2, 3);
        let trials = prefix::sweep(Exec::default(), || sc.build().unwrap(), 30);
        assert!(trials.iter().all(|t| t.fired));
        let bad: Vec<_> = trials.iter().filter(|t| t.verdict.is_err()).collect();
        assert!(bad.is_empty(), "{mode:?}: {bad:?}");
    }
}

#[test]
fn failed_over_writer_keeps_its_synced_prefix() {
    let sc = scenario(Mode::Pessimistic, &[1, 2, 3], 2, 3);
    let base = sc.build().unwrap().fab.media.global_issued();
    let mut w = sc.build().unwrap();
    let (pid, node) = {
        let p = w.procs.values().next().unwrap();
        (p.pid, p.node)
    };
    w.restart_after = Some(30_000_000_000);
    w.fab.arm(Some(Trap {
        at_write: base + 100,
        target: CrashTarget::Node(node),
    }));
    w.run_all(u64::MAX);
    assert_eq!(w.metrics.failovers.len(), 1);
    assert_eq!(w.metrics.rejoins.len(), 1);
    w.quiesce().unwrap();
    let cut = prefix::check(&w).unwrap();
    assert!(cut[&pid] >= w.procs[&pid].durable_upto);
}

#[test]
fn checker_rejects_a_tampered_replica() {
    let sc = scenario(Mode::Pessimistic, &[1, 2], 1, 4);
    let mut w = sc.build().unwrap();
    w.run_all(u64::MAX);
    w.quiesce().unwrap();
    assert!(prefix::check(&w).is_ok());
    // A write nobody issued, applied behind the checker's back on one
    // replica only.
    let pid = w
        .spawn(
            NodeId(1),
            0,
            vec![FsOp::Mkdir {
                path: "/d/zz".into(),
            }],
        )
        .unwrap();
    w.run_all(u64::MAX);
    w.quiesce().unwrap();
    w.history.retain(|r| r.pid != pid);
    assert!(prefix::check(&w).is_err());
}

#[test]
fn digest_crashes_converge_to_the_clean_state() {
    for mode in [Mode::Pessimistic, Mode::Optimistic] {
        let mut cfg = ClusterConfig::simple(&[1, 2, 3], &["/p0", "/p1", "/p2"]);
        cfg.mode = mode;
        let spec = WorkloadSpec {
            kind: WorkloadKind::Private,
            procs: 3,
            ops: 12,
            io_bytes: 512,
            sync_every: 0,
            ..WorkloadSpec::default()
        };
        let w = digest::prepare(Scenario::new(cfg, spec, 5).build().unwrap()).unwrap();
        assert!(digest::digest_writes(&w).unwrap() > 0);
        let ts = digest::sweep(Exec::default(), &w, 30).unwrap();
        assert!(
            ts.iter().all(|t| t.fired && t.verdict.is_ok()),
            "{mode:?}: {ts:?}"
        );
    }
}

#[test]
fn rejoin_invalidates_what_changed() {
    for mode in [Mode::Pessimistic, Mode::Optimistic] {
        for t in rejoin::sweep(Exec::default(), mode, 0..10) {
            assert!(t.verdict.is_ok(), "{mode:?} {t:?}");
            assert!(t.invalidated >= t.written);
            assert!(t.reads > 0);
        }
    }
}
