use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ccnvm::config::{ClusterConfig, Mode};
use ccnvm::harness::lincheck::{self, Call, Verdict};
use ccnvm::harness::scenario::{run_scenario, Scenario};
use ccnvm::harness::workload::{random_ops, WorkloadKind, WorkloadSpec};
use ccnvm::ids::NodeId;
use ccnvm::posix::ModelFs;
use ccnvm::world::World;

fn mode() -> impl Strategy<Value = Mode> {
    prop_oneof![Just(Mode::Pessimistic), Just(Mode::Optimistic)]
}

fn spec(procs: usize, ops: usize) -> WorkloadSpec {
    WorkloadSpec {
        procs,
        ops,
        io_bytes: 700,
        sync_every: 5,
        ..WorkloadSpec::default()
    }
}

/// Calls run back to back by alternating clients, returns from the model.
fn sequential_history(seed: u64, n: usize) -> (Vec<String>, Vec<Call>) {
    let cfg = ClusterConfig::simple(&[1, 2], &["/d"]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ops = random_ops(&spec(1, n), &cfg, 0, &mut rng);
    let mounts = vec!["/d".to_string()];
    let mut m = ModelFs::with_mounts(&mounts);
    let calls = ops
        .into_iter()
        .enumerate()
        .map(|(i, op)| {
            let ret = m.apply(&op);
            Call {
                pid: 1 + (i % 2) as u32,
                op,
                invoke: i as u64 * 10,
                response: Some(i as u64 * 10 + 5),
                ret: Some(ret),
            }
        })
        .collect();
    (mounts, calls)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn one_client_matches_the_model(seed in any::<u64>(), mode in mode()) {
        let mut cfg = ClusterConfig::simple(&[1, 2, 3], &["/d"]);
        cfg.mode = mode;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ops = random_ops(&spec(1, 30), &cfg, 0, &mut rng);
        let mut w = World::new(cfg).unwrap();
        w.spawn(NodeId(1), 0, ops).unwrap();
        w.run_all(u64::MAX);
        prop_assert!(w.metrics.fatal.is_empty(), "{:?}", w.metrics.fatal);
        let mut m = ModelFs::with_mounts(&["/d"]);
        for r in &w.history {
            prop_assert_eq!(r.ret.as_ref(), Some(&m.apply(&r.op)), "{:?}", r.op);
        }
        w.quiesce().unwrap();
        let want = m.tree().hash();
        for n in 1..=3 {
            prop_assert_eq!(w.tree_of(NodeId(n)).unwrap().hash(), want.clone());
        }
    }

    #[test]
    fn coalescing_changes_bytes_not_state(seed in any::<u64>(), maildir in any::<bool>()) {
        let run = |coalesce: bool| {
            let mut cfg = ClusterConfig::simple(&[1, 2, 3], &["/d"]);
            cfg.mode = Mode::Optimistic;
            cfg.coalesce = coalesce;
            let mut s = spec(1, 30);
            if maildir {
                s.kind = WorkloadKind::Maildir;
                s.ops = 10;
            }
            let (w, sum) = run_scenario(&Scenario::new(cfg, s, seed)).unwrap();
            (w.hash_of(NodeId(3)).unwrap(), sum.metrics.replicated_bytes, sum.passed())
        };
        let (h_c, b_c, ok_c) = run(true);
        let (h_r, b_r, ok_r) = run(false);
        prop_assert!(ok_c && ok_r);
        prop_assert_eq!(h_c, h_r);
        prop_assert!(b_c <= b_r, "coalesced {} > raw {}", b_c, b_r);
    }

    #[test]
    fn shared_namespace_runs_pass_every_checker(
        seed in any::<u64>(),
        mode in mode(),
        procs in 2usize..=4,
        replicas in 2u32..=3,
    ) {
        let nodes: Vec<u32> = (1..=replicas).collect();
        let mut cfg = ClusterConfig::simple(&nodes, &["/d"]);
        cfg.mode = mode;
        let (_, s) = run_scenario(&Scenario::new(cfg, spec(procs, 20), seed)).unwrap();
        for c in &s.checks {
            prop_assert!(c.pass, "{}: {}", c.name, c.detail);
        }
        prop_assert!(s.metrics.lease_audits > 0);
    }

    #[test]
    fn same_seed_same_trace(seed in any::<u64>(), mode in mode()) {
        let mut cfg = ClusterConfig::simple(&[1, 2, 3], &["/d"]);
        cfg.mode = mode;
        let sc = Scenario::new(cfg, spec(3, 15), seed);
        let a = run_scenario(&sc).unwrap().1.trace_hash;
        let b = run_scenario(&sc).unwrap().1.trace_hash;
        prop_assert_eq!(a, b);
    }

    #[test]
    fn sequential_histories_are_linearizable(seed in any::<u64>(), n in 1usize..25) {
        let (mounts, h) = sequential_history(seed, n);
        prop_assert!(lincheck::linearizable(&mounts, &h));
    }

    #[test]
    fn mutants_are_rejected_with_a_witness(seed in any::<u64>()) {
        let (mounts, h) = sequential_history(seed, 24);
        for (m, bad) in lincheck::mutations(&h) {
            match lincheck::check(&mounts, &bad, lincheck::DEFAULT_BOUND) {
                Verdict::Violation { witness } => {
                    prop_assert!(!witness.is_empty());
                    prop_assert!(witness.len() <= bad.len());
                    prop_assert!(!lincheck::linearizable(&mounts, &witness), "{:?}", m);
                }
                v => prop_assert!(false, "{:?} accepted: {:?}", m, v),
            }
        }
    }
}
