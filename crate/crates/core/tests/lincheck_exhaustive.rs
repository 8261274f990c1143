//! Every interleaving of three five-call scripts. Slow on few cores; run
//! with `cargo test --release -- --ignored`.

use ccnvm::config::Mode;
use ccnvm::harness::par::Exec;
use ccnvm::harness::sweeps::{interleavings, lincheck_sweep};

#[test]
#[ignore]
fn three_by_five_every_interleaving() {
    for mode in [Mode::Pessimistic, Mode::Optimistic] {
        let r = lincheck_sweep(Exec::default(), mode, 3, 5, usize::MAX, 1);
        assert!(r.exhaustive);
        assert_eq!(r.runs as u64, interleavings(3, 5));
        assert_eq!(
            r.accepted,
            r.runs,
            "{:?}",
            &r.failures[..r.failures.len().min(3)]
        );
        assert_eq!(r.mutants_rejected, r.mutants);
    }
}
