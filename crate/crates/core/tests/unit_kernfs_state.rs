use ccnvm::ids::Ino;
use ccnvm::ids::ROOT_INO;
use ccnvm::kernfs::state::*;
use ccnvm::oplog::LogOp;
use ccnvm::posix::Errno;

fn create(name: &str, ino: u64) -> LogOp {
    LogOp::Create {
        parent: ROOT_INO,
        name: name.into(),
        ino: Ino(ino),
        mode: 0o644,
        uid: 7,
    }
}

#[test]
fn write_truncate_extend_reads_zeros() {
    let base = MemState::with_root(ROOT_INO);
    let mut d = Delta::default();
    d.apply(&base, &create("f", 10));
    d.apply(
        &base,
        &LogOp::Write {
            ino: Ino(10),
            offset: 0,
            data: vec![9; 6000],
        },
    );
    d.apply(
        &base,
        &LogOp::Truncate {
            ino: Ino(10),
            size: 100,
        },
    );
    d.apply(
        &base,
        &LogOp::Write {
            ino: Ino(10),
            offset: 5000,
            data: vec![1; 10],
        },
    );
    let v = Layered::new(&base, &d);
    let got = read_range(&v, Ino(10), 0, 10_000);
    assert_eq!(got.len(), 5010);
    assert!(got[..100].iter().all(|&b| b == 9));
    assert!(got[100..5000].iter().all(|&b| b == 0));
    assert!(got[5000..].iter().all(|&b| b == 1));
}

#[test]
fn merged_delta_equals_layered_view() {
    let mut base = MemState::with_root(ROOT_INO);
    let mut d = Delta::default();
    d.apply(&base, &create("f", 10));
    d.apply(
        &base,
        &LogOp::Write {
            ino: Ino(10),
            offset: 10,
            data: vec![3; 9000],
        },
    );
    base.merge(&d);
    let mut d2 = Delta::default();
    d2.apply(
        &base,
        &LogOp::Truncate {
            ino: Ino(10),
            size: 4100,
        },
    );
    let before = read_range(&Layered::new(&base, &d2), Ino(10), 0, 20_000);
    base.merge(&d2);
    assert_eq!(read_range(&base, Ino(10), 0, 20_000), before);
}

#[test]
fn replay_is_idempotent() {
    let base = MemState::with_root(ROOT_INO);
    let ops = vec![
        create("a", 10),
        LogOp::Rename {
            src_parent: ROOT_INO,
            src_name: "a".into(),
            dst_parent: ROOT_INO,
            dst_name: "b".into(),
            ino: Ino(10),
            replaced: None,
        },
        LogOp::Unlink {
            parent: ROOT_INO,
            name: "b".into(),
            ino: Ino(10),
        },
    ];
    let mut once = Delta::default();
    for op in &ops {
        once.apply(&base, op);
    }
    let mut twice = once.clone();
    for op in &ops {
        twice.apply(&base, op);
    }
    assert_eq!(
        Layered::new(&base, &once).entries(ROOT_INO),
        Layered::new(&base, &twice).entries(ROOT_INO)
    );
}

#[test]
fn permissions_follow_mode_bits() {
    let base = MemState::with_root(ROOT_INO);
    let mut d = Delta::default();
    d.apply(&base, &create("f", 10));
    d.apply(
        &base,
        &LogOp::SetAttr {
            ino: Ino(10),
            mode: 0o444,
        },
    );
    let v = Layered::new(&base, &d);
    let w = LogOp::Write {
        ino: Ino(10),
        offset: 0,
        data: vec![1],
    };
    assert_eq!(permitted(&v, 7, &w), Err(Errno::EACCES));
    assert_eq!(permitted(&v, 0, &w), Ok(()));
    assert_eq!(
        permitted(
            &v,
            8,
            &LogOp::SetAttr {
                ino: Ino(10),
                mode: 0o777
            }
        ),
        Err(Errno::EACCES)
    );
}
