use ccnvm::ids::Ino;
use ccnvm::oplog::coalesce::*;
use ccnvm::oplog::entry::{LogEntry, LogOp};

fn e(seq: u64, op: LogOp) -> LogEntry {
    LogEntry {
        seq,
        txn: seq,
        batch_end: true,
        op,
    }
}

fn w(seq: u64, ino: u64, off: u64, data: &[u8]) -> LogEntry {
    e(
        seq,
        LogOp::Write {
            ino: Ino(ino),
            offset: off,
            data: data.to_vec(),
        },
    )
}

#[test]
fn full_overwrite_keeps_last() {
    let out = coalesce(&[w(1, 5, 0, &[1; 4096]), w(2, 5, 0, &[2; 4096])]);
    assert_eq!(out, vec![w(2, 5, 0, &[2; 4096])]);
}

#[test]
fn partial_overwrite_trims() {
    let out = coalesce(&[w(1, 5, 0, &[1; 10]), w(2, 5, 3, &[2; 4])]);
    assert_eq!(
        out,
        vec![
            w(1, 5, 0, &[1; 3]),
            w(1, 5, 7, &[1; 3]),
            w(2, 5, 3, &[2; 4])
        ]
    );
}

#[test]
fn create_write_unlink_vanishes() {
    let create = e(
        1,
        LogOp::Create {
            parent: Ino(1),
            name: "t".into(),
            ino: Ino(9),
            mode: 0o644,
            uid: 0,
        },
    );
    let unlink = e(
        3,
        LogOp::Unlink {
            parent: Ino(1),
            name: "t".into(),
            ino: Ino(9),
        },
    );
    assert!(coalesce(&[create, w(2, 9, 0, b"tmp"), unlink]).is_empty());
}

#[test]
fn disjoint_writes_unchanged() {
    let input = vec![w(1, 5, 0, b"aa"), w(2, 6, 0, b"bb"), w(3, 5, 2, b"cc")];
    assert_eq!(coalesce(&input), input);
}
