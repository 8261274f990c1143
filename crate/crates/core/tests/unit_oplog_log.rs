use ccnvm::ids::{Ino, RegionId};
use ccnvm::oplog::entry::{LogOp, HEADER_LEN};
use ccnvm::oplog::log::*;

fn write_op(ino: u64, off: u64, n: usize) -> LogOp {
    LogOp::Write {
        ino: Ino(ino),
        offset: off,
        data: vec![7; n],
    }
}

#[test]
fn superblock_round_trip() {
    let sb = Superblock {
        capacity: 1 << 20,
        head_pos: 4160,
        head_seq: 9,
    };
    assert_eq!(Superblock::decode(&sb.encode()), Some(sb));
    let mut bad = sb.encode();
    bad[30] ^= 1;
    assert_eq!(Superblock::decode(&bad), None);
}

#[test]
fn first_append_gets_seq_one() {
    let mut log = UpdateLog::new(1, RegionId(1), 1 << 20);
    let writes = log.append_txn(vec![write_op(5, 0, 1024)]);
    assert_eq!(log.tail_seq(), 1);
    assert_eq!(writes.len(), 1);
    assert_eq!(writes[0].0, SUPERBLOCK_LEN);
    assert_eq!(log.tail_pos, (HEADER_LEN + 1024) as u64);
}

#[test]
fn index_tracks_latest() {
    let mut log = UpdateLog::new(1, RegionId(1), 1 << 20);
    log.append_txn(vec![write_op(5, 0, 100)]);
    log.append_txn(vec![write_op(5, 10, 100)]);
    assert_eq!(log.index.get(&(Ino(5), 0)), Some(&2));
    assert_eq!(log.latest_write_scan(Ino(5), 0), Some(2));
}

#[test]
fn layout_wraps_with_pad() {
    let ring = Ring {
        capacity: 64 + 1000,
    };
    let items = vec![(1, vec![1u8; 600]), (2, vec![2u8; 600])];
    let (writes, end) = ring.layout(0, &items);
    assert_eq!(writes.len(), 3);
    assert_eq!(writes[1].1.len(), HEADER_LEN);
    assert_eq!(writes[2].0, SUPERBLOCK_LEN);
    assert_eq!(end, 1000 + 600);
}

#[test]
fn split_at_block_boundaries() {
    let ops = split_write(Ino(3), 4000, &[0; 5000]);
    let offs: Vec<u64> = ops
        .iter()
        .map(|o| match o {
            LogOp::Write { offset, .. } => *offset,
            _ => unreachable!(),
        })
        .collect();
    assert_eq!(offs, vec![4000, 4096, 8192]);
}
