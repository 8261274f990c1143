use ccnvm::fabric::Fabric;
use ccnvm::ids::{Ino, NodeId};
use ccnvm::kernfs::shared::*;
use ccnvm::kernfs::state::BLOCK;
use ccnvm::media::LatencyModel;
use ccnvm::oplog::{LiveEntry, LogEntry, LogOp};
use ccnvm::posix::TreeNode;

fn setup(hot: u64) -> (Fabric, SharedArea) {
    let mut f = Fabric::new(LatencyModel::default());
    f.media.add_node(NodeId(1));
    let layout = AreaLayout::alloc(&mut f, NodeId(1), hot, 1 << 24).unwrap();
    let (a, _) = SharedArea::format(
        &mut f,
        NodeId(1),
        layout,
        Role::Cache,
        &[("/m".into(), Ino(2))],
        0,
    )
    .unwrap();
    (f, a)
}

fn entries(ops: Vec<LogOp>) -> Vec<LiveEntry> {
    ops.into_iter()
        .enumerate()
        .map(|(i, op)| LiveEntry {
            pos: 0,
            len: 0,
            entry: LogEntry {
                seq: i as u64 + 1,
                txn: i as u64 + 1,
                batch_end: true,
                op,
            },
        })
        .collect()
}

fn file_ops(n: u64) -> Vec<LogOp> {
    let mut ops = vec![LogOp::Create {
        parent: Ino(2),
        name: "f".into(),
        ino: Ino(100),
        mode: 0o644,
        uid: 5,
    }];
    for i in 0..n {
        ops.push(LogOp::Write {
            ino: Ino(100),
            offset: i * BLOCK,
            data: vec![i as u8 + 1; BLOCK as usize],
        });
    }
    ops
}

#[test]
fn digest_then_recover_matches() {
    let (mut f, mut a) = setup(1 << 20);
    let es = entries(file_ops(3));
    a.digest(&mut f, 7, &es, 0, 5, 1, 0).unwrap();
    let h = a.state_hash(&f, &["/m".into()]);
    let (b, dirty) = SharedArea::recover(&f, NodeId(1), a.layout);
    assert!(!dirty);
    assert_eq!(b.state_hash(&f, &["/m".into()]), h);
    assert_eq!(b.bitmaps[&1].len(), 2);
    let again = b.clone().digest(&mut f, 7, &es, 0, 5, 1, 0).unwrap().0;
    assert_eq!(again.applied, 0);
}

#[test]
fn hot_level_spills_to_cold() {
    // 10 hot slots: writing 10 blocks crosses the high-water mark.
    let (mut f, mut a) = setup(10 * BLOCK);
    a.digest(&mut f, 7, &entries(file_ops(10)), 0, 5, 1, 0)
        .unwrap();
    let per = a.blocks_per_level();
    assert_eq!(per[&Level::Hot], 7);
    assert_eq!(per[&Level::Cold], 3);
    let t = a.tree(&f, &["/m".into()]);
    match &t.entries["/m/f"] {
        TreeNode::File { data, .. } => {
            assert_eq!(data.len(), 10 * BLOCK as usize);
            assert_eq!(data[0], 1);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn uncommitted_group_is_discarded() {
    let (mut f, mut a) = setup(1 << 20);
    let before = a.state_hash(&f, &["/m".into()]);
    let n0 = f.media.global_issued();
    f.arm(Some(ccnvm::fabric::Trap {
        at_write: n0 + 3,
        target: ccnvm::fabric::CrashTarget::Node(NodeId(1)),
    }));
    assert!(a
        .digest(&mut f, 7, &entries(file_ops(3)), 0, 5, 1, 0)
        .is_err());
    f.restart_node(NodeId(1)).unwrap();
    let (mut b, dirty) = SharedArea::recover(&f, NodeId(1), a.layout);
    assert_eq!(b.state_hash(&f, &["/m".into()]), before);
    assert!(!dirty || b.seal(&mut f, 0).is_ok());
}
