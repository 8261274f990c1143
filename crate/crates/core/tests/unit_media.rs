use ccnvm::error::Error;
use ccnvm::ids::{NodeId, RegionId};
use ccnvm::media::*;
use std::collections::BTreeMap;

fn media() -> (Media, RegionId) {
    let mut m = Media::new(LatencyModel::default());
    m.add_node(NodeId(1));
    let r = m.alloc(NodeId(1), Tier::Nvm, 1 << 20, None).unwrap();
    (m, r)
}

#[test]
fn persisted_write_survives_crash() {
    let (mut m, r) = media();
    let t = m
        .write_persistent(r, 0, &[7u8; 64], 0, Access::Local)
        .unwrap();
    m.advance_to(t.deadline);
    assert!(m.is_persisted(&t));
    m.crash_node(NodeId(1), &CutPolicy::DropUnpersisted)
        .unwrap();
    m.recover(NodeId(1)).unwrap();
    assert_eq!(m.read(r, 0, 64).unwrap(), vec![7u8; 64]);
}

#[test]
fn write_at_capacity_is_rejected() {
    let (mut m, r) = media();
    let err = m
        .write_persistent(r, 1 << 20, &[1], 0, Access::Local)
        .unwrap_err();
    assert!(matches!(err, Error::CapacityExceeded { .. }));
    let err = m.write_persistent(r, 1 << 20, &[], 0, Access::Local);
    assert!(matches!(err, Err(Error::CapacityExceeded { .. })));
}

#[test]
fn unknown_region_and_node() {
    let (mut m, _) = media();
    assert_eq!(
        m.read(RegionId(99), 0, 1).unwrap_err(),
        Error::UnknownRegion(RegionId(99))
    );
    assert_eq!(
        m.recover(NodeId(42)).unwrap_err(),
        Error::UnknownNode(NodeId(42))
    );
    assert!(m.crash_node(NodeId(42), &CutPolicy::KeepAll).is_err());
}

#[test]
fn visibility_precedes_durability() {
    let (mut m, r) = media();
    let t = m
        .write_persistent(r, 8, b"abcdefgh", 0, Access::Local)
        .unwrap();
    assert!(!m.is_persisted(&t));
    assert_eq!(m.read(r, 8, 8).unwrap(), b"abcdefgh");
    assert_eq!(m.region(r).unwrap().durable_bytes(8, 8), vec![0u8; 8]);
}

#[test]
fn untouched_range_reads_zero() {
    let (m, r) = media();
    assert_eq!(m.read(r, 4000, 200).unwrap(), vec![0u8; 200]);
}

#[test]
fn read_across_writes_matches_shadow_copy() {
    let (mut m, r) = media();
    let mut shadow = vec![0u8; 256];
    let writes: [(u64, &[u8]); 3] = [(0, &[1; 100]), (50, &[2; 100]), (120, &[3; 40])];
    for (off, d) in writes {
        m.write_persistent(r, off, d, 0, Access::Local).unwrap();
        shadow[off as usize..off as usize + d.len()].copy_from_slice(d);
    }
    assert_eq!(m.read(r, 0, 256).unwrap(), shadow);
    m.advance_to(u64::MAX);
    assert_eq!(m.read(r, 0, 256).unwrap(), shadow);
}

#[test]
fn dram_is_erased_by_crash() {
    let (mut m, _) = media();
    let d = m.alloc(NodeId(1), Tier::Dram, 4096, None).unwrap();
    m.write_volatile(d, 0, &[9; 16]).unwrap();
    m.crash_node(NodeId(1), &CutPolicy::KeepAll).unwrap();
    assert_eq!(m.read(d, 0, 16), Err(Error::NodeCrashed(NodeId(1))));
    m.recover(NodeId(1)).unwrap();
    assert_eq!(m.read(d, 0, 16).unwrap(), vec![0u8; 16]);
}

#[test]
fn explicit_cut_keeps_only_first_write() {
    let (mut m, r) = media();
    for (i, b) in [1u8, 2, 3].iter().enumerate() {
        m.write_persistent(r, i as u64 * 8, &[*b; 8], 0, Access::Local)
            .unwrap();
    }
    let cut = CutPolicy::Prefix(BTreeMap::from([(r, 1)]));
    m.crash_node(NodeId(1), &cut).unwrap();
    m.recover(NodeId(1)).unwrap();
    let got = m.read(r, 0, 24).unwrap();
    assert_eq!(&got[..8], &[1u8; 8]);
    assert_eq!(&got[8..], &[0u8; 16]);
}

#[test]
fn ssd_requires_block_alignment() {
    let (mut m, _) = media();
    let s = m.alloc(NodeId(1), Tier::Ssd, 1 << 20, None).unwrap();
    assert!(matches!(
        m.write_persistent(s, 100, &[0; 4096], 0, Access::Local),
        Err(Error::Misaligned { .. })
    ));
    m.write_persistent(s, 4096, &[5; 4096], 0, Access::Local)
        .unwrap();
}

#[test]
fn deadlines_are_fifo() {
    let (mut m, r) = media();
    let big = m
        .write_persistent(r, 0, &vec![1u8; 1 << 16], 0, Access::Rdma)
        .unwrap();
    let small = m
        .write_persistent(r, 1 << 17, &[2; 8], 0, Access::Local)
        .unwrap();
    assert!(small.deadline >= big.deadline);
}

#[test]
fn default_latency_follows_hierarchy() {
    let h = LatencyModel::default().hierarchy();
    assert!(h.windows(2).all(|w| w[0] < w[1]), "{h:?}");
}

#[test]
fn region_file_round_trip_with_journal() {
    let dir = tempfile::tempdir().unwrap();
    let (mut m, r) = media();
    m.set_journaling(r, true).unwrap();
    m.write_persistent(r, 0, &[1; 8], 0, Access::Local).unwrap();
    m.write_persistent(r, 4, &[2; 8], 0, Access::Local).unwrap();
    m.advance_to(u64::MAX);
    let path = dir.path().join("r.img");
    m.save_region(r, &path).unwrap();
    let img = read_region_file(&path).unwrap();
    let j = read_journal(&journal_path(&path)).unwrap();
    assert_eq!(j.len(), 2);
    assert_eq!(replay_prefix(img.capacity, &j, 2), img.bytes);
    let one = replay_prefix(img.capacity, &j, 1);
    assert_eq!(&one[..8], &[1; 8]);
    let loaded = m.load_region(NodeId(1), &path).unwrap();
    assert_eq!(m.read(loaded, 0, 12).unwrap(), m.read(r, 0, 12).unwrap());
}
