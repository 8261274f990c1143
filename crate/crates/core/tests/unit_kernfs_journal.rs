use ccnvm::fabric::Fabric;
use ccnvm::ids::NodeId;
use ccnvm::kernfs::journal::*;
use ccnvm::media::Access;
use ccnvm::media::{LatencyModel, Tier};
use ccnvm::simnet::Endpoint;

#[test]
fn append_then_scan_round_trips() {
    let mut f = Fabric::new(LatencyModel::default());
    f.media.add_node(NodeId(1));
    let r = f.media.alloc(NodeId(1), Tier::Nvm, 1 << 20, None).unwrap();
    let me = Endpoint::kernfs(NodeId(1));
    let mut j = Journal::new(r);
    for i in 0..5u32 {
        j.append(&mut f, me, &vec![i; i as usize], 0, Access::Kernel)
            .unwrap();
    }
    let (j2, recs) = Journal::scan::<Vec<u32>, _>(r, 1 << 20, |o, l| f.peek(r, o, l).unwrap());
    assert_eq!(recs.len(), 5);
    assert_eq!(recs[3], vec![3, 3, 3]);
    assert_eq!(j2, j);
}

#[test]
fn scan_stops_at_sequence_gap() {
    let mut f = Fabric::new(LatencyModel::default());
    f.media.add_node(NodeId(1));
    let r = f.media.alloc(NodeId(1), Tier::Nvm, 1 << 20, None).unwrap();
    let me = Endpoint::kernfs(NodeId(1));
    let mut j = Journal::new(r);
    j.append(&mut f, me, &1u8, 0, Access::Kernel).unwrap();
    j.next_jseq += 1;
    j.append(&mut f, me, &2u8, 0, Access::Kernel).unwrap();
    let (_, recs) = Journal::scan::<u8, _>(r, 1 << 20, |o, l| f.peek(r, o, l).unwrap());
    assert_eq!(recs, vec![1]);
}
