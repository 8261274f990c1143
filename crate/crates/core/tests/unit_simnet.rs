use ccnvm::error::Error;
use ccnvm::ids::{NodeId, ProcId, RegionId};
use ccnvm::media::CutPolicy;
use ccnvm::media::{LatencyModel, Media, Tier};
use ccnvm::simnet::*;
use ccnvm::time::SEC;
use std::collections::BTreeMap;

fn setup() -> (Media, SimNet, RegionId, Endpoint, Endpoint) {
    let mut media = Media::new(LatencyModel::default());
    media.add_node(NodeId(1));
    media.add_node(NodeId(2));
    let r = media.alloc(NodeId(2), Tier::Nvm, 1 << 16, None).unwrap();
    let mut net = SimNet::new(LatencyModel::default());
    let src = Endpoint::libfs(NodeId(1), ProcId(1));
    let dst = Endpoint::kernfs(NodeId(2));
    net.register(r, src);
    (media, net, r, src, dst)
}

#[test]
fn rdma_write_lands_in_registered_region() {
    let (mut media, mut net, r, src, dst) = setup();
    let t = net
        .rdma_write(
            &mut media,
            0,
            src,
            dst,
            r,
            0,
            &[4u8; 128],
            Tag::SegmentWrite,
        )
        .unwrap();
    assert!(t.deadline >= LatencyModel::default().nvm_rdma_write_ns);
    assert_eq!(media.read(r, 0, 128).unwrap(), vec![4u8; 128]);
}

#[test]
fn unregistered_write_is_rejected() {
    let (mut media, mut net, r, _, dst) = setup();
    let other = Endpoint::libfs(NodeId(1), ProcId(9));
    let err = net
        .rdma_write(&mut media, 0, other, dst, r, 0, &[1; 8], Tag::SegmentWrite)
        .unwrap_err();
    assert!(matches!(err, Error::UnregisteredRegion { .. }));
}

#[test]
fn crash_after_first_of_two_writes_keeps_prefix() {
    let (mut media, mut net, r, src, dst) = setup();
    net.rdma_write(&mut media, 0, src, dst, r, 0, &[1; 8], Tag::SegmentWrite)
        .unwrap();
    net.rdma_write(&mut media, 0, src, dst, r, 8, &[2; 8], Tag::SegmentWrite)
        .unwrap();
    for keep in 0..=2usize {
        let mut m = media.clone();
        m.crash_node(NodeId(2), &CutPolicy::Prefix(BTreeMap::from([(r, keep)])))
            .unwrap();
        m.recover(NodeId(2)).unwrap();
        let got = m.read(r, 0, 16).unwrap();
        let w1 = got[..8] == [1; 8];
        let w2 = got[8..] == [2; 8];
        assert!(!(w2 && !w1), "W2 persisted without W1");
        assert_eq!(w1 as usize + w2 as usize, keep);
    }
}

#[test]
fn rpc_follows_prior_write_on_connection() {
    let (mut media, mut net, r, src, dst) = setup();
    net.rdma_write(
        &mut media,
        0,
        src,
        dst,
        r,
        0,
        b"payload!",
        Tag::SegmentWrite,
    )
    .unwrap();
    let m = &media;
    let (reply, _) = net
        .rpc(0, src, dst, Tag::ChainStep, b"go", |_| {
            m.read(r, 0, 8).unwrap()
        })
        .unwrap();
    assert_eq!(reply, b"payload!");
}

#[test]
fn rpc_to_crashed_node_fails_after_timeout() {
    let (_, mut net, _, src, dst) = setup();
    net.set_down(NodeId(2), true);
    let err = net
        .rpc(5, src, dst, Tag::Echo, b"x", |r| r.to_vec())
        .unwrap_err();
    assert_eq!(
        err,
        Error::DstFailed {
            node: NodeId(2),
            detected_at: 5 + SEC
        }
    );
}

#[test]
fn echo_rpc_returns_payload() {
    let (_, mut net, _, src, dst) = setup();
    let (reply, at) = net
        .rpc(0, src, dst, Tag::Echo, b"hello", |r| r.to_vec())
        .unwrap();
    assert_eq!(reply, b"hello");
    assert!(at > 0);
}

#[test]
fn per_connection_sequence_is_fifo() {
    let (_, mut net, _, src, dst) = setup();
    for _ in 0..5 {
        net.send(0, MsgKind::RpcRequest, src, dst, 1, Tag::Echo)
            .unwrap();
    }
    let seqs: Vec<u64> = net.trace().iter().map(|r| r.seq).collect();
    assert_eq!(seqs, vec![1, 2, 3, 4, 5]);
}

#[test]
fn trace_line_round_trip() {
    let rec = TraceRecord {
        time: 42,
        kind: MsgKind::RdmaWrite,
        src: Endpoint::libfs(NodeId(1), ProcId(3)),
        dst: Endpoint::manager(),
        size: 64,
        tag: Tag::Grant,
        seq: 0,
    };
    let line = rec.line();
    assert_eq!(line, "42\tRDMA_WRITE\tn1.p3\tcm\t64\tGRANT");
    assert_eq!(TraceRecord::parse_line(&line).unwrap(), rec);
}
