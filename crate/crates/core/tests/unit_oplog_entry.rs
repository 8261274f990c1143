use ccnvm::error::Error;
use ccnvm::ids::Ino;
use ccnvm::oplog::entry::*;

fn samples() -> Vec<LogOp> {
    vec![
        LogOp::Write {
            ino: Ino(7),
            offset: 4096,
            data: vec![1, 2, 3],
        },
        LogOp::Create {
            parent: Ino(1),
            name: "f".into(),
            ino: Ino(9),
            mode: 0o644,
            uid: 1000,
        },
        LogOp::Mkdir {
            parent: Ino(1),
            name: "dir".into(),
            ino: Ino(10),
            mode: 0o755,
            uid: 0,
        },
        LogOp::Unlink {
            parent: Ino(1),
            name: "f".into(),
            ino: Ino(9),
        },
        LogOp::Rename {
            src_parent: Ino(1),
            src_name: "a".into(),
            dst_parent: Ino(10),
            dst_name: "bb".into(),
            ino: Ino(9),
            replaced: Some(Ino(11)),
        },
        LogOp::Truncate {
            ino: Ino(9),
            size: 12345,
        },
        LogOp::SetAttr {
            ino: Ino(9),
            mode: 0o600,
        },
    ]
}

#[test]
fn round_trip_every_op() {
    for (i, op) in samples().into_iter().enumerate() {
        let e = LogEntry {
            seq: i as u64 + 1,
            txn: 3,
            batch_end: i % 2 == 0,
            op,
        };
        let bytes = encode(&e);
        assert_eq!(bytes.len() % 8, 0);
        assert_eq!(bytes.len(), e.encoded_len());
        assert_eq!(peek_len(&bytes), Some(bytes.len()));
        assert_eq!(decode(&bytes).unwrap(), Decoded::Entry(e, bytes.len()));
    }
}

#[test]
fn corruption_is_detected() {
    let e = LogEntry {
        seq: 5,
        txn: 1,
        batch_end: true,
        op: samples()[0].clone(),
    };
    let mut bytes = encode(&e);
    bytes[HEADER_LEN] ^= 0xFF;
    assert_eq!(decode(&bytes), Err(Error::Checksum(5)));
}

#[test]
fn pad_and_empty() {
    assert_eq!(
        decode(&encode_pad(42)).unwrap(),
        Decoded::Pad { next_seq: 42 }
    );
    assert_eq!(decode(&[0u8; 64]).unwrap(), Decoded::Empty);
}
