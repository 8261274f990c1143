use ccnvm::posix::*;

fn p(s: &str) -> String {
    s.to_string()
}

#[test]
fn create_write_read() {
    let mut fs = ModelFs::with_mounts(&["/a"]);
    assert_eq!(fs.apply(&FsOp::Create { path: p("/a/f") }), FsRet::Ok);
    assert_eq!(
        fs.apply(&FsOp::Create { path: p("/a/f") }),
        FsRet::Err(Errno::EEXIST)
    );
    fs.apply(&FsOp::Write {
        path: p("/a/f"),
        offset: 2,
        data: b"xy".to_vec(),
    });
    assert_eq!(
        fs.apply(&FsOp::Read {
            path: p("/a/f"),
            offset: 0,
            len: 10
        }),
        FsRet::Data(vec![0, 0, b'x', b'y'])
    );
}

#[test]
fn rename_then_readdir() {
    let mut fs = ModelFs::with_mounts(&["/d"]);
    fs.apply(&FsOp::Create { path: p("/d/a") });
    assert_eq!(
        fs.apply(&FsOp::Rename {
            from: p("/d/a"),
            to: p("/d/b")
        }),
        FsRet::Ok
    );
    assert_eq!(
        fs.apply(&FsOp::Readdir { path: p("/d") }),
        FsRet::Names(vec![p("b")])
    );
}

#[test]
fn mount_points_are_fixed() {
    let mut fs = ModelFs::with_mounts(&["/a", "/b"]);
    assert_eq!(
        fs.apply(&FsOp::Rmdir { path: p("/a") }),
        FsRet::Err(Errno::EACCES)
    );
    assert_eq!(
        fs.apply(&FsOp::Mkdir { path: p("/c") }),
        FsRet::Err(Errno::EACCES)
    );
    fs.apply(&FsOp::Create { path: p("/a/x") });
    assert_eq!(
        fs.apply(&FsOp::Rename {
            from: p("/a/x"),
            to: p("/b/x")
        }),
        FsRet::Err(Errno::EXDEV)
    );
}

#[test]
fn rmdir_requires_empty() {
    let mut fs = ModelFs::with_mounts(&["/a"]);
    fs.apply(&FsOp::Mkdir { path: p("/a/d") });
    fs.apply(&FsOp::Create { path: p("/a/d/f") });
    assert_eq!(
        fs.apply(&FsOp::Rmdir { path: p("/a/d") }),
        FsRet::Err(Errno::ENOTEMPTY)
    );
    assert_eq!(
        fs.apply(&FsOp::Unlink { path: p("/a/d") }),
        FsRet::Err(Errno::EISDIR)
    );
}

#[test]
fn truncate_and_tree_hash() {
    let mut a = ModelFs::with_mounts(&["/a"]);
    let mut b = ModelFs::with_mounts(&["/a"]);
    for fs in [&mut a, &mut b] {
        fs.apply(&FsOp::Create { path: p("/a/f") });
    }
    a.apply(&FsOp::Write {
        path: p("/a/f"),
        offset: 0,
        data: vec![1; 10],
    });
    a.apply(&FsOp::Truncate {
        path: p("/a/f"),
        size: 0,
    });
    assert_eq!(a.state_hash(), b.state_hash());
}

#[test]
fn components_reject_relative() {
    assert_eq!(components("a/b"), Err(Errno::EINVAL));
    assert_eq!(components("/").unwrap(), Vec::<String>::new());
    assert_eq!(join(&components("/x//y/").unwrap()), "/x/y");
}
