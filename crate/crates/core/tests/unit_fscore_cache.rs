use ccnvm::fscore::cache::*;
use ccnvm::ids::{Ino, RegionId};

#[test]
fn evicts_least_recent() {
    let mut c = ReadCache::new(RegionId(1), 2);
    let a = c.insert(Ino(1), 0);
    c.insert(Ino(1), 1);
    c.lookup(Ino(1), 0);
    let s = c.insert(Ino(2), 0);
    assert!(c.contains(Ino(1), 0));
    assert!(!c.contains(Ino(1), 1));
    assert_ne!(s, a);
    c.drop_inodes(&[Ino(1)].into_iter().collect());
    assert_eq!(c.len(), 1);
}
