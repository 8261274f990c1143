use ccnvm::config::*;
use ccnvm::ids::NodeId;
use ccnvm::time::SEC;

#[test]
fn minimal_file_parses_with_defaults() {
    let c = ClusterConfig::from_toml(
        "nodes = [1, 2, 3]\n[[chains]]\nmounts = [\"/d\"]\nreplicas = [1, 2]\nreserve = 3\n",
    )
    .unwrap();
    assert_eq!(c.mode, Mode::Pessimistic);
    assert_eq!(c.timeouts.manager_expiry_ns, 5 * SEC);
    assert_eq!(c.chain_of_path("/d/x/y"), Some(0));
    assert_eq!(c.chain_of_path("/e"), None);
    let back = ClusterConfig::from_toml(&c.to_toml()).unwrap();
    assert_eq!(back, c);
}

#[test]
fn reserve_must_not_be_a_cache_replica() {
    let mut c = ClusterConfig::simple(&[1, 2], &["/d"]);
    c.chains[0].reserve = Some(NodeId(2));
    assert!(c.validate().is_err());
}

#[test]
fn nested_mounts_rejected() {
    let c = ClusterConfig::simple(&[1], &["/d/e"]);
    assert!(c.validate().is_err());
}
