use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn ccnvm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ccnvm"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn sample_scenarios_pass_check() {
    let tmp = tempfile::tempdir().unwrap();
    for name in ["basic", "crash_failover", "maildir"] {
        let file = scenarios().join(format!("{name}.toml"));
        let out = ccnvm(tmp.path(), &["check", file.to_str().unwrap()]);
        let stdout = String::from_utf8_lossy(&out.stdout);
        assert!(out.status.success(), "{name}: {stdout}");
        assert!(stdout.contains("linearizability\tpass"), "{stdout}");
        let json: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(tmp.path().join("summary.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(json["checks"].as_array().unwrap().len(), 5);
    }
}

#[test]
fn config_override_and_trace_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = scenarios().join("cluster.toml");
    let sc = scenarios().join("basic.toml");
    let out = ccnvm(
        tmp.path(),
        &[
            "--config",
            cfg.to_str().unwrap(),
            "run",
            sc.to_str().unwrap(),
            "--trace",
            "t.tsv",
            "--metrics",
            "m.tsv",
        ],
    );
    assert!(out.status.success());
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("summary.json")).unwrap())
            .unwrap();
    // Four nodes come from the override, not the scenario's three.
    assert_eq!(json["node_hashes"].as_object().unwrap().len(), 4);
    let metrics = std::fs::read_to_string(tmp.path().join("m.tsv")).unwrap();
    assert!(metrics.starts_with("metric\tvalue\n"));
    let out = ccnvm(tmp.path(), &["trace", "t.tsv"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("tag\tmessages\tbytes"));
    assert!(text.contains("GRANT"));
}

#[test]
fn bad_inputs_fail() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("bad.tsv"), "not a trace line\n").unwrap();
    assert!(!ccnvm(tmp.path(), &["trace", "bad.tsv"]).status.success());
    std::fs::write(tmp.path().join("bad.toml"), "nodes = 3\n").unwrap();
    assert!(!ccnvm(tmp.path(), &["check", "bad.toml"]).status.success());
    assert!(!ccnvm(tmp.path(), &["check", "missing.toml"])
        .status
        .success());
}

#[test]
fn recovery_sweep_prints_a_table() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ccnvm(
        tmp.path(),
        &[
            "sweep",
            "recovery",
            "--scales",
            "1,2",
            "--exec",
            "sequential",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().count(), 3);
    assert!(text.starts_with("scale\tdataset_bytes"));
}
