//! Tab-separated tables.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde_json::Value;

use ccnvm::harness::scenario::{Check, RunSummary};
use ccnvm::harness::sweeps::{LogSizePoint, RecoveryPoint};
use ccnvm::simnet::TraceRecord;

/// Scalar metrics as `metric\tvalue`, then per-tag traffic.
pub fn metrics(s: &RunSummary) -> String {
    let mut out = String::from("metric\tvalue\n");
    let rows = [
        ("seed", s.seed.to_string()),
        ("calls", s.calls.to_string()),
        ("completed", s.completed.to_string()),
        ("sim_time_ns", s.sim_time_ns.to_string()),
        ("remote_lease_hops", s.remote_lease_hops.to_string()),
        ("trace_hash", s.trace_hash.clone()),
    ];
    for (k, v) in rows {
        let _ = writeln!(out, "{k}\t{v}");
    }
    if let Ok(Value::Object(m)) = serde_json::to_value(&s.metrics) {
        for (k, v) in m {
            match v {
                Value::Number(n) => {
                    let _ = writeln!(out, "{k}\t{n}");
                }
                Value::Array(a) if k != "violation_notes" && k != "fatal" => {
                    let _ = writeln!(out, "{k}\t{}", a.len());
                }
                _ => {}
            }
        }
    }
    out.push_str("\ntag\tbytes\n");
    for (t, b) in &s.net_bytes {
        let _ = writeln!(out, "{t}\t{b}");
    }
    out
}

pub fn checks(cs: &[Check]) -> String {
    let mut out = String::from("check\tresult\tdetail\n");
    for c in cs {
        let detail = c.detail.replace(['\t', '\n'], " ");
        let _ = writeln!(
            out,
            "{}\t{}\t{detail}",
            c.name,
            if c.pass { "pass" } else { "FAIL" }
        );
    }
    out
}

pub fn log_size(pts: &[LogSizePoint]) -> String {
    let mut out = String::from(
        "log_bytes\tappended_bytes\tdigests\texpected_digests\tsim_ns\tmb_per_s\tnormalized\n",
    );
    let base = pts.first().map_or(1.0, |p| p.mb_per_s);
    for p in pts {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{:.1}\t{:.3}",
            p.log_bytes,
            p.appended_bytes,
            p.digests,
            p.expected_digests,
            p.sim_ns,
            p.mb_per_s,
            p.mb_per_s / base
        );
    }
    out
}

pub fn recovery(pts: &[RecoveryPoint]) -> String {
    let mut out = String::from(
        "scale\tdataset_bytes\tfailover_bytes\tfailover_ns\tcold_rebuild_bytes\tcold_rebuild_ns\n",
    );
    for p in pts {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            p.scale,
            p.dataset_bytes,
            p.failover_bytes,
            p.failover_ns,
            p.rebuild_bytes,
            p.rebuild_ns
        );
    }
    out
}

/// Aligned listing with readable times, then totals per tag.
pub fn trace(recs: &[&TraceRecord]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>14}  {:<12} {:<10} {:<10} {:>8}  tag",
        "time", "kind", "src", "dst", "bytes"
    );
    let mut by_tag: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
    for r in recs {
        let _ = writeln!(
            out,
            "{:>14}  {:<12} {:<10} {:<10} {:>8}  {}",
            human_time(r.time),
            r.kind.name(),
            r.src.to_string(),
            r.dst.to_string(),
            r.size,
            r.tag.name()
        );
        let e = by_tag.entry(r.tag.name()).or_default();
        e.0 += 1;
        e.1 += r.size;
    }
    out.push_str("\ntag\tmessages\tbytes\n");
    for (t, (n, b)) in by_tag {
        let _ = writeln!(out, "{t}\t{n}\t{b}");
    }
    out
}

fn human_time(ns: u64) -> String {
    match ns {
        0..1_000 => format!("{ns}ns"),
        1_000..1_000_000 => format!("{:.3}us", ns as f64 / 1e3),
        1_000_000..1_000_000_000 => format!("{:.3}ms", ns as f64 / 1e6),
        _ => format!("{:.3}s", ns as f64 / 1e9),
    }
}
