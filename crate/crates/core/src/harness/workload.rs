//! Workload generators. Each produces one op script per process plus the
//! node and chain it runs on; all randomness comes from the seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ClusterConfig, Mode};
use crate::ids::NodeId;
use crate::posix::FsOp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkloadKind {
    /// Mixed operations on a small namespace shared by all processes.
    #[default]
    Random,
    /// Each process stays in a mount whose lease manager is on its node.
    Private,
    /// Like `Private`, with every `remote_every`-th op in the next mount.
    Sharded,
    /// Op `k` goes to mount `k mod mounts`.
    RoundRobin,
    /// Mail delivery: tmp -> new -> cur, index rewrites, deletions.
    Maildir,
    /// Sequential writes wrapping over one file per process.
    SeqWrite,
    /// Small overwrites and reads over a key space.
    Kv,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkloadSpec {
    pub kind: WorkloadKind,
    pub procs: usize,
    /// Operations per process (messages for `Maildir`).
    pub ops: usize,
    pub io_bytes: u64,
    pub file_bytes: u64,
    pub files: usize,
    /// Sync after this many ops; zero never syncs.
    pub sync_every: usize,
    pub remote_every: usize,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            kind: WorkloadKind::Random,
            procs: 2,
            ops: 20,
            io_bytes: 4096,
            file_bytes: 1 << 20,
            files: 4,
            sync_every: 8,
            remote_every: 4,
        }
    }
}

/// One process to start.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcPlan {
    pub node: NodeId,
    pub chain: usize,
    pub ops: Vec<FsOp>,
}

/// Printable payload bytes; never 0xEE, which the checker self-test uses
/// as an impossible value.
pub fn payload(rng: &mut ChaCha8Rng, len: usize) -> Vec<u8> {
    (0..len).map(|_| rng.random_range(b'a'..=b'z')).collect()
}

pub fn sync_op(cfg: &ClusterConfig, path: &str) -> FsOp {
    match cfg.mode {
        Mode::Pessimistic => FsOp::Fsync { path: path.into() },
        Mode::Optimistic => FsOp::Dsync,
    }
}

/// Node of process `i` serving chain `c`: the chain's cache replicas in
/// turn.
pub fn placement(cfg: &ClusterConfig, i: usize) -> (NodeId, usize) {
    let c = i % cfg.chains.len();
    let reps = &cfg.chains[c].replicas;
    (reps[(i / cfg.chains.len()) % reps.len()], c)
}

/// Mount of chain `c` whose manager is initially `node`, if any.
fn home_mount(cfg: &ClusterConfig, c: usize, node: NodeId) -> usize {
    let ch = &cfg.chains[c];
    (0..ch.mounts.len())
        .find(|j| ch.replicas[j % ch.replicas.len()] == node)
        .unwrap_or(0)
}

pub fn generate(spec: &WorkloadSpec, cfg: &ClusterConfig, seed: u64) -> Vec<ProcPlan> {
    (0..spec.procs)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((i as u64 + 1) << 32));
            let (node, chain) = placement(cfg, i);
            let ops = match spec.kind {
                WorkloadKind::Random => random_ops(spec, cfg, chain, &mut rng),
                WorkloadKind::Private | WorkloadKind::Sharded | WorkloadKind::RoundRobin => {
                    locality_ops(spec, cfg, i, node, chain, &mut rng)
                }
                WorkloadKind::Maildir => maildir_ops(spec, cfg, i, chain, &mut rng),
                WorkloadKind::SeqWrite => seq_ops(spec, cfg, i, chain, &mut rng),
                WorkloadKind::Kv => kv_ops(spec, cfg, chain, &mut rng),
            };
            ProcPlan { node, chain, ops }
        })
        .collect()
}

/// Random ops over `{m}/{,a/,b/}{x,y,z}` where `m` is the chain's first
/// mount.
pub fn random_ops(
    spec: &WorkloadSpec,
    cfg: &ClusterConfig,
    chain: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<FsOp> {
    let m = &cfg.chains[chain].mounts[0];
    let dirs = [m.clone(), format!("{m}/a"), format!("{m}/b")];
    let names = ["x", "y", "z"];
    let pick_dir = |rng: &mut ChaCha8Rng| dirs[rng.random_range(0..dirs.len())].clone();
    let pick_file = |rng: &mut ChaCha8Rng| {
        let d = &dirs[rng.random_range(0..dirs.len())];
        format!("{d}/{}", names[rng.random_range(0..names.len())])
    };
    let mut out = Vec::with_capacity(spec.ops);
    for k in 0..spec.ops {
        if spec.sync_every > 0 && k > 0 && k % spec.sync_every == 0 {
            let p = pick_file(rng);
            out.push(sync_op(cfg, &p));
            continue;
        }
        let op = match rng.random_range(0..100) {
            0..=17 => FsOp::Create {
                path: pick_file(rng),
            },
            18..=25 => FsOp::Mkdir {
                path: dirs[rng.random_range(1..dirs.len())].clone(),
            },
            26..=49 => {
                let len = rng.random_range(1..=spec.io_bytes.clamp(1, 6000)) as usize;
                FsOp::Write {
                    path: pick_file(rng),
                    offset: rng.random_range(0..6000),
                    data: payload(rng, len),
                }
            }
            50..=64 => FsOp::Read {
                path: pick_file(rng),
                offset: rng.random_range(0..4000),
                len: rng.random_range(1..6000),
            },
            65..=69 => FsOp::Truncate {
                path: pick_file(rng),
                size: rng.random_range(0..8000),
            },
            70..=76 => FsOp::Unlink {
                path: pick_file(rng),
            },
            77..=80 => FsOp::Rmdir {
                path: dirs[rng.random_range(1..dirs.len())].clone(),
            },
            81..=86 => FsOp::Rename {
                from: pick_file(rng),
                to: pick_file(rng),
            },
            87..=91 => FsOp::Readdir {
                path: pick_dir(rng),
            },
            92..=96 => FsOp::Stat {
                path: pick_file(rng),
            },
            _ => FsOp::Chmod {
                path: pick_file(rng),
                mode: [0o644, 0o600, 0o755][rng.random_range(0..3)],
            },
        };
        out.push(op);
    }
    out
}

fn locality_ops(
    spec: &WorkloadSpec,
    cfg: &ClusterConfig,
    i: usize,
    node: NodeId,
    chain: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<FsOp> {
    let mounts = &cfg.chains[chain].mounts;
    let home = home_mount(cfg, chain, node);
    let dir = |j: usize| format!("{}/p{i}", mounts[j]);
    let mut out = Vec::new();
    let used: Vec<usize> = match spec.kind {
        WorkloadKind::Private => vec![home],
        WorkloadKind::Sharded => vec![home, (home + 1) % mounts.len()],
        _ => (0..mounts.len()).collect(),
    };
    for j in &used {
        out.push(FsOp::Mkdir { path: dir(*j) });
        for f in 0..spec.files.max(1) {
            out.push(FsOp::Create {
                path: format!("{}/f{f}", dir(*j)),
            });
        }
    }
    for k in 0..spec.ops {
        let j = match spec.kind {
            WorkloadKind::Private => home,
            WorkloadKind::Sharded => {
                if spec.remote_every > 0 && k % spec.remote_every == spec.remote_every - 1 {
                    (home + 1) % mounts.len()
                } else {
                    home
                }
            }
            _ => k % mounts.len(),
        };
        let f = format!("{}/f{}", dir(j), k % spec.files.max(1));
        match k % 3 {
            0 | 1 => out.push(FsOp::Write {
                path: f.clone(),
                offset: rng.random_range(0..4) * spec.io_bytes,
                data: payload(rng, spec.io_bytes as usize),
            }),
            _ => out.push(FsOp::Read {
                path: f.clone(),
                offset: 0,
                len: spec.io_bytes,
            }),
        }
        if spec.sync_every > 0 && (k + 1) % spec.sync_every == 0 {
            out.push(sync_op(cfg, &f));
        }
    }
    out
}

fn maildir_ops(
    spec: &WorkloadSpec,
    cfg: &ClusterConfig,
    i: usize,
    chain: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<FsOp> {
    let m = &cfg.chains[chain].mounts[0];
    let u = format!("{m}/u{i}");
    let mut out = vec![
        FsOp::Mkdir { path: u.clone() },
        FsOp::Mkdir {
            path: format!("{u}/tmp"),
        },
        FsOp::Mkdir {
            path: format!("{u}/new"),
        },
        FsOp::Mkdir {
            path: format!("{u}/cur"),
        },
        FsOp::Create {
            path: format!("{u}/index"),
        },
    ];
    for k in 0..spec.ops {
        let tmp = format!("{u}/tmp/m{k}");
        let new = format!("{u}/new/m{k}");
        let cur = format!("{u}/cur/m{k}");
        out.push(FsOp::Create { path: tmp.clone() });
        let len = rng
            .random_range(spec.io_bytes / 2..=spec.io_bytes * 3 / 2)
            .max(1) as usize;
        out.push(FsOp::Write {
            path: tmp.clone(),
            offset: 0,
            data: payload(rng, len),
        });
        out.push(FsOp::Rename {
            from: tmp,
            to: new.clone(),
        });
        out.push(FsOp::Write {
            path: format!("{u}/index"),
            offset: 0,
            data: payload(rng, 512),
        });
        // The client picks the message up; most are read and filed, the
        // rest deleted right away.
        out.push(FsOp::Read {
            path: new.clone(),
            offset: 0,
            len: len as u64,
        });
        if rng.random_range(0..3) == 0 {
            out.push(FsOp::Unlink { path: new });
        } else {
            out.push(FsOp::Rename {
                from: new,
                to: cur.clone(),
            });
            if k >= 2 && rng.random_range(0..2) == 0 {
                out.push(FsOp::Unlink {
                    path: format!("{u}/cur/m{}", k - 2),
                });
            }
        }
        if spec.sync_every > 0 && (k + 1) % spec.sync_every == 0 {
            out.push(sync_op(cfg, &format!("{u}/index")));
        }
    }
    out.push(sync_op(cfg, &format!("{u}/index")));
    out
}

fn seq_ops(
    spec: &WorkloadSpec,
    cfg: &ClusterConfig,
    i: usize,
    chain: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<FsOp> {
    let m = &cfg.chains[chain].mounts[0];
    let d = format!("{m}/s{i}");
    let f = format!("{d}/data");
    let mut out = vec![FsOp::Mkdir { path: d }, FsOp::Create { path: f.clone() }];
    let io = spec.io_bytes.max(1);
    let span = (spec.file_bytes / io).max(1);
    for k in 0..spec.ops as u64 {
        out.push(FsOp::Write {
            path: f.clone(),
            offset: (k % span) * io,
            data: payload(rng, io as usize),
        });
        if spec.sync_every > 0 && (k as usize + 1) % spec.sync_every == 0 {
            out.push(sync_op(cfg, &f));
        }
    }
    out
}

fn kv_ops(
    spec: &WorkloadSpec,
    cfg: &ClusterConfig,
    chain: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<FsOp> {
    let m = &cfg.chains[chain].mounts[0];
    let key = |rng: &mut ChaCha8Rng| format!("{m}/k{}", rng.random_range(0..spec.files.max(1)));
    let mut out = Vec::new();
    for k in 0..spec.ops {
        let p = key(rng);
        match rng.random_range(0..10) {
            0 => out.push(FsOp::Create { path: p }),
            1..=4 => out.push(FsOp::Write {
                path: p,
                offset: 0,
                data: payload(rng, spec.io_bytes.min(4096) as usize),
            }),
            _ => out.push(FsOp::Read {
                path: p,
                offset: 0,
                len: spec.io_bytes.min(4096),
            }),
        }
        if spec.sync_every > 0 && (k + 1) % spec.sync_every == 0 {
            let p = key(rng);
            out.push(sync_op(cfg, &p));
        }
    }
    out
}

/// Read back the whole namespace of [`random_ops`]: listings, stats and
/// full reads.
pub fn scan_ops(mount: &str) -> Vec<FsOp> {
    let dirs = [
        mount.to_string(),
        format!("{mount}/a"),
        format!("{mount}/b"),
    ];
    let mut out = Vec::new();
    for d in &dirs {
        out.push(FsOp::Readdir { path: d.clone() });
        for n in ["x", "y", "z"] {
            let path = format!("{d}/{n}");
            out.push(FsOp::Stat { path: path.clone() });
            out.push(FsOp::Read {
                path,
                offset: 0,
                len: 1 << 20,
            });
        }
    }
    out
}
