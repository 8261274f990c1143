//! `ccnvm`: run scenarios, check them, sweep parameters and print traces.

mod report;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ccnvm::config::{ClusterConfig, Mode};
use ccnvm::error::{Error, Result};
use ccnvm::harness::lincheck::{self, Verdict};
use ccnvm::harness::par::Exec;
use ccnvm::harness::scenario::{run_scenario, Check, RunSummary, Scenario};
use ccnvm::harness::sweeps;
use ccnvm::simnet::TraceRecord;
use ccnvm::world::World;

#[derive(Parser)]
#[command(
    name = "ccnvm",
    version,
    about = "Replicated NVM file system simulator"
)]
struct Cli {
    /// Cluster configuration; replaces the cluster section of a scenario
    /// and sets the mode of sweeps.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Where to write the JSON summary.
    #[arg(long, global = true, default_value = "summary.json")]
    summary: PathBuf,
    /// Also write the metrics tables to this file.
    #[arg(long, global = true)]
    metrics: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario and report metrics.
    Run(RunArgs),
    /// Run a scenario with every checker; exits nonzero on a failure.
    Check(RunArgs),
    #[command(subcommand)]
    Sweep(Sweep),
    /// Pretty-print a message trace written by `run --trace`.
    Trace {
        file: PathBuf,
        /// Only messages with this tag.
        #[arg(long)]
        tag: Option<String>,
    },
}

#[derive(Args)]
struct RunArgs {
    scenario: PathBuf,
    /// Write the message trace (tab-separated) here.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExecArg {
    Sequential,
    Parallel,
}

impl From<ExecArg> for Exec {
    fn from(e: ExecArg) -> Exec {
        match e {
            ExecArg::Sequential => Exec::Sequential,
            ExecArg::Parallel => Exec::Parallel,
        }
    }
}

#[derive(Args)]
struct SweepCommon {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_enum, default_value = "parallel")]
    exec: ExecArg,
}

#[derive(Subcommand)]
enum Sweep {
    /// Throughput and digest count against update log size.
    LogSize {
        #[command(flatten)]
        common: SweepCommon,
        /// Log sizes in MB.
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16")]
        sizes_mb: Vec<u64>,
        /// 4 KB writes to issue.
        #[arg(long, default_value_t = 16384)]
        ops: usize,
    },
    /// Fail-over work and cold rebuild against dataset size.
    Recovery {
        #[command(flatten)]
        common: SweepCommon,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6,7,8,9,10")]
        scales: Vec<u64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("ccnvm: {e}");
            ExitCode::from(2)
        }
    }
}

fn load_config(cli: &Cli) -> Result<Option<ClusterConfig>> {
    cli.config.as_deref().map(ClusterConfig::load).transpose()
}

/// Write to stdout; a closed pipe (`| head`) is not an error.
fn out(s: &str) -> Result<()> {
    match std::io::stdout().lock().write_all(s.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

/// Print the tables and, when asked, save them.
fn emit(cli: &Cli, tables: &str) -> Result<()> {
    out(tables)?;
    if let Some(p) = &cli.metrics {
        fs::write(p, tables)?;
    }
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, v: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(v).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(path, s + "\n")?;
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<bool> {
    match &cli.cmd {
        Cmd::Run(a) => run(cli, a, false),
        Cmd::Check(a) => run(cli, a, true),
        Cmd::Sweep(s) => sweep(cli, s),
        Cmd::Trace { file, tag } => trace(file, tag.as_deref()),
    }
}

fn run(cli: &Cli, a: &RunArgs, strict: bool) -> Result<bool> {
    let mut sc = Scenario::load(&a.scenario)?;
    if let Some(cfg) = load_config(cli)? {
        sc.cluster = cfg;
    }
    if let Some(s) = a.seed {
        sc.seed = s;
    }
    let (w, mut s): (_, RunSummary) = run_scenario(&sc)?;
    if strict {
        s.checks.push(linearizability(&w));
    }
    if let Some(p) = &a.trace {
        let body: String = w.fab.net.trace().iter().map(|r| r.line() + "\n").collect();
        fs::write(p, body)?;
    }
    let mut out = report::metrics(&s);
    out.push('\n');
    out.push_str(&report::checks(&s.checks));
    emit(cli, &out)?;
    write_json(&cli.summary, &s)?;
    // `run` reports checker results; only `check` turns them into the
    // exit status.
    Ok(!strict || s.passed())
}

fn linearizability(w: &World) -> Check {
    let (pass, detail) = match lincheck::check(
        &w.mounts(),
        &lincheck::calls(&w.history),
        lincheck::DEFAULT_BOUND,
    ) {
        Verdict::Linearizable => (true, String::new()),
        Verdict::BoundExceeded { explored } => (true, format!("undecided after {explored} states")),
        Verdict::Violation { witness } => (
            false,
            witness
                .iter()
                .map(|c| format!("p{} {:?} -> {:?}", c.pid, c.op, c.ret))
                .collect::<Vec<_>>()
                .join("; "),
        ),
    };
    Check {
        name: "linearizability".into(),
        pass,
        detail,
    }
}

fn sweep_mode(cli: &Cli) -> Result<Mode> {
    Ok(load_config(cli)?
        .map(|c| c.mode)
        .unwrap_or(Mode::Optimistic))
}

fn sweep(cli: &Cli, s: &Sweep) -> Result<bool> {
    let mode = sweep_mode(cli)?;
    match s {
        Sweep::LogSize {
            common,
            sizes_mb,
            ops,
        } => {
            let p = sweeps::LogSizeParams {
                mode,
                ops: *ops,
                ..sweeps::LogSizeParams::default()
            };
            let sizes: Vec<u64> = sizes_mb.iter().map(|m| m << 20).collect();
            let pts = sweeps::log_size_sweep(common.exec.into(), &p, &sizes, common.seed)
                .map_err(Error::Config)?;
            emit(cli, &report::log_size(&pts))?;
            write_json(&cli.summary, &pts)?;
            let monotone = pts.windows(2).all(|w| w[1].mb_per_s >= w[0].mb_per_s);
            let counts = pts
                .iter()
                .all(|p| p.digests.abs_diff(p.expected_digests) <= 1);
            Ok(monotone && counts)
        }
        Sweep::Recovery { common, scales } => {
            let p = sweeps::RecoveryParams {
                mode,
                ..sweeps::RecoveryParams::default()
            };
            let pts = sweeps::recovery_sweep(common.exec.into(), &p, scales, common.seed)
                .map_err(Error::Config)?;
            emit(cli, &report::recovery(&pts))?;
            write_json(&cli.summary, &pts)?;
            let bytes: Vec<u64> = pts.iter().map(|p| p.failover_bytes).collect();
            Ok(sweeps::spread(&bytes) <= 0.05)
        }
    }
}

fn trace(file: &Path, tag: Option<&str>) -> Result<bool> {
    let text = fs::read_to_string(file)?;
    let recs = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(TraceRecord::parse_line)
        .collect::<Result<Vec<_>>>()?;
    let shown: Vec<&TraceRecord> = recs
        .iter()
        .filter(|r| tag.is_none_or(|t| r.tag.name().eq_ignore_ascii_case(t)))
        .collect();
    out(&report::trace(&shown))?;
    Ok(true)
}
