use std::fs;
use std::io::Write;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitCode};
use std::sync::atomic::Ordering;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::Serialize;

use isv_core::hive::{serve, Hive, HiveConfig, HiveReport, ServeOptions};
use isv_core::iss::{run_full_bfs, run_swarm_dfs, Restriction};
use isv_core::lts::{load_lts, Label};
use isv_core::network::{load_manifest, Network, Product};
use isv_core::protocol::Termination;
use isv_core::trace_count::{count_traces, load_weighted, save_weighted, WeightedLts};
use isv_core::worker::{worker_loop, LogEntry, WorkerConfig, WorkerOutcome};

const EXIT_BUG: u8 = 2;
const EXIT_CRASHED: u8 = 3;

#[derive(Parser)]
#[command(name = "isv", version, about = "Informed swarm verification of LTS networks")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Count the maximal traces of a subsystem LTS and write the weighted files.
    Count(CountArgs),
    /// Serve trace IDs to workers until every trace is accounted for.
    Hive(HiveArgs),
    /// Fetch traces from a hive and explore the network restricted to them.
    Worker(WorkerArgs),
    /// Preprocess, start a hive and N worker processes, and summarise.
    Run(RunArgs),
    /// Full breadth-first exploration of the network.
    Explore(ExploreArgs),
    /// One randomised depth-first search of the network.
    SwarmDfs(SwarmDfsArgs),
}

#[derive(Args)]
struct CountArgs {
    /// Base path of the weighted files (`.swh`, `.swc`, `.sww`).
    #[arg(long)]
    getswarm: PathBuf,
    /// Cut traces after this many steps; required for cyclic subsystems.
    #[arg(long)]
    swbound: Option<u32>,
    /// Subsystem LTS in AUT format.
    lts: PathBuf,
}

#[derive(Args)]
struct HiveArgs {
    port: u16,
    /// Base path written by `count`.
    base: PathBuf,
    #[arg(long)]
    net: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Hold back this many feedback messages before processing them.
    #[arg(long, default_value_t = 1)]
    feedback_batch: usize,
    #[arg(long)]
    lease_timeout_ms: Option<u64>,
    #[arg(long, default_value_t = 20)]
    retry_ms: u64,
    /// Keep serving this long after the last worker left.
    #[arg(long, default_value_t = 1000)]
    linger_ms: u64,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1")]
    bind: String,
}

#[derive(Args)]
struct WorkerArgs {
    /// Base path of the weighted files; only `<base>.swh` is read.
    #[arg(long)]
    swarm: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    hiveserver: String,
    #[arg(long)]
    hiveport: u16,
    #[arg(long)]
    net: PathBuf,
    /// Give up on a trace after expanding this many states.
    #[arg(long)]
    cap: Option<usize>,
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    dump_states: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    worker_id: u64,
    /// Vanish without reporting after this many runs.
    #[arg(long)]
    crash_after: Option<usize>,
    #[arg(long)]
    detect_deadlock: bool,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, default_value_t = 2)]
    workers: usize,
    #[arg(long)]
    net: PathBuf,
    /// Subsystem LTS in AUT format.
    #[arg(long)]
    sub: PathBuf,
    /// Base path of the weighted files; defaults to the working directory.
    #[arg(long)]
    getswarm: Option<PathBuf>,
    #[arg(long)]
    swbound: Option<u32>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    feedback_batch: usize,
    #[arg(long)]
    cap: Option<usize>,
    #[arg(long)]
    lease_timeout_ms: Option<u64>,
    /// Directory for worker logs and state dumps.
    #[arg(long)]
    dump_dir: Option<PathBuf>,
    /// Also dump every explored state (needs `--dump-dir`).
    #[arg(long)]
    dump_states: bool,
    /// Make worker 0 vanish after this many runs.
    #[arg(long)]
    crash_worker_after: Option<usize>,
    #[arg(long)]
    detect_deadlock: bool,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct ExploreArgs {
    #[arg(long)]
    net: PathBuf,
    #[arg(long)]
    cap: Option<usize>,
    /// Write every reachable state, one per line, sorted.
    #[arg(long)]
    dump_states: Option<PathBuf>,
    /// Space-separated actions to replay from the initial state.
    #[arg(long)]
    replay: Option<String>,
}

#[derive(Args)]
struct SwarmDfsArgs {
    #[arg(long)]
    net: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    cap: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let res = match cli.command {
        Cmd::Count(a) => cmd_count(a),
        Cmd::Hive(a) => cmd_hive(a),
        Cmd::Worker(a) => cmd_worker(a),
        Cmd::Run(a) => cmd_run(a),
        Cmd::Explore(a) => cmd_explore(a),
        Cmd::SwarmDfs(a) => cmd_swarm_dfs(a),
    };
    match res {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn print_json(v: &impl Serialize) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v)?;
    writeln!(out)?;
    Ok(())
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(v)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn load_product(net: &Path) -> Result<Product> {
    let net = load_manifest(net)?;
    Ok(Product::new(net)?)
}

fn preprocess(lts: &Path, bound: Option<u32>, base: &Path) -> Result<WeightedLts> {
    let sub = load_lts(lts)?;
    let w = count_traces(&sub, bound)?;
    save_weighted(&w, base)?;
    Ok(w)
}

fn cmd_count(a: CountArgs) -> Result<u8> {
    let w = preprocess(&a.lts, a.swbound, &a.getswarm)?;
    println!("{}", w.total());
    Ok(0)
}

fn check_alphabet(product: &Product, w: &WeightedLts) -> Result<()> {
    Restriction::from_alphabet(product, w.alphabet()).context("subsystem alphabet does not fit the network")?;
    Ok(())
}

fn exit_for(report: &HiveReport) -> u8 {
    match report.termination {
        Some(Termination::Bug) => EXIT_BUG,
        Some(Termination::Complete) => 0,
        None => 1,
    }
}

fn hive_config(seed: u64, batch: usize, lease_ms: Option<u64>, retry_ms: u64) -> Result<HiveConfig> {
    if batch == 0 {
        bail!("--feedback-batch must be at least 1");
    }
    Ok(HiveConfig {
        seed,
        feedback_batch: batch,
        lease_timeout: lease_ms.map(Duration::from_millis),
        retry_ms,
    })
}

fn cmd_hive(a: HiveArgs) -> Result<u8> {
    let w = load_weighted(&a.base)?;
    let product = load_product(&a.net)?;
    check_alphabet(&product, &w)?;
    let net = product.network().clone();
    let listener =
        TcpListener::bind((a.bind.as_str(), a.port)).with_context(|| format!("binding {}:{}", a.bind, a.port))?;
    info!("hive listening on {}, {} traces", listener.local_addr()?, w.total());
    let hive = Arc::new(Hive::new(
        w,
        net,
        hive_config(a.seed, a.feedback_batch, a.lease_timeout_ms, a.retry_ms)?,
    ));
    let opts = ServeOptions {
        linger: Duration::from_millis(a.linger_ms),
        ..ServeOptions::default()
    };
    let report = serve(listener, hive, opts)?;
    match &a.report {
        Some(p) => write_json(p, &report)?,
        None => print_json(&report)?,
    }
    Ok(exit_for(&report))
}

fn cmd_worker(a: WorkerArgs) -> Result<u8> {
    let mut cfg = WorkerConfig::new(a.hiveserver, a.hiveport, a.net, a.swarm);
    if a.cap == Some(0) {
        bail!("--cap must be positive");
    }
    cfg.state_cap = a.cap;
    cfg.worker_id = a.worker_id;
    cfg.log = a.log;
    cfg.dump = a.dump_states;
    cfg.crash_after = a.crash_after;
    cfg.detect_deadlock = a.detect_deadlock;
    let (outcome, stats) = worker_loop(cfg)?;
    info!("worker {}: {outcome:?}, {stats:?}", a.worker_id);
    Ok(match outcome {
        WorkerOutcome::Terminated(Termination::Complete) => 0,
        WorkerOutcome::Terminated(Termination::Bug) => EXIT_BUG,
        WorkerOutcome::Crashed => EXIT_CRASHED,
    })
}

#[derive(Serialize)]
struct WorkerSummary {
    id: usize,
    exit_code: Option<i32>,
    runs: u64,
    outcome: Option<String>,
}

#[derive(Serialize)]
struct RunSummary {
    seed: u64,
    workers: usize,
    /// tc of the subsystem's initial state.
    est_runs: String,
    runs: u64,
    max_states: u64,
    total_states: u64,
    max_time_ms: f64,
    total_time_ms: f64,
    wall_ms: f64,
    termination: Option<Termination>,
    complete: bool,
    witness: Option<Vec<String>>,
    witness_confirmed: Option<bool>,
    pruned_ranges: usize,
    cap_exceeded: u64,
    worker_exits: Vec<WorkerSummary>,
    hive: HiveReport,
}

fn spawn_worker(a: &RunArgs, base: &Path, port: u16, dir: &Path, id: usize) -> Result<Child> {
    let exe = std::env::current_exe()?;
    let mut cmd = Command::new(exe);
    cmd.arg("worker")
        .arg("--swarm")
        .arg(base)
        .args(["--hiveserver", "127.0.0.1"])
        .arg("--hiveport")
        .arg(port.to_string())
        .arg("--net")
        .arg(&a.net)
        .arg("--worker-id")
        .arg(id.to_string())
        .arg("--log")
        .arg(dir.join(format!("worker{id}.jsonl")));
    if a.dump_states {
        cmd.arg("--dump-states").arg(dir.join(format!("worker{id}.states")));
    }
    if let Some(c) = a.cap {
        cmd.arg("--cap").arg(c.to_string());
    }
    if a.detect_deadlock {
        cmd.arg("--detect-deadlock");
    }
    if id == 0 {
        if let Some(n) = a.crash_worker_after {
            cmd.arg("--crash-after").arg(n.to_string());
        }
    }
    Ok(cmd.spawn()?)
}

fn read_log(path: &Path) -> Result<Vec<LogEntry>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).with_context(|| format!("bad log line in {}", path.display())))
        .collect()
}

fn confirm_witness(net: &Network, product: &Product, witness: &[String]) -> bool {
    let Ok(labels) = witness.iter().map(|s| Label::new(s)).collect::<Result<Vec<_>, _>>() else {
        return false;
    };
    product.replay(&labels).is_some() && labels.last().is_some_and(|l| net.error_labels.contains(l))
}

fn cmd_run(a: RunArgs) -> Result<u8> {
    if a.workers == 0 {
        bail!("--workers must be at least 1");
    }
    if a.dump_states && a.dump_dir.is_none() {
        bail!("--dump-states needs --dump-dir");
    }
    let started = Instant::now();
    let scratch = tempfile::tempdir()?;
    let dir = match &a.dump_dir {
        Some(d) => {
            fs::create_dir_all(d)?;
            d.clone()
        }
        None => scratch.path().to_path_buf(),
    };
    let base = match &a.getswarm {
        Some(b) => b.clone(),
        None => dir.join("sub"),
    };
    let w = preprocess(&a.sub, a.swbound, &base)?;
    let product = load_product(&a.net)?;
    check_alphabet(&product, &w)?;
    let net = product.network().clone();
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let port = listener.local_addr()?.port();
    let hive = Arc::new(Hive::new(
        w,
        net.clone(),
        hive_config(a.seed, a.feedback_batch, a.lease_timeout_ms, 20)?,
    ));
    let opts = ServeOptions {
        linger: Duration::from_secs(3600),
        drain_timeout: Duration::from_secs(3600),
        ..ServeOptions::default()
    };
    let stop = Arc::clone(&opts.stop);
    let server = {
        let hive = Arc::clone(&hive);
        thread::spawn(move || serve(listener, hive, opts))
    };
    let mut children = Vec::new();
    for id in 0..a.workers {
        children.push(spawn_worker(&a, &base, port, &dir, id)?);
    }
    let mut codes = Vec::new();
    for (id, mut c) in children.into_iter().enumerate() {
        let status = c.wait()?;
        if !status.success() && status.code() != Some(EXIT_BUG as i32) {
            warn!("worker {id} exited with {status}");
        }
        codes.push(status.code());
    }
    stop.store(true, Ordering::SeqCst);
    let report = server.join().expect("hive thread")?;

    let mut runs = 0u64;
    let mut total_states = 0u64;
    let mut max_states = 0u64;
    let mut total_time = 0.0f64;
    let mut max_time = 0.0f64;
    let mut cap_exceeded = 0u64;
    let mut worker_exits = Vec::new();
    for (id, code) in codes.into_iter().enumerate() {
        let mut summary = WorkerSummary {
            id,
            exit_code: code,
            runs: 0,
            outcome: None,
        };
        for entry in read_log(&dir.join(format!("worker{id}.jsonl")))? {
            match entry {
                LogEntry::Run { record, .. } => {
                    runs += 1;
                    summary.runs += 1;
                    total_states += record.states as u64;
                    max_states = max_states.max(record.states as u64);
                    total_time += record.duration_ms;
                    max_time = max_time.max(record.duration_ms);
                }
                LogEntry::CapExceeded { .. } => cap_exceeded += 1,
                LogEntry::Exit { outcome, .. } => summary.outcome = Some(outcome),
            }
        }
        worker_exits.push(summary);
    }
    let witness = report.bugs.iter().find(|b| !b.late).map(|b| b.witness.clone());
    let witness_confirmed = witness.as_ref().map(|w| confirm_witness(&net, &product, w));
    let summary = RunSummary {
        seed: a.seed,
        workers: a.workers,
        est_runs: report.est_runs.clone(),
        runs,
        max_states,
        total_states,
        max_time_ms: max_time,
        total_time_ms: total_time,
        wall_ms: started.elapsed().as_secs_f64() * 1000.0,
        termination: report.termination,
        complete: report.complete,
        witness,
        witness_confirmed,
        pruned_ranges: report.pruned_ranges.len(),
        cap_exceeded,
        worker_exits,
        hive: report,
    };
    if let Some(p) = &a.report {
        write_json(p, &summary)?;
    }
    print_json(&summary)?;
    Ok(exit_for(&summary.hive))
}

#[derive(Serialize)]
struct ExploreSummary {
    states: usize,
    transitions: u64,
    deadlocks: usize,
    error_witness: Option<Vec<String>>,
    duration_ms: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    replay: Option<ReplaySummary>,
}

#[derive(Serialize)]
struct ReplaySummary {
    executable: bool,
    ends_in_error: bool,
}

fn cmd_explore(a: ExploreArgs) -> Result<u8> {
    let product = load_product(&a.net)?;
    let ex = run_full_bfs(&product, a.cap)?;
    if let Some(p) = &a.dump_states {
        let mut lines: Vec<String> = ex.states.iter().map(|s| s.to_string()).collect();
        lines.sort();
        let mut text = lines.join("\n");
        text.push('\n');
        fs::write(p, text).with_context(|| format!("writing {}", p.display()))?;
    }
    let replay = match &a.replay {
        None => None,
        Some(text) => {
            let labels = text
                .split_whitespace()
                .map(Label::new)
                .collect::<Result<Vec<_>, _>>()
                .context("bad label in --replay")?;
            Some(ReplaySummary {
                executable: product.replay(&labels).is_some(),
                ends_in_error: labels
                    .last()
                    .is_some_and(|l| product.network().error_labels.contains(l)),
            })
        }
    };
    let summary = ExploreSummary {
        states: ex.states.len(),
        transitions: ex.transitions,
        deadlocks: ex.deadlocks,
        error_witness: ex
            .error_witness
            .as_ref()
            .map(|w| w.iter().map(|l| l.to_string()).collect()),
        duration_ms: ex.duration.as_secs_f64() * 1000.0,
        replay,
    };
    print_json(&summary)?;
    Ok(if ex.error_witness.is_some() { EXIT_BUG } else { 0 })
}

#[derive(Serialize)]
struct DfsSummary {
    seed: u64,
    states: usize,
    transitions: u64,
    bug: Option<Vec<String>>,
    duration_ms: f64,
}

fn cmd_swarm_dfs(a: SwarmDfsArgs) -> Result<u8> {
    let product = load_product(&a.net)?;
    let d = run_swarm_dfs(&product, a.seed, a.cap)?;
    print_json(&DfsSummary {
        seed: a.seed,
        states: d.states,
        transitions: d.transitions_fired,
        bug: d.bug.as_ref().map(|w| w.iter().map(|l| l.to_string()).collect()),
        duration_ms: d.duration.as_secs_f64() * 1000.0,
    })?;
    Ok(if d.bug.is_some() { EXIT_BUG } else { 0 })
}
