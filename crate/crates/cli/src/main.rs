use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use manet_core::config::SimParams;
use manet_core::harness::plot::aggregate_and_plot;
use manet_core::harness::trends::{check_trends, parse_metrics_csv};
use manet_core::harness::{
    self, manifest_path, run_to_file, Protocol, RunResult, Scenario, ScenarioMeta, SweepOptions, DURATION_S,
};
use manet_core::metrics::{accumulate_reader, csv_row, MetricsAccumulator, RowKey, CSV_HEADER};
use manet_core::mobility::Area;
use manet_core::traffic::connections_for;

const EXIT_ARGS: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_CHECK: u8 = 3;

#[derive(Parser)]
#[command(name = "manet", version, about = "Deterministic MANET routing simulator and benchmark harness")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Scenario files.
    Scen {
        #[command(subcommand)]
        cmd: ScenCmd,
    },
    /// Simulate one protocol over a scenario directory.
    Run(RunArgs),
    /// Compute the metrics row of a trace file.
    Metrics(MetricsArgs),
    /// Run the full scenario matrix.
    Sweep(SweepArgs),
    /// Aggregate a metrics CSV into pivots and SVG charts.
    Plot(PlotArgs),
}

#[derive(Subcommand)]
enum ScenCmd {
    /// Generate movement and traffic files for one cell.
    Gen(GenArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    nodes: usize,
    #[arg(long)]
    pause: f64,
    #[arg(long)]
    speed_max: f64,
    #[arg(long, default_value_t = 1.0)]
    speed_min: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = DURATION_S)]
    duration: f64,
    /// Number of CBR connections; defaults to the matrix rule for `--nodes`.
    #[arg(long)]
    connections: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    protocol: Protocol,
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// `key = value` overrides file.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    trace: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated subset, e.g. `aodv,dsr`.
    #[arg(long, value_delimiter = ',')]
    protocols: Option<Vec<Protocol>>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Evaluate the trend and invariant checks; exit 3 on any failure.
    #[arg(long)]
    check: bool,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    results: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

/// Error tagged with the exit code it maps to.
struct Failure(u8, String);

impl Failure {
    fn args(msg: impl ToString) -> Self {
        Failure(EXIT_ARGS, msg.to_string())
    }
    fn runtime(msg: impl ToString) -> Self {
        Failure(EXIT_RUNTIME, msg.to_string())
    }
}

impl From<harness::HarnessError> for Failure {
    fn from(e: harness::HarnessError) -> Self {
        use harness::HarnessError::*;
        match e {
            Usage(_) | Config(_) => Failure::args(e),
            _ => Failure::runtime(e),
        }
    }
}

fn load_params(path: Option<&Path>) -> Result<SimParams, Failure> {
    let mut params = SimParams::default();
    if let Some(p) = path {
        let text = fs::read_to_string(p).map_err(|e| Failure::args(format!("{}: {e}", p.display())))?;
        params.apply_overrides(&text).map_err(|e| Failure::args(format!("{}: {e}", p.display())))?;
    }
    params.validate().map_err(Failure::args)?;
    Ok(params)
}

fn scen_gen(a: GenArgs) -> Result<(), Failure> {
    let finite = |v: f64| v.is_finite() && v >= 0.0;
    if a.nodes < 2 || !finite(a.pause) || !finite(a.speed_min) || !finite(a.speed_max) || !(a.duration > 0.0) {
        return Err(Failure::args("nodes must be >= 2; pause, speeds and duration must be non-negative"));
    }
    if a.speed_min > a.speed_max {
        return Err(Failure::args("--speed-min exceeds --speed-max"));
    }
    let meta = ScenarioMeta {
        nodes: a.nodes,
        pause_s: a.pause,
        speed_min: a.speed_min,
        speed_max: a.speed_max,
        seed: a.seed,
        duration_s: a.duration,
        area: Area::default(),
        connections: a.connections.unwrap_or_else(|| connections_for(a.nodes)),
    };
    let sc = Scenario::generate(meta).map_err(|e| Failure::args(e))?;
    sc.write_dir(&a.out)?;
    info!("wrote scenario to {}", a.out.display());
    Ok(())
}

fn run(a: RunArgs) -> Result<(), Failure> {
    let params = load_params(a.config.as_deref())?;
    let r = run_to_file(a.protocol, &params, &a.scenario, &a.out)?;
    println!("{CSV_HEADER}");
    println!("{}", r.csv_row());
    info!("trace sha256 {} ({} lines), manifest {}", r.trace_sha256, r.trace_lines, manifest_path(&a.out).display());
    Ok(())
}

/// Reads the run manifest next to a trace, if any, for the row key.
fn manifest_key(trace: &Path) -> RowKey {
    let Ok(text) = fs::read_to_string(manifest_path(trace)) else {
        return RowKey::default();
    };
    let get = |k: &str| {
        text.lines().find_map(|l| {
            let (key, v) = l.split_once('=')?;
            (key.trim() == k).then(|| v.trim().to_string())
        })
    };
    RowKey {
        protocol: get("protocol").unwrap_or_default(),
        nodes: get("nodes").and_then(|v| v.parse().ok()),
        pause: get("pause_s").and_then(|v| v.parse().ok()),
        speed: get("speed_max").and_then(|v| v.parse().ok()),
        seed: get("seed").and_then(|v| v.parse().ok()),
    }
}

fn metrics(a: MetricsArgs) -> Result<(), Failure> {
    let f = fs::File::open(&a.trace).map_err(|e| Failure::runtime(format!("{}: {e}", a.trace.display())))?;
    let mut acc = MetricsAccumulator::new();
    accumulate_reader(BufReader::new(f), &mut acc).map_err(|e| Failure::runtime(format!("{}: {e}", a.trace.display())))?;
    let report = acc.report();
    let text = format!("{CSV_HEADER}\n{}\n", csv_row(&manifest_key(&a.trace), &report));
    fs::write(&a.out, &text).map_err(|e| Failure::runtime(format!("{}: {e}", a.out.display())))?;
    print!("{text}");
    Ok(())
}

fn print_check(id: u32, name: &str, pass: bool, detail: &str) {
    println!("[{}] {:>2} {name}: {detail}", if pass { "PASS" } else { "FAIL" }, id);
}

/// Trend checks plus conservation and path checks; true when all pass.
fn check_results(results: &[RunResult], csv: &str) -> Result<bool, Failure> {
    let rows = parse_metrics_csv(csv)?;
    let mut ok = true;
    for c in check_trends(&rows) {
        print_check(c.id, c.name, c.pass, &format!("{:.3} (need >= {:.2})", c.value, c.threshold));
        ok &= c.pass;
    }
    let broken = results.iter().filter(|r| !r.conserves()).count();
    print_check(10, "conservation", broken == 0, &format!("{broken} of {} runs violate", results.len()));
    ok &= broken == 0;
    let revisits: u64 = results.iter().map(|r| r.stats.revisits).sum();
    let loops: usize = results.iter().map(|r| r.stats.loop_violations).sum();
    let pass = revisits == 0 && loops == 0;
    print_check(11, "loop freedom", pass, &format!("{revisits} revisits, {loops} witness violations"));
    Ok(ok && pass)
}

fn sweep(a: SweepArgs) -> Result<(), Failure> {
    let params = load_params(a.config.as_deref())?;
    if a.seeds == 0 {
        return Err(Failure::args("--seeds must be at least 1"));
    }
    let protocols = a.protocols.unwrap_or_else(|| Protocol::ALL.to_vec());
    if protocols.is_empty() {
        return Err(Failure::args("--protocols is empty"));
    }
    let opts = SweepOptions { seeds: a.seeds, protocols, jobs: a.jobs, params: params.clone(), ..Default::default() };
    let started = std::time::Instant::now();
    let results = harness::sweep(&opts)?;
    info!("{} runs in {:.1} s", results.len(), started.elapsed().as_secs_f64());
    harness::write_sweep(&a.out, &results, &params)?;
    println!("wrote {} runs to {}", results.len(), a.out.display());
    if a.check {
        if opts.protocols.len() != Protocol::ALL.len() {
            warn!("trend checks compare all four protocols; missing ones count as failures");
        }
        if !check_results(&results, &harness::metrics_csv(&results))? {
            return Err(Failure(EXIT_CHECK, "acceptance checks failed".into()));
        }
    }
    Ok(())
}

fn plot(a: PlotArgs) -> Result<(), Failure> {
    let text = fs::read_to_string(&a.results).map_err(|e| Failure::runtime(format!("{}: {e}", a.results.display())))?;
    let rows = parse_metrics_csv(&text)?;
    let s = aggregate_and_plot(&rows, &a.out)?;
    println!("wrote {} charts and {} pivots to {}", s.charts.len(), s.pivots.len(), a.out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ARGS } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let res = match cli.cmd {
        Cmd::Scen { cmd: ScenCmd::Gen(a) } => scen_gen(a),
        Cmd::Run(a) => run(a),
        Cmd::Metrics(a) => metrics(a),
        Cmd::Sweep(a) => sweep(a),
        Cmd::Plot(a) => plot(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
