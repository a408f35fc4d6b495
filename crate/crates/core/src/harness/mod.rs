//! Experiment orchestration: the scenario matrix, scenario directories,
//! single runs with manifests, whole sweeps, trend checks and charts.

pub mod plot;
pub mod trends;

use std::fmt::{self, Write as _};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::config::{ConfigError, SimParams};
use crate::engine::{RandomStream, SimTime, StreamLabel};
use crate::medium::MacCounters;
use crate::metrics::{digest_bytes, csv_row, DigestSink, MetricsAccumulator, MetricsReport, RowKey, Tee, TraceSink, CSV_HEADER};
use crate::mobility::{Area, MobilityError, MobilityPlan, WaypointParams};
use crate::protocols::{aodv::AodvAgent, dsdv::DsdvAgent, dsr::DsrAgent, zrp::ZrpAgent};
use crate::routing::RoutingAgent;
use crate::sim::{Instrumentation, Simulator};
use crate::text::{format_fixed, parse_canonical_u64};
use crate::traffic::{connections_for, TrafficError, TrafficPlan};

pub const NODE_COUNTS: [usize; 5] = [10, 20, 30, 40, 50];
pub const PAUSES_S: [f64; 5] = [10.0, 50.0, 100.0, 150.0, 200.0];
pub const MAX_SPEEDS: [f64; 5] = [5.0, 10.0, 15.0, 20.0, 25.0];
/// Maximum speed held fixed across the pause sweep.
pub const PAUSE_SWEEP_SPEED: f64 = 2.0;
/// Pause held fixed across the speed sweep.
pub const SPEED_SWEEP_PAUSE: f64 = 2.0;
pub const MIN_SPEED: f64 = 1.0;
pub const DURATION_S: f64 = 150.0;

pub const MOVEMENT_FILE: &str = "movement.txt";
pub const TRAFFIC_FILE: &str = "traffic.txt";
pub const SCENARIO_FILE: &str = "scenario.conf";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {msg}")]
    Invalid { path: PathBuf, msg: String },
    #[error("mobility: {0}")]
    Mobility(#[from] MobilityError),
    #[error("traffic: {0}")]
    Traffic(#[from] TrafficError),
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("no results to aggregate")]
    EmptyInput,
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Protocol {
    Dsdv,
    Aodv,
    Dsr,
    Zrp,
}

impl Protocol {
    pub const ALL: [Protocol; 4] = [Protocol::Dsdv, Protocol::Aodv, Protocol::Dsr, Protocol::Zrp];

    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Dsdv => "dsdv",
            Protocol::Aodv => "aodv",
            Protocol::Dsr => "dsr",
            Protocol::Zrp => "zrp",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Protocol::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown protocol {s:?} (expected dsdv, aodv, dsr or zrp)"))
    }
}

/// Which of the two sweeps a cell belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SweepKind {
    Pause,
    Speed,
}

/// One cell of the matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub kind: SweepKind,
    pub nodes: usize,
    pub pause_s: f64,
    pub speed_max: f64,
}

impl Cell {
    /// The 50 cells: pause sweep first, then speed sweep, nodes fastest.
    pub fn all() -> Vec<Cell> {
        let mut cells = Vec::with_capacity(50);
        for &pause_s in &PAUSES_S {
            for &nodes in &NODE_COUNTS {
                cells.push(Cell { kind: SweepKind::Pause, nodes, pause_s, speed_max: PAUSE_SWEEP_SPEED });
            }
        }
        for &speed_max in &MAX_SPEEDS {
            for &nodes in &NODE_COUNTS {
                cells.push(Cell { kind: SweepKind::Speed, nodes, pause_s: SPEED_SWEEP_PAUSE, speed_max });
            }
        }
        cells
    }

    /// Scenario seed of this cell for seed index `k` (1-based).
    pub fn scenario_seed(index: usize, k: u64) -> u64 {
        k * 1000 + index as u64
    }
}

/// Everything needed to regenerate a scenario's movement and traffic.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioMeta {
    pub nodes: usize,
    pub pause_s: f64,
    pub speed_min: f64,
    pub speed_max: f64,
    pub seed: u64,
    pub duration_s: f64,
    pub area: Area,
    pub connections: usize,
}

impl ScenarioMeta {
    pub fn for_cell(cell: &Cell, seed: u64) -> Self {
        ScenarioMeta {
            nodes: cell.nodes,
            pause_s: cell.pause_s,
            speed_min: MIN_SPEED,
            speed_max: cell.speed_max,
            seed,
            duration_s: DURATION_S,
            area: Area::default(),
            connections: connections_for(cell.nodes),
        }
    }

    pub fn duration(&self) -> SimTime {
        SimTime::from_secs_f64(self.duration_s)
    }

    pub fn to_text(&self) -> String {
        let f = |v: f64| format_fixed(v, 6);
        format!(
            "nodes = {}\npause_s = {}\nspeed_min = {}\nspeed_max = {}\nseed = {}\nduration_s = {}\nwidth = {}\nheight = {}\nconnections = {}\n",
            self.nodes,
            f(self.pause_s),
            f(self.speed_min),
            f(self.speed_max),
            self.seed,
            f(self.duration_s),
            f(self.area.width),
            f(self.area.height),
            self.connections
        )
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut kv = std::collections::BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| format!("line {}: expected key = value", i + 1))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| kv.get(k).ok_or_else(|| format!("missing key {k}"));
        let int = |k: &str| -> Result<u64, String> {
            parse_canonical_u64(get(k)?).map_err(|e| format!("{k}: {e}"))
        };
        let num = |k: &str| -> Result<f64, String> {
            get(k)?.parse::<f64>().ok().filter(|v| v.is_finite() && *v >= 0.0).ok_or_else(|| format!("{k}: expected a non-negative number"))
        };
        let meta = ScenarioMeta {
            nodes: int("nodes")? as usize,
            pause_s: num("pause_s")?,
            speed_min: num("speed_min")?,
            speed_max: num("speed_max")?,
            seed: int("seed")?,
            duration_s: num("duration_s")?,
            area: Area::new(num("width")?, num("height")?),
            connections: int("connections")? as usize,
        };
        if let Some(k) = kv.keys().find(|k| !SCENARIO_KEYS.contains(&k.as_str())) {
            return Err(format!("unknown key {k}"));
        }
        Ok(meta)
    }

    pub fn row_key(&self, protocol: Protocol) -> RowKey {
        RowKey {
            protocol: protocol.to_string(),
            nodes: Some(self.nodes),
            pause: Some(self.pause_s),
            speed: Some(self.speed_max),
            seed: Some(self.seed),
        }
    }
}

const SCENARIO_KEYS: [&str; 9] =
    ["nodes", "pause_s", "speed_min", "speed_max", "seed", "duration_s", "width", "height", "connections"];

/// Materialized mobility and traffic of one (cell, seed), shared by all protocols.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub meta: ScenarioMeta,
    pub mobility: MobilityPlan,
    pub traffic: TrafficPlan,
}

impl Scenario {
    pub fn generate(meta: ScenarioMeta) -> Result<Self, HarnessError> {
        let wp = WaypointParams {
            nodes: meta.nodes,
            area: meta.area,
            pause_s: meta.pause_s,
            speed_min: meta.speed_min,
            speed_max: meta.speed_max,
            duration_s: meta.duration_s,
        };
        let mobility = MobilityPlan::generate(&wp, &mut RandomStream::new(meta.seed, StreamLabel::Mobility))?;
        let traffic = TrafficPlan::generate(
            meta.nodes,
            meta.connections,
            &mut RandomStream::new(meta.seed, StreamLabel::Traffic),
            meta.duration_s,
        )?;
        Ok(Scenario { meta, mobility, traffic })
    }

    pub fn write_dir(&self, dir: &Path) -> Result<(), HarnessError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        for (name, text) in [
            (MOVEMENT_FILE, self.mobility.to_movement_file()),
            (TRAFFIC_FILE, self.traffic.to_traffic_file()),
            (SCENARIO_FILE, self.meta.to_text()),
        ] {
            let p = dir.join(name);
            fs::write(&p, text).map_err(io_err(&p))?;
        }
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self, HarnessError> {
        let read = |name: &str| {
            let p = dir.join(name);
            fs::read_to_string(&p).map_err(io_err(&p)).map(|t| (p, t))
        };
        let (p, text) = read(SCENARIO_FILE)?;
        let meta = ScenarioMeta::parse(&text).map_err(|msg| HarnessError::Invalid { path: p, msg })?;
        let (p, text) = read(MOVEMENT_FILE)?;
        let mobility = MobilityPlan::parse_movement_file(&text, meta.area)
            .map_err(|e| HarnessError::Invalid { path: p.clone(), msg: e.to_string() })?;
        if mobility.node_count() != meta.nodes {
            return Err(HarnessError::Invalid {
                path: p,
                msg: format!("{} nodes, scenario says {}", mobility.node_count(), meta.nodes),
            });
        }
        let (p, text) = read(TRAFFIC_FILE)?;
        let traffic = TrafficPlan::parse_traffic_file(&text, meta.nodes)
            .map_err(|e| HarnessError::Invalid { path: p, msg: e.to_string() })?;
        Ok(Scenario { meta, mobility, traffic })
    }
}

/// One run of the matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub protocol: Protocol,
    pub cell: Cell,
    pub meta: ScenarioMeta,
}

/// `50 cells x 4 protocols x seeds` runs; protocols of one (cell, seed) share a scenario.
pub fn gen_matrix(seeds: u64) -> Result<Vec<RunConfig>, HarnessError> {
    if seeds == 0 {
        return Err(HarnessError::Usage("seeds must be at least 1".into()));
    }
    let mut out = Vec::new();
    for (i, cell) in Cell::all().iter().enumerate() {
        for k in 1..=seeds {
            let meta = ScenarioMeta::for_cell(cell, Cell::scenario_seed(i, k));
            for protocol in Protocol::ALL {
                out.push(RunConfig { protocol, cell: *cell, meta: meta.clone() });
            }
        }
    }
    Ok(out)
}

/// Raw simulator outcome, protocol-erased.
#[derive(Debug, Clone, Default)]
pub struct RunStats {
    pub residual_data: u64,
    pub mac: MacCounters,
    pub loop_violations: usize,
    pub revisits: u64,
    pub events: u64,
}

fn simulate_with<A: RoutingAgent>(
    params: &SimParams,
    sc: &Scenario,
    inst: Instrumentation,
    sink: &mut dyn TraceSink,
) -> RunStats {
    let out = Simulator::<A>::new(params, &sc.mobility, &sc.traffic, sc.meta.duration(), sc.meta.seed)
        .with_instrumentation(inst)
        .run(sink);
    RunStats {
        residual_data: out.residual_data,
        mac: out.mac,
        loop_violations: out.loop_violations.len(),
        revisits: out.revisits,
        events: out.summary.dispatched,
    }
}

/// Runs `protocol` over a scenario, streaming the trace into `sink`.
pub fn simulate(
    protocol: Protocol,
    params: &SimParams,
    sc: &Scenario,
    inst: Instrumentation,
    sink: &mut dyn TraceSink,
) -> RunStats {
    match protocol {
        Protocol::Dsdv => simulate_with::<DsdvAgent>(params, sc, inst, sink),
        Protocol::Aodv => simulate_with::<AodvAgent>(params, sc, inst, sink),
        Protocol::Dsr => simulate_with::<DsrAgent>(params, sc, inst, sink),
        Protocol::Zrp => simulate_with::<ZrpAgent>(params, sc, inst, sink),
    }
}

/// Metrics and provenance of one completed run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub protocol: Protocol,
    pub meta: ScenarioMeta,
    pub report: MetricsReport,
    pub stats: RunStats,
    pub trace_sha256: String,
    pub trace_lines: u64,
}

impl RunResult {
    pub fn row_key(&self) -> RowKey {
        self.meta.row_key(self.protocol)
    }

    pub fn csv_row(&self) -> String {
        csv_row(&self.row_key(), &self.report)
    }

    /// Conservation holds exactly.
    pub fn conserves(&self) -> bool {
        self.report.generated == self.report.delivered + self.report.dropped + self.stats.residual_data
    }

    /// Everything needed to reproduce the run, plus the digest to check it against.
    pub fn manifest(&self, params: &SimParams, sc: &Scenario) -> String {
        let mut m = String::new();
        let _ = writeln!(m, "protocol = {}", self.protocol);
        m.push_str(&self.meta.to_text());
        let _ = writeln!(m, "movement_sha256 = {}", digest_bytes(sc.mobility.to_movement_file().as_bytes()));
        let _ = writeln!(m, "traffic_sha256 = {}", digest_bytes(sc.traffic.to_traffic_file().as_bytes()));
        let _ = writeln!(m, "trace_sha256 = {}", self.trace_sha256);
        let _ = writeln!(m, "trace_lines = {}", self.trace_lines);
        m.push_str(&params.to_overrides_text());
        m
    }
}

/// Runs one protocol on a scenario, computing metrics and the trace digest
/// in the same pass and optionally writing the trace.
pub fn execute(
    protocol: Protocol,
    params: &SimParams,
    sc: &Scenario,
    inst: Instrumentation,
    trace: Option<&mut dyn TraceSink>,
) -> RunResult {
    let mut acc = MetricsAccumulator::new();
    let mut digest = DigestSink::default();
    let stats = {
        let mut both = Tee(&mut acc, &mut digest);
        match trace {
            Some(t) => simulate(protocol, params, sc, inst, &mut Tee(&mut both, t)),
            None => simulate(protocol, params, sc, inst, &mut both),
        }
    };
    let trace_lines = digest.lines();
    RunResult { protocol, meta: sc.meta.clone(), report: acc.report(), stats, trace_sha256: digest.hex(), trace_lines }
}

/// Runs one protocol over a scenario directory, writing the trace and its
/// manifest (`<trace>.manifest`).
pub fn run_to_file(
    protocol: Protocol,
    params: &SimParams,
    scenario_dir: &Path,
    trace_path: &Path,
) -> Result<RunResult, HarnessError> {
    let sc = Scenario::read_dir(scenario_dir)?;
    let file = fs::File::create(trace_path).map_err(io_err(trace_path))?;
    let mut writer = crate::metrics::LineWriter::new(std::io::BufWriter::new(file));
    let result = execute(protocol, params, &sc, Instrumentation::default(), Some(&mut writer));
    writer.finish().map_err(io_err(trace_path))?;
    let manifest_path = manifest_path(trace_path);
    fs::write(&manifest_path, result.manifest(params, &sc)).map_err(io_err(&manifest_path))?;
    Ok(result)
}

pub fn manifest_path(trace_path: &Path) -> PathBuf {
    let mut s = trace_path.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub seeds: u64,
    pub protocols: Vec<Protocol>,
    pub jobs: usize,
    pub params: SimParams,
    /// Record per-packet paths for loop checks.
    pub track_paths: bool,
    /// Restrict to these cells (indices into [`Cell::all`]); all when empty.
    pub cells: Vec<usize>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            seeds: 5,
            protocols: Protocol::ALL.to_vec(),
            jobs: 0,
            params: SimParams::default(),
            track_paths: true,
            cells: Vec::new(),
        }
    }
}

/// Runs the matrix. Each (cell, seed) scenario is generated once and
/// shared by every protocol; results come back in matrix order.
pub fn sweep(opts: &SweepOptions) -> Result<Vec<RunResult>, HarnessError> {
    if opts.seeds == 0 {
        return Err(HarnessError::Usage("seeds must be at least 1".into()));
    }
    if opts.protocols.is_empty() {
        return Err(HarnessError::Usage("no protocols selected".into()));
    }
    opts.params.validate()?;
    let cells = Cell::all();
    let mut jobs: Vec<ScenarioMeta> = Vec::new();
    for (i, cell) in cells.iter().enumerate() {
        if !opts.cells.is_empty() && !opts.cells.contains(&i) {
            continue;
        }
        for k in 1..=opts.seeds {
            jobs.push(ScenarioMeta::for_cell(cell, Cell::scenario_seed(i, k)));
        }
    }
    let inst = Instrumentation { track_paths: opts.track_paths };
    let work = |meta: &ScenarioMeta| -> Result<Vec<RunResult>, HarnessError> {
        let sc = Scenario::generate(meta.clone())?;
        Ok(opts.protocols.iter().map(|&p| execute(p, &opts.params, &sc, inst, None)).collect())
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| HarnessError::Usage(format!("thread pool: {e}")))?;
    let batches: Vec<Result<Vec<RunResult>, HarnessError>> = pool.install(|| jobs.par_iter().map(work).collect());
    let mut out = Vec::with_capacity(jobs.len() * opts.protocols.len());
    for b in batches {
        out.extend(b?);
    }
    Ok(out)
}

/// `metrics.csv` text for a set of results.
pub fn metrics_csv(results: &[RunResult]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in results {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

/// One line per run: key, digest, residual and check counters.
pub fn runs_csv(results: &[RunResult]) -> String {
    let mut s = String::from("protocol,nodes,pause,speed,seed,trace_sha256,trace_lines,residual,revisits,loop_violations\n");
    for r in results {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            r.protocol,
            r.meta.nodes,
            r.meta.pause_s,
            r.meta.speed_max,
            r.meta.seed,
            r.trace_sha256,
            r.trace_lines,
            r.stats.residual_data,
            r.stats.revisits,
            r.stats.loop_violations
        );
    }
    s
}

/// Writes `metrics.csv`, `runs.csv` and `sweep.conf` into `dir`.
pub fn write_sweep(dir: &Path, results: &[RunResult], params: &SimParams) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (name, text) in [
        ("metrics.csv", metrics_csv(results)),
        ("runs.csv", runs_csv(results)),
        ("sweep.conf", params.to_overrides_text()),
    ] {
        let p = dir.join(name);
        let mut f = fs::File::create(&p).map_err(io_err(&p))?;
        f.write_all(text.as_bytes()).map_err(io_err(&p))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_size_and_cells() {
        let m = gen_matrix(5).unwrap();
        assert_eq!(m.len(), 1000);
        assert!(gen_matrix(0).is_err());
        let c = m.iter().find(|r| r.meta.nodes == 10 && r.meta.pause_s == 200.0).unwrap();
        assert_eq!(c.meta.speed_max, 2.0);
        let c = m.iter().find(|r| r.meta.nodes == 50 && r.meta.speed_max == 25.0).unwrap();
        assert_eq!(c.meta.pause_s, 2.0);
        assert_eq!(c.meta.speed_min, 1.0);
    }

    #[test]
    fn protocols_share_a_scenario() {
        let m = gen_matrix(1).unwrap();
        for chunk in m.chunks(4) {
            assert!(chunk.iter().all(|r| r.meta == chunk[0].meta));
            let ps: Vec<Protocol> = chunk.iter().map(|r| r.protocol).collect();
            assert_eq!(ps, Protocol::ALL.to_vec());
        }
    }

    #[test]
    fn scenario_meta_round_trip() {
        let meta = ScenarioMeta::for_cell(&Cell::all()[7], 3007);
        assert_eq!(ScenarioMeta::parse(&meta.to_text()).unwrap(), meta);
        assert!(ScenarioMeta::parse("nodes = 3\n").is_err());
        assert!(ScenarioMeta::parse(&format!("{}bogus = 1\n", meta.to_text())).is_err());
    }

    #[test]
    fn protocol_names() {
        for p in Protocol::ALL {
            assert_eq!(p.as_str().parse::<Protocol>().unwrap(), p);
        }
        assert!("olsr".parse::<Protocol>().is_err());
    }
}
