//! Acceptance suite. Each test prints one `[PASS]`/`[FAIL]` line. The trend
//! and invariant checks share a single full sweep (50 cells x 4 protocols x
//! 5 seeds), computed once on first use. All oracles here are written
//! independently of the harness's own aggregation code.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::Write as _;
use std::sync::OnceLock;
use std::time::Instant;

use manet_core::config::SimParams;
use manet_core::engine::SimTime;
use manet_core::harness::{self, execute, Protocol, RunResult, Scenario, ScenarioMeta, SweepOptions};
use manet_core::metrics::{LineWriter, MetricsAccumulator};
use manet_core::mobility::{Area, MobilityPlan, Position};
use manet_core::node::NodeId;
use manet_core::protocols::{aodv::AodvAgent, dsdv::DsdvAgent, dsr::DsrAgent, zrp::ZrpAgent};
use manet_core::routing::RoutingAgent;
use manet_core::sim::{Instrumentation, RunOutcome, Simulator};
use manet_core::traffic::{Connection, TrafficPlan};

/// Written straight to stderr so the line shows even when output is captured.
fn report(id: u32, name: &str, pass: bool, detail: &str) {
    let line = format!("[{}] {id:>2} {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
}

// ---------------------------------------------------------------- sweep ---

fn sweep() -> &'static [RunResult] {
    static SWEEP: OnceLock<Vec<RunResult>> = OnceLock::new();
    SWEEP.get_or_init(|| {
        let t = Instant::now();
        let r = harness::sweep(&SweepOptions::default()).expect("sweep runs");
        eprintln!("sweep: {} runs in {:.1} s", r.len(), t.elapsed().as_secs_f64());
        r
    })
}

/// (nodes, pause, speed) -> protocol -> per-seed values.
type Cells = BTreeMap<(usize, u64, u64), BTreeMap<&'static str, Vec<f64>>>;

fn cells(metric: impl Fn(&RunResult) -> Option<f64>) -> Cells {
    let mut out: Cells = BTreeMap::new();
    for r in sweep() {
        let key = (r.meta.nodes, (r.meta.pause_s * 1000.0) as u64, (r.meta.speed_max * 1000.0) as u64);
        let slot = out.entry(key).or_default().entry(r.protocol.as_str()).or_default();
        if let Some(v) = metric(r) {
            slot.push(v);
        }
    }
    out
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Fraction of cells where `claim` holds over per-protocol seed means.
/// Cells where a needed mean is undefined count as failures.
fn fraction(cells: &Cells, claim: impl Fn(&dyn Fn(&str) -> Option<f64>) -> Option<bool>) -> f64 {
    let hits = cells
        .values()
        .filter(|by| claim(&|p: &str| by.get(p).and_then(|v| mean(v))).unwrap_or(false))
        .count();
    hits as f64 / cells.len() as f64
}

fn throughput(r: &RunResult) -> Option<f64> {
    (r.report.generated > 0).then(|| r.report.delivered as f64 / r.report.generated as f64)
}

fn delay(r: &RunResult) -> Option<f64> {
    r.report.average_delay().ok()
}

fn dropped(r: &RunResult) -> Option<f64> {
    Some(r.report.dropped as f64)
}

fn overhead(r: &RunResult) -> Option<f64> {
    Some(r.report.overhead as f64)
}

fn check_fraction(id: u32, name: &str, value: f64, threshold: f64) {
    let pass = value >= threshold;
    report(id, name, pass, &format!("{:.1}% of cells (need >= {:.0}%)", value * 100.0, threshold * 100.0));
    assert!(pass, "{name}: {value:.3} < {threshold}");
}

#[test]
fn aodv_throughput_leads() {
    let c = cells(throughput);
    let v = fraction(&c, |m| {
        let a = m("aodv")?;
        Some(a >= m("dsdv")? && a >= m("dsr")? && a >= m("zrp")?)
    });
    check_fraction(1, "AODV throughput >= every other protocol", v, 0.6);
}

#[test]
fn dsdv_drops_most() {
    let c = cells(dropped);
    let v = fraction(&c, |m| {
        let d = m("dsdv")?;
        Some(d > m("aodv")? && d > m("dsr")?)
    });
    check_fraction(2, "DSDV drops > AODV and DSR", v, 0.6);
}

#[test]
fn zrp_aodv_overhead_highest() {
    let c = cells(overhead);
    let v = fraction(&c, |m| Some(m("zrp")?.max(m("aodv")?) > m("dsr")?.max(m("dsdv")?)));
    check_fraction(3, "max(ZRP, AODV) overhead > max(DSR, DSDV)", v, 0.7);
}

/// Spearman's rho with average ranks for ties, computed as Pearson on ranks.
fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        v.iter()
            .map(|a| {
                let less = v.iter().filter(|b| *b < a).count() as f64;
                let equal = v.iter().filter(|b| *b == a).count() as f64;
                less + (equal + 1.0) / 2.0
            })
            .collect()
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return f64::NEG_INFINITY;
    }
    cov / (vx * vy).sqrt()
}

#[test]
fn overhead_grows_with_nodes() {
    let c = cells(overhead);
    // Sweep row = (pause, speed); x = node count.
    let mut rows: BTreeMap<(u64, u64, &str), Vec<(f64, f64)>> = BTreeMap::new();
    for (&(n, pause, speed), by) in &c {
        for (&p, v) in by {
            rows.entry((pause, speed, p)).or_default().push((n as f64, mean(v).unwrap()));
        }
    }
    let mut worst = (f64::INFINITY, String::new());
    for (&(pause, speed, p), pts) in &rows {
        let (x, y): (Vec<f64>, Vec<f64>) = pts.iter().copied().unzip();
        let rho = spearman(&x, &y);
        if rho < worst.0 {
            worst = (rho, format!("{p} pause {} speed {}", pause as f64 / 1000.0, speed as f64 / 1000.0));
        }
    }
    let pass = worst.0 >= 0.7 && rows.len() == 40;
    report(4, "overhead rank-correlates with node count", pass, &format!("min rho {:.2} at {} over {} rows (need >= 0.7)", worst.0, worst.1, rows.len()));
    assert!(pass);
}

#[test]
fn dsdv_delay_below_aodv() {
    let c = cells(delay);
    let v = fraction(&c, |m| Some(m("dsdv")? < m("aodv")?));
    check_fraction(5, "DSDV average delay < AODV", v, 0.6);
}

#[test]
fn dsr_drops_not_above_aodv() {
    let c = cells(dropped);
    let v = fraction(&c, |m| Some(m("dsr")? <= m("aodv")?));
    check_fraction(6, "DSR drops <= AODV drops", v, 0.5);
}

#[test]
fn conservation_in_every_run() {
    let runs = sweep();
    let bad: Vec<String> = runs
        .iter()
        .filter(|r| r.report.generated != r.report.delivered + r.report.dropped + r.stats.residual_data)
        .map(|r| format!("{} n={} seed={}", r.protocol, r.meta.nodes, r.meta.seed))
        .collect();
    let pass = bad.is_empty() && runs.len() == 1000;
    report(10, "conservation", pass, &format!("{} of {} runs violate", bad.len(), runs.len()));
    assert!(pass, "{bad:?}");
}

#[test]
fn loop_freedom_in_every_run() {
    let runs = sweep();
    let revisits: u64 = runs.iter().map(|r| r.stats.revisits).sum();
    let witness: usize = runs.iter().map(|r| r.stats.loop_violations).sum();
    let pass = revisits == 0 && witness == 0;
    report(11, "loop freedom", pass, &format!("{revisits} revisits, {witness} AODV witness violations over {} runs", runs.len()));
    assert!(pass);
}

// ---------------------------------------------------------- determinism ---

/// splitmix64, enough to draw test configurations.
struct Mix(u64);

impl Mix {
    fn next(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    fn below(&mut self, n: u64) -> u64 {
        self.next() % n
    }

    fn unit(&mut self) -> f64 {
        (self.next() >> 11) as f64 / (1u64 << 53) as f64
    }
}

fn trace_bytes(p: Protocol, params: &SimParams, sc: &Scenario) -> Vec<u8> {
    let mut w = LineWriter::new(Vec::new());
    execute(p, params, sc, Instrumentation::default(), Some(&mut w));
    w.finish().unwrap()
}

#[test]
fn identical_configs_give_identical_traces() {
    let mut rng = Mix(0x5eed);
    let mut bad = Vec::new();
    for i in 0..50 {
        let p = Protocol::ALL[rng.below(4) as usize];
        let nodes = 3 + rng.below(18) as usize;
        let speed_max = 1.0 + rng.unit() * 20.0;
        let meta = ScenarioMeta {
            nodes,
            pause_s: (rng.unit() * 60.0).round(),
            speed_min: 1.0_f64.min(speed_max),
            speed_max,
            seed: rng.next(),
            duration_s: 20.0 + rng.below(41) as f64,
            area: Area::default(),
            connections: 1 + rng.below(nodes as u64) as usize,
        };
        let sc = Scenario::generate(meta).unwrap();
        let params = SimParams::default();
        let a = trace_bytes(p, &params, &sc);
        let b = trace_bytes(p, &params, &sc);
        if a != b || a.is_empty() {
            bad.push(format!("config {i} ({p}, n={nodes})"));
        }
    }
    let pass = bad.is_empty();
    report(7, "determinism", pass, &format!("{} of 50 randomized configs differ", bad.len()));
    assert!(pass, "{bad:?}");
}

// ------------------------------------------------------- static checks ---

fn flow(src: u32, dst: u32, start_s: f64) -> Connection {
    Connection { src: NodeId(src), dst: NodeId(dst), start_s, rate_pps: 4.0, size: 512 }
}

fn run_static<A: RoutingAgent>(
    area: Area,
    pos: &[Position],
    traffic: &TrafficPlan,
    duration_s: u64,
    warmup_s: u64,
    seed: u64,
) -> (MetricsAccumulator, RunOutcome<A>) {
    let params = SimParams::default();
    let plan = MobilityPlan::static_positions(area, pos);
    let mut acc = MetricsAccumulator::with_warmup(SimTime::from_secs(warmup_s));
    let out = Simulator::<A>::new(&params, &plan, traffic, SimTime::from_secs(duration_s), seed).run(&mut acc);
    (acc, out)
}

/// 5x5 grid, 200 m spacing: only horizontal and vertical neighbors are in range.
fn grid() -> (Area, Vec<Position>) {
    let pos = (0..25).map(|i| Position::new(100.0 + 200.0 * (i % 5) as f64, 100.0 + 200.0 * (i / 5) as f64)).collect();
    (Area::new(1000.0, 1000.0), pos)
}

#[test]
fn static_grid_delivers() {
    let (area, pos) = grid();
    let traffic = TrafficPlan { connections: vec![flow(0, 24, 5.0), flow(4, 20, 6.0), flow(12, 2, 7.0), flow(22, 10, 8.0)] };
    let mut lines = Vec::new();
    let mut pass = true;
    for p in Protocol::ALL {
        let r = match p {
            Protocol::Dsdv => run_static::<DsdvAgent>(area, &pos, &traffic, 100, 10, 1).0.report(),
            Protocol::Aodv => run_static::<AodvAgent>(area, &pos, &traffic, 100, 10, 1).0.report(),
            Protocol::Dsr => run_static::<DsrAgent>(area, &pos, &traffic, 100, 10, 1).0.report(),
            Protocol::Zrp => run_static::<ZrpAgent>(area, &pos, &traffic, 100, 10, 1).0.report(),
        };
        // Independent ratio; packets still in flight at the end count as losses.
        let ratio = r.delivered as f64 / r.generated as f64;
        pass &= r.generated > 0 && ratio >= 0.99;
        lines.push(format!("{p} {:.4}", ratio));
    }
    report(8, "static 5x5 grid delivery >= 0.99", pass, &lines.join(", "));
    assert!(pass);
}

/// Unit-disk adjacency at the default radio range.
fn adjacency(pos: &[Position], range: f64) -> Vec<Vec<usize>> {
    (0..pos.len())
        .map(|i| (0..pos.len()).filter(|&j| j != i && pos[i].distance(pos[j]) <= range).collect())
        .collect()
}

fn bfs(adj: &[Vec<usize>], root: usize) -> Vec<Option<u32>> {
    let mut d = vec![None; adj.len()];
    d[root] = Some(0);
    let mut q = VecDeque::from([root]);
    while let Some(u) = q.pop_front() {
        for &v in &adj[u] {
            if d[v].is_none() {
                d[v] = Some(d[u].unwrap() + 1);
                q.push_back(v);
            }
        }
    }
    d
}

fn random_connected(rng: &mut Mix, range: f64) -> Vec<Position> {
    loop {
        let n = 4 + rng.below(12) as usize;
        let pos: Vec<Position> = (0..n).map(|_| Position::new(rng.unit() * 500.0, rng.unit() * 500.0)).collect();
        let adj = adjacency(&pos, range);
        if bfs(&adj, 0).iter().all(Option::is_some) {
            return pos;
        }
    }
}

#[test]
fn routing_state_matches_bfs() {
    let params = SimParams::default();
    let range = params.radio.range_m;
    let radius = params.zrp.radius;
    let mut rng = Mix(0xbf5);
    let area = Area::default();
    let mut failures: Vec<String> = Vec::new();
    let mut dsr_routes = 0usize;
    let mut aodv_routes = 0usize;
    for t in 0..100 {
        let pos = random_connected(&mut rng, range);
        let n = pos.len();
        let adj = adjacency(&pos, range);
        let dist: Vec<Vec<Option<u32>>> = (0..n).map(|i| bfs(&adj, i)).collect();
        let mut pairs = BTreeSet::new();
        while pairs.len() < 3.min(n * (n - 1)) {
            let (s, d) = (rng.below(n as u64) as u32, rng.below(n as u64) as u32);
            if s != d {
                pairs.insert((s, d));
            }
        }
        let traffic = TrafficPlan {
            connections: pairs.iter().enumerate().map(|(k, &(s, d))| flow(s, d, 5.0 + k as f64)).collect(),
        };
        let quiet = TrafficPlan::default();

        // DSDV: three full-dump intervals plus one periodic tick, so the last
        // sequence wave has had its incremental repair round.
        let (_, out) = run_static::<DsdvAgent>(area, &pos, &quiet, 170, 0, t);
        for (i, a) in out.agents.iter().enumerate() {
            for j in 0..n {
                let m = a.metric_to(NodeId(j as u32));
                if m != dist[i][j] {
                    let e = a.table().get(NodeId(j as u32));
                    failures.push(format!("topology {t}: DSDV {i}->{j} metric {m:?}, BFS {:?} entry {e:?} dest seq {} d={:.3}", dist[i][j], out.agents[j].own_seq(), pos[i].distance(pos[j])));
                }
            }
        }

        // ZRP: zone = nodes within `radius` hops; peripheral = exactly `radius`.
        let (_, out) = run_static::<ZrpAgent>(area, &pos, &quiet, 30, 0, t);
        let end = SimTime::from_secs(30);
        for (i, a) in out.agents.iter().enumerate() {
            let zone = a.zone(end);
            let want: BTreeSet<NodeId> =
                (0..n).filter(|&j| dist[i][j].is_some_and(|d| d <= radius)).map(|j| NodeId(j as u32)).collect();
            let want_p: BTreeSet<NodeId> =
                (0..n).filter(|&j| dist[i][j] == Some(radius)).map(|j| NodeId(j as u32)).collect();
            if zone.members() != want || zone.peripheral() != want_p {
                failures.push(format!("topology {t}: ZRP zone of {i} differs from cutoff BFS"));
            }
        }

        // AODV: source routes to their destinations are at most one hop longer than BFS.
        let (_, out) = run_static::<AodvAgent>(area, &pos, &traffic, 30, 0, t);
        for &(s, d) in &pairs {
            match out.agents[s as usize].table().valid(NodeId(d), end) {
                Some(r) => {
                    aodv_routes += 1;
                    let best = dist[s as usize][d as usize].unwrap();
                    if r.hops > best + 1 {
                        failures.push(format!("topology {t}: AODV {s}->{d} {} hops, BFS {best}", r.hops));
                    }
                }
                None => failures.push(format!("topology {t}: AODV {s} has no route to {d}")),
            }
        }

        // DSR: every cached route starts at its owner and follows real links.
        let (_, out) = run_static::<DsrAgent>(area, &pos, &traffic, 30, 0, t);
        for (i, a) in out.agents.iter().enumerate() {
            for r in a.cache().routes() {
                dsr_routes += 1;
                let ok = r.path.first() == Some(&NodeId(i as u32))
                    && r.path.windows(2).all(|w| adj[w[0].index()].contains(&w[1].index()))
                    && r.path.iter().collect::<BTreeSet<_>>().len() == r.path.len();
                if !ok {
                    failures.push(format!("topology {t}: DSR node {i} caches invalid {:?}", r.path));
                }
            }
        }
    }
    let pass = failures.is_empty();
    report(
        9,
        "BFS oracle on 100 static topologies",
        pass,
        &format!("{} mismatches ({aodv_routes} AODV and {dsr_routes} DSR routes checked)", failures.len()),
    );
    assert!(pass, "{:#?}", &failures[..failures.len().min(20)]);
}

#[test]
fn dsr_is_silent_without_traffic() {
    let n = 10;
    let pos: Vec<Position> = (0..n).map(|i| Position::new(50.0 + 100.0 * (i % 5) as f64, 150.0 + 150.0 * (i / 5) as f64)).collect();
    let area = Area::default();
    let quiet = TrafficPlan::default();
    let dsr = run_static::<DsrAgent>(area, &pos, &quiet, 150, 0, 3).0.report();
    let dsdv = run_static::<DsdvAgent>(area, &pos, &quiet, 150, 0, 3).0.report();
    let floor = n as u64 * (150 / 15);
    let pass = dsr.overhead == 0 && dsdv.overhead >= floor;
    report(12, "DSR silence vs DSDV periodic floor", pass, &format!("DSR {} packets, DSDV {} (floor {floor})", dsr.overhead, dsdv.overhead));
    assert!(pass);
}
