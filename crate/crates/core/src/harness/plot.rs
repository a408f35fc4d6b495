//! Aggregation of sweep results into per-metric pivot CSVs and SVG charts:
//! x = node count, one polyline per protocol, seed mean with min-max whiskers.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::trends::{cell_summaries, CellKey, Metric, MetricRow, Summary};
use super::{io_err, HarnessError, Protocol, NODE_COUNTS};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 130.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

fn color(p: Protocol) -> &'static str {
    match p {
        Protocol::Dsdv => "#1f77b4",
        Protocol::Aodv => "#d62728",
        Protocol::Dsr => "#2ca02c",
        Protocol::Zrp => "#9467bd",
    }
}

/// A chart group: one (pause, max speed) setting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Group {
    pub pause_milli: u64,
    pub speed_milli: u64,
}

impl Group {
    fn of(c: &CellKey) -> Self {
        Group { pause_milli: c.pause_milli, speed_milli: c.speed_milli }
    }

    fn fmt_num(milli: u64) -> String {
        if milli % 1000 == 0 {
            (milli / 1000).to_string()
        } else {
            format!("{}", milli as f64 / 1000.0)
        }
    }

    pub fn slug(&self) -> String {
        format!("pause{}_speed{}", Self::fmt_num(self.pause_milli), Self::fmt_num(self.speed_milli))
    }

    pub fn title(&self) -> String {
        format!("pause {} s, max speed {} m/s", Self::fmt_num(self.pause_milli), Self::fmt_num(self.speed_milli))
    }
}

#[derive(Debug, Clone, Default)]
pub struct PlotSummary {
    pub charts: Vec<PathBuf>,
    pub pivots: Vec<PathBuf>,
    /// `(group, protocol, nodes)` combinations with no data.
    pub missing: Vec<String>,
}

/// Writes `<metric>.csv` pivots and one SVG per (metric, group) into `out`.
pub fn aggregate_and_plot(rows: &[MetricRow], out: &Path) -> Result<PlotSummary, HarnessError> {
    if rows.is_empty() {
        return Err(HarnessError::EmptyInput);
    }
    fs::create_dir_all(out).map_err(io_err(out))?;
    let protocols: BTreeSet<Protocol> = rows.iter().map(|r| r.protocol).collect();
    let groups: BTreeSet<Group> = rows.iter().map(|r| Group::of(&r.cell())).collect();
    let mut xs: BTreeSet<usize> = rows.iter().map(|r| r.nodes).collect();
    xs.extend(NODE_COUNTS);
    let mut summary = PlotSummary::default();

    let present: BTreeSet<(Group, Protocol, usize)> = rows.iter().map(|r| (Group::of(&r.cell()), r.protocol, r.nodes)).collect();
    for &g in &groups {
        for &p in &protocols {
            for &n in &xs {
                if !present.contains(&(g, p, n)) {
                    summary.missing.push(format!("{} {} n={}", g.title(), p, n));
                }
            }
        }
    }
    if !summary.missing.is_empty() {
        log::warn!("absent cells: {}", summary.missing.join("; "));
    }

    for metric in Metric::ALL {
        let cells = cell_summaries(rows, metric);
        let mut by_group: BTreeMap<Group, BTreeMap<Protocol, BTreeMap<usize, Summary>>> = BTreeMap::new();
        for (c, by) in &cells {
            for (&p, &s) in by {
                by_group.entry(Group::of(c)).or_default().entry(p).or_default().insert(c.nodes, s);
            }
        }

        let mut pivot = String::from("pause,speed,nodes,protocol,mean,min,max,runs\n");
        for (g, by) in &by_group {
            for (p, pts) in by {
                for (n, s) in pts {
                    let _ = writeln!(
                        pivot,
                        "{},{},{},{},{:.6},{:.6},{:.6},{}",
                        Group::fmt_num(g.pause_milli),
                        Group::fmt_num(g.speed_milli),
                        n,
                        p,
                        s.mean,
                        s.min,
                        s.max,
                        s.n
                    );
                }
            }
        }
        let p = out.join(format!("{}.csv", metric.name()));
        fs::write(&p, pivot).map_err(io_err(&p))?;
        summary.pivots.push(p);

        for &g in &groups {
            let empty = BTreeMap::new();
            let series = by_group.get(&g).unwrap_or(&empty);
            let svg = render_chart(metric, g, &xs, &protocols, series);
            let p = out.join(format!("{}_{}.svg", metric.name(), g.slug()));
            fs::write(&p, svg).map_err(io_err(&p))?;
            summary.charts.push(p);
        }
    }
    Ok(summary)
}

fn nice_max(v: f64) -> f64 {
    if !(v > 0.0) {
        return 1.0;
    }
    let mag = 10f64.powf(v.log10().floor());
    for step in [1.0, 2.0, 2.5, 5.0, 10.0] {
        if step * mag >= v {
            return step * mag;
        }
    }
    10.0 * mag
}

fn render_chart(
    metric: Metric,
    g: Group,
    xs: &BTreeSet<usize>,
    protocols: &BTreeSet<Protocol>,
    series: &BTreeMap<Protocol, BTreeMap<usize, Summary>>,
) -> String {
    let x_lo = *xs.first().unwrap_or(&0) as f64;
    let x_hi = *xs.last().unwrap_or(&1) as f64;
    let y_top = series.values().flat_map(|m| m.values().map(|s| s.max)).fold(0.0, f64::max);
    let y_hi = if metric == Metric::Throughput { 1.0f64.max(y_top) } else { nice_max(y_top * 1.05) };
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| if x_hi > x_lo { LEFT + (x - x_lo) / (x_hi - x_lo) * pw } else { LEFT + pw / 2.0 };
    let sy = |y: f64| TOP + ph - y / y_hi * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{} ({})</text>"#,
        LEFT + pw / 2.0,
        metric.label(),
        g.title()
    );
    // Axes and grid.
    for i in 0..=5 {
        let y = y_hi * i as f64 / 5.0;
        let py = sy(y);
        let _ = writeln!(s, r##"<line x1="{LEFT}" y1="{py:.1}" x2="{:.1}" y2="{py:.1}" stroke="#ddd"/>"##, LEFT + pw);
        let label = if y_hi >= 100.0 { format!("{y:.0}") } else { format!("{y:.3}") };
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{label}</text>"#, LEFT - 6.0, py + 4.0);
    }
    for &x in xs {
        let px = sx(x as f64);
        let _ = writeln!(s, r#"<line x1="{px:.1}" y1="{:.1}" x2="{px:.1}" y2="{:.1}" stroke="black"/>"#, TOP + ph, TOP + ph + 5.0);
        let _ = writeln!(s, r#"<text x="{px:.1}" y="{:.1}" text-anchor="middle">{x}</text>"#, TOP + ph + 18.0);
    }
    let _ = writeln!(
        s,
        r#"<polyline points="{LEFT},{TOP} {LEFT},{:.1} {:.1},{:.1}" fill="none" stroke="black"/>"#,
        TOP + ph,
        LEFT + pw,
        TOP + ph
    );
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">Number of nodes</text>"#, LEFT + pw / 2.0, HEIGHT - 10.0);

    for (i, &p) in protocols.iter().enumerate() {
        let c = color(p);
        let pts = series.get(&p);
        // Polyline segments break where a node count is missing.
        let mut seg: Vec<String> = Vec::new();
        let mut segments: Vec<Vec<String>> = Vec::new();
        for &x in xs {
            match pts.and_then(|m| m.get(&x)) {
                Some(v) => seg.push(format!("{:.1},{:.1}", sx(x as f64), sy(v.mean))),
                None => {
                    if !seg.is_empty() {
                        segments.push(std::mem::take(&mut seg));
                    }
                }
            }
        }
        if !seg.is_empty() {
            segments.push(seg);
        }
        for seg in segments {
            let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="2"/>"#, seg.join(" "));
        }
        if let Some(m) = pts {
            for (&x, v) in m {
                let px = sx(x as f64);
                let _ = writeln!(
                    s,
                    r#"<line x1="{px:.1}" y1="{:.1}" x2="{px:.1}" y2="{:.1}" stroke="{c}"/>"#,
                    sy(v.min),
                    sy(v.max)
                );
                let _ = writeln!(s, r#"<circle cx="{px:.1}" cy="{:.1}" r="3" fill="{c}"/>"#, sy(v.mean));
            }
        }
        let ly = TOP + 10.0 + 20.0 * i as f64;
        let lx = LEFT + pw + 15.0;
        let _ = writeln!(s, r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{c}" stroke-width="2"/>"#, lx + 20.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, lx + 26.0, ly + 4.0, p.as_str().to_uppercase());
    }
    s.push_str("</svg>\n");
    s
}
