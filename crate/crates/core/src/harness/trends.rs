//! Qualitative trend checks over sweep results, evaluated on per-cell means.

use std::collections::BTreeMap;

use super::{HarnessError, Protocol};
use crate::metrics::CSV_HEADER;

/// One parsed row of `metrics.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub protocol: Protocol,
    pub nodes: usize,
    pub pause: f64,
    pub speed: f64,
    pub seed: u64,
    pub throughput: Option<f64>,
    pub avg_delay_s: Option<f64>,
    pub dropped: u64,
    pub overhead: u64,
    pub generated: u64,
    pub delivered: u64,
}

impl MetricRow {
    pub fn cell(&self) -> CellKey {
        CellKey { nodes: self.nodes, pause_milli: (self.pause * 1000.0).round() as u64, speed_milli: (self.speed * 1000.0).round() as u64 }
    }
}

/// Cell identity usable as a map key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellKey {
    pub nodes: usize,
    pub pause_milli: u64,
    pub speed_milli: u64,
}

impl CellKey {
    pub fn pause(&self) -> f64 {
        self.pause_milli as f64 / 1000.0
    }

    pub fn speed(&self) -> f64 {
        self.speed_milli as f64 / 1000.0
    }
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, name: &str, line: u64) -> Result<T, HarnessError> {
    rec.get(i)
        .unwrap_or("")
        .parse()
        .map_err(|_| HarnessError::Usage(format!("metrics csv line {line}: bad {name} {:?}", rec.get(i).unwrap_or(""))))
}

fn opt_field(rec: &csv::StringRecord, i: usize, name: &str, line: u64) -> Result<Option<f64>, HarnessError> {
    match rec.get(i).unwrap_or("") {
        "" => Ok(None),
        _ => field(rec, i, name, line).map(Some),
    }
}

/// Parses `metrics.csv` text; the header must match exactly.
pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricRow>, HarnessError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| HarnessError::Usage(format!("metrics csv: {e}")))?.clone();
    if header.iter().collect::<Vec<_>>().join(",") != CSV_HEADER {
        return Err(HarnessError::Usage(format!("metrics csv: expected header {CSV_HEADER:?}")));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| HarnessError::Usage(format!("metrics csv: {e}")))?;
        let line = rec.position().map_or(0, |p| p.line());
        let protocol = rec
            .get(0)
            .unwrap_or("")
            .parse::<Protocol>()
            .map_err(|e| HarnessError::Usage(format!("metrics csv line {line}: {e}")))?;
        rows.push(MetricRow {
            protocol,
            nodes: field(&rec, 1, "nodes", line)?,
            pause: field(&rec, 2, "pause", line)?,
            speed: field(&rec, 3, "speed", line)?,
            seed: field(&rec, 4, "seed", line)?,
            throughput: opt_field(&rec, 5, "throughput", line)?,
            avg_delay_s: opt_field(&rec, 6, "avg_delay_s", line)?,
            dropped: field(&rec, 7, "dropped", line)?,
            overhead: field(&rec, 8, "overhead", line)?,
            generated: field(&rec, 9, "generated", line)?,
            delivered: field(&rec, 10, "delivered", line)?,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Throughput,
    AvgDelay,
    Dropped,
    Overhead,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Throughput, Metric::AvgDelay, Metric::Dropped, Metric::Overhead];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Throughput => "throughput",
            Metric::AvgDelay => "avg_delay",
            Metric::Dropped => "dropped",
            Metric::Overhead => "overhead",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Metric::Throughput => "Throughput (delivered / generated)",
            Metric::AvgDelay => "Average delay (s)",
            Metric::Dropped => "Dropped packets",
            Metric::Overhead => "Routing overhead (packets)",
        }
    }

    pub fn of(self, r: &MetricRow) -> Option<f64> {
        match self {
            Metric::Throughput => r.throughput,
            Metric::AvgDelay => r.avg_delay_s,
            Metric::Dropped => Some(r.dropped as f64),
            Metric::Overhead => Some(r.overhead as f64),
        }
    }
}

/// Mean, min and max of a metric over the seeds of one cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

pub fn summarize(values: impl IntoIterator<Item = f64>) -> Option<Summary> {
    let v: Vec<f64> = values.into_iter().collect();
    if v.is_empty() {
        return None;
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Some(Summary { mean, min, max, n: v.len() })
}

/// Per cell and protocol, the seed summary of `metric`.
pub fn cell_summaries(rows: &[MetricRow], metric: Metric) -> BTreeMap<CellKey, BTreeMap<Protocol, Summary>> {
    let mut groups: BTreeMap<CellKey, BTreeMap<Protocol, Vec<f64>>> = BTreeMap::new();
    for r in rows {
        if let Some(v) = metric.of(r) {
            groups.entry(r.cell()).or_default().entry(r.protocol).or_default().push(v);
        }
    }
    groups
        .into_iter()
        .map(|(c, by)| (c, by.into_iter().filter_map(|(p, v)| summarize(v).map(|s| (p, s))).collect()))
        .collect()
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let rx = ranks(x);
    let ry = ranks(y);
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx * vy).sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            out[idx[k]] = rank;
        }
        i = j + 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrendCheck {
    pub id: u32,
    pub name: &'static str,
    /// Fraction of cells satisfying the claim, or the minimum correlation.
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

fn fraction(
    rows: &[MetricRow],
    metric: Metric,
    claim: impl Fn(&BTreeMap<Protocol, Summary>) -> Option<bool>,
) -> f64 {
    let cells = cell_summaries(rows, metric);
    let verdicts: Vec<bool> = cells.values().filter_map(claim).collect();
    if verdicts.is_empty() {
        return 0.0;
    }
    verdicts.iter().filter(|&&b| b).count() as f64 / verdicts.len() as f64
}

fn mean(m: &BTreeMap<Protocol, Summary>, p: Protocol) -> Option<f64> {
    m.get(&p).map(|s| s.mean)
}

/// Evaluates the six trend claims over all four protocols.
pub fn check_trends(rows: &[MetricRow]) -> Vec<TrendCheck> {
    use Protocol::*;
    let mut out = Vec::new();
    let mut push = |id, name, value: f64, threshold: f64| {
        out.push(TrendCheck { id, name, value, threshold, pass: value >= threshold });
    };

    let v = fraction(rows, Metric::Throughput, |m| {
        let a = mean(m, Aodv)?;
        Some([Dsdv, Dsr, Zrp].iter().all(|&p| mean(m, p).is_none_or(|o| a >= o)))
    });
    push(1, "AODV throughput >= every other protocol", v, 0.6);

    let v = fraction(rows, Metric::Dropped, |m| {
        let d = mean(m, Dsdv)?;
        Some(d > mean(m, Aodv)? && d > mean(m, Dsr)?)
    });
    push(2, "DSDV drops more than AODV and DSR", v, 0.6);

    let v = fraction(rows, Metric::Overhead, |m| {
        let hi = mean(m, Zrp)?.max(mean(m, Aodv)?);
        let lo = mean(m, Dsr)?.max(mean(m, Dsdv)?);
        Some(hi > lo)
    });
    push(3, "max(ZRP, AODV) overhead > max(DSR, DSDV)", v, 0.7);

    let cells = cell_summaries(rows, Metric::Overhead);
    let mut rows_by_group: BTreeMap<(u64, u64, Protocol), Vec<(f64, f64)>> = BTreeMap::new();
    for (c, by) in &cells {
        for (&p, s) in by {
            rows_by_group.entry((c.pause_milli, c.speed_milli, p)).or_default().push((c.nodes as f64, s.mean));
        }
    }
    let min_rho = rows_by_group
        .values()
        .map(|pts| {
            let (x, y): (Vec<f64>, Vec<f64>) = pts.iter().copied().unzip();
            spearman(&x, &y).unwrap_or(f64::NEG_INFINITY)
        })
        .fold(f64::INFINITY, f64::min);
    push(4, "overhead rank-correlates with node count (min rho)", if min_rho.is_finite() { min_rho } else { 0.0 }, 0.7);

    let v = fraction(rows, Metric::AvgDelay, |m| Some(mean(m, Dsdv)? < mean(m, Aodv)?));
    push(5, "DSDV average delay < AODV", v, 0.6);

    let v = fraction(rows, Metric::Dropped, |m| Some(mean(m, Dsr)? <= mean(m, Aodv)?));
    push(6, "DSR drops <= AODV drops", v, 0.5);
    out
}
