//! Performance metrics computed from a trace: delivery ratio ("throughput"),
//! average end-to-end delay, dropped data packets, and routing overhead.
//!
//! Everything is computed in a single streaming pass; the only state kept is
//! a map from data packet uid to its application send time.

pub mod trace;

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;

use thiserror::Error;

use crate::engine::SimTime;
use crate::node::NodeId;
pub use trace::{
    digest_bytes, DigestSink, DropReason, Layer, LineWriter, NullSink, PacketType, RoutingTag, Tee, TraceEvent,
    TraceParseError, TraceRecord, TraceSink,
};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("{metric} is undefined: {why}")]
    Undefined { metric: &'static str, why: &'static str },
    #[error("line {line}: {source}")]
    Parse { line: usize, source: TraceParseError },
    #[error("reading trace: {0}")]
    Io(#[from] std::io::Error),
}

/// Per-flow tallies, keyed by (src, dst).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FlowTally {
    pub generated: u64,
    pub delivered: u64,
    pub dropped: u64,
}

/// Streaming metric computation over trace records.
#[derive(Debug, Default, Clone)]
pub struct MetricsAccumulator {
    warmup: SimTime,
    send_times: HashMap<u64, SimTime>,
    generated: u64,
    delivered: u64,
    dropped: u64,
    overhead: u64,
    routing_bytes: u64,
    delay_sum_ns: u128,
    drops_by_reason: BTreeMap<DropReason, u64>,
    flows: BTreeMap<(NodeId, NodeId), FlowTally>,
}

impl MetricsAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Data packets generated before `warmup` are ignored entirely.
    pub fn with_warmup(warmup: SimTime) -> Self {
        MetricsAccumulator { warmup, ..Self::default() }
    }

    pub fn observe(&mut self, r: &TraceRecord) {
        match (r.event, r.layer, r.ptype) {
            (TraceEvent::Send, Layer::Agt, PacketType::Cbr) => {
                if r.time < self.warmup {
                    return;
                }
                self.send_times.insert(r.uid, r.time);
                self.generated += 1;
                self.flow(r).generated += 1;
            }
            (TraceEvent::Receive, Layer::Agt, PacketType::Cbr) => {
                if r.dst != Some(r.node) {
                    return;
                }
                if let Some(sent) = self.send_times.remove(&r.uid) {
                    self.delivered += 1;
                    self.delay_sum_ns += u128::from((r.time.saturating_sub(sent)).as_nanos());
                    self.flow(r).delivered += 1;
                }
            }
            (TraceEvent::Drop, _, PacketType::Cbr) => {
                if self.send_times.remove(&r.uid).is_some() {
                    self.dropped += 1;
                    if let Some(reason) = r.reason {
                        *self.drops_by_reason.entry(reason).or_default() += 1;
                    }
                    self.flow(r).dropped += 1;
                }
            }
            (TraceEvent::Send | TraceEvent::Forward, Layer::Rtr, PacketType::Routing(_)) => {
                self.overhead += 1;
                self.routing_bytes += u64::from(r.size);
            }
            _ => {}
        }
    }

    fn flow(&mut self, r: &TraceRecord) -> &mut FlowTally {
        let key = (r.src.unwrap_or_default(), r.dst.unwrap_or_default());
        self.flows.entry(key).or_default()
    }

    /// Data packets sent but neither delivered nor dropped.
    pub fn outstanding(&self) -> u64 {
        self.send_times.len() as u64
    }

    pub fn flows(&self) -> &BTreeMap<(NodeId, NodeId), FlowTally> {
        &self.flows
    }

    pub fn drops_by_reason(&self) -> &BTreeMap<DropReason, u64> {
        &self.drops_by_reason
    }

    pub fn report(&self) -> MetricsReport {
        MetricsReport {
            generated: self.generated,
            delivered: self.delivered,
            dropped: self.dropped,
            overhead: self.overhead,
            routing_bytes: self.routing_bytes,
            delay_sum_ns: self.delay_sum_ns,
        }
    }
}

impl TraceSink for MetricsAccumulator {
    fn record(&mut self, rec: &TraceRecord) {
        self.observe(rec);
    }
}

/// Raw tallies plus derived metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MetricsReport {
    pub generated: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub overhead: u64,
    /// Supplementary: bytes of routing packets transmitted, hop-wise.
    pub routing_bytes: u64,
    delay_sum_ns: u128,
}

impl MetricsReport {
    /// Delivered over generated data packets.
    pub fn throughput(&self) -> Result<f64, MetricsError> {
        if self.generated == 0 {
            return Err(MetricsError::Undefined { metric: "throughput", why: "no data packets generated" });
        }
        Ok(self.delivered as f64 / self.generated as f64)
    }

    /// Mean application-to-application latency of delivered packets, seconds.
    pub fn average_delay(&self) -> Result<f64, MetricsError> {
        if self.delivered == 0 {
            return Err(MetricsError::Undefined { metric: "average delay", why: "no data packets delivered" });
        }
        Ok(self.delay_sum_ns as f64 / self.delivered as f64 / 1e9)
    }
}

pub fn summarize<'a>(trace: impl IntoIterator<Item = &'a TraceRecord>) -> MetricsReport {
    let mut acc = MetricsAccumulator::new();
    for r in trace {
        acc.observe(r);
    }
    acc.report()
}

pub fn throughput<'a>(trace: impl IntoIterator<Item = &'a TraceRecord>) -> Result<f64, MetricsError> {
    summarize(trace).throughput()
}

pub fn average_delay<'a>(trace: impl IntoIterator<Item = &'a TraceRecord>) -> Result<f64, MetricsError> {
    summarize(trace).average_delay()
}

pub fn dropped_packets<'a>(trace: impl IntoIterator<Item = &'a TraceRecord>) -> u64 {
    summarize(trace).dropped
}

pub fn routing_overhead<'a>(trace: impl IntoIterator<Item = &'a TraceRecord>) -> u64 {
    summarize(trace).overhead
}

/// Parses and accumulates a trace stream line by line.
pub fn accumulate_reader<R: BufRead>(reader: R, acc: &mut MetricsAccumulator) -> Result<(), MetricsError> {
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let rec: TraceRecord = line.parse().map_err(|source| MetricsError::Parse { line: i + 1, source })?;
        acc.observe(&rec);
    }
    Ok(())
}

pub const CSV_HEADER: &str =
    "protocol,nodes,pause,speed,seed,throughput,avg_delay_s,dropped,overhead,generated,delivered";

/// Identification columns of one metrics CSV row.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RowKey {
    pub protocol: String,
    pub nodes: Option<usize>,
    pub pause: Option<f64>,
    pub speed: Option<f64>,
    pub seed: Option<u64>,
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// One CSV row; undefined metrics are left empty.
pub fn csv_row(key: &RowKey, m: &MetricsReport) -> String {
    let tp = m.throughput().map(|v| format!("{v:.6}")).unwrap_or_default();
    let delay = m.average_delay().map(|v| format!("{v:.6}")).unwrap_or_default();
    format!(
        "{},{},{},{},{},{},{},{},{},{},{}",
        key.protocol,
        opt(key.nodes),
        opt(key.pause),
        opt(key.speed),
        opt(key.seed),
        tp,
        delay,
        m.dropped,
        m.overhead,
        m.generated,
        m.delivered
    )
}
