//! Constant-bit-rate traffic plans and the traffic-file text format.

use std::fmt::Write as _;

use thiserror::Error;

use crate::engine::{RandomStream, SimTime};
use crate::node::NodeId;
use crate::routing::DATA_PAYLOAD_BYTES;
use crate::text::{format_fixed, parse_canonical_u64, parse_fixed, quantize6};

/// Packets per second of every generated connection.
pub const CBR_RATE_PPS: f64 = 4.0;
/// Latest connection start, seconds.
pub const MAX_START_S: f64 = 50.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Connection {
    pub src: NodeId,
    pub dst: NodeId,
    pub start_s: f64,
    pub rate_pps: f64,
    pub size: u32,
}

impl Connection {
    pub fn interval(&self) -> SimTime {
        SimTime::from_secs_f64(1.0 / self.rate_pps)
    }

    /// Emission times strictly before `duration`.
    pub fn emission_times(&self, duration: SimTime) -> impl Iterator<Item = SimTime> {
        let start = SimTime::from_secs_f64(self.start_s);
        let step = self.interval();
        (0u64..)
            .map(move |k| start + step.mul(k))
            .take_while(move |t| *t < duration)
    }

    /// The next packet of this flow at or after `now`: its time and flow sequence.
    pub fn emit(&self, now: SimTime) -> (SimTime, u64) {
        let start = SimTime::from_secs_f64(self.start_s);
        let step = self.interval().as_nanos().max(1);
        let elapsed = now.saturating_sub(start).as_nanos();
        let k = elapsed.div_ceil(step);
        (start + SimTime::from_nanos(k * step), k)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrafficPlan {
    pub connections: Vec<Connection>,
}

#[derive(Debug, Error, PartialEq)]
pub enum TrafficError {
    #[error("invalid traffic parameters: {0}")]
    InvalidParams(&'static str),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Connection count used by the benchmark matrix for a given node count.
pub fn connections_for(nodes: usize) -> usize {
    if nodes <= 30 {
        20
    } else {
        40
    }
}

impl TrafficPlan {
    /// Draws `min(max_conns, n(n-1))` distinct ordered pairs without
    /// self-loops, each starting uniformly in `[0, 50]` s (capped below the
    /// duration), at 4 packets/s of 512 bytes.
    pub fn generate(n: usize, max_conns: usize, stream: &mut RandomStream, duration_s: f64) -> Result<Self, TrafficError> {
        if n < 2 {
            return Err(TrafficError::InvalidParams("need at least two nodes"));
        }
        if max_conns == 0 {
            return Err(TrafficError::InvalidParams("need at least one connection"));
        }
        if !(duration_s > 0.0) {
            return Err(TrafficError::InvalidParams("duration must be positive"));
        }
        let target = max_conns.min(n * (n - 1));
        let latest = MAX_START_S.min(duration_s);
        let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(target);
        let mut connections = Vec::with_capacity(target);
        while connections.len() < target {
            let src = stream.below(n as u64) as usize;
            let mut dst = stream.below(n as u64 - 1) as usize;
            if dst >= src {
                dst += 1;
            }
            if pairs.contains(&(src, dst)) {
                continue;
            }
            pairs.push((src, dst));
            let mut start = quantize6(stream.draw_closed(0.0, latest));
            if start >= duration_s {
                start = 0.0;
            }
            connections.push(Connection {
                src: NodeId(src as u32),
                dst: NodeId(dst as u32),
                start_s: start,
                rate_pps: CBR_RATE_PPS,
                size: DATA_PAYLOAD_BYTES,
            });
        }
        sort_connections(&mut connections);
        Ok(TrafficPlan { connections })
    }

    /// `conn <src> <dst> start <t> rate <pps> size <bytes>` per line, by start time.
    pub fn to_traffic_file(&self) -> String {
        let mut out = String::new();
        for c in &self.connections {
            let _ = writeln!(
                out,
                "conn {} {} start {} rate {} size {}",
                c.src,
                c.dst,
                format_fixed(c.start_s, 6),
                format_fixed(c.rate_pps, 6),
                c.size
            );
        }
        out
    }

    /// Parses a traffic file; every node id must be below `nodes`.
    pub fn parse_traffic_file(text: &str, nodes: usize) -> Result<Self, TrafficError> {
        let mut connections = Vec::new();
        let mut last_start = 0.0;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |msg: String| TrafficError::Parse { line, msg };
            let tok: Vec<&str> = raw.split(' ').collect();
            let ["conn", src, dst, "start", start, "rate", rate, "size", size] = tok.as_slice() else {
                return Err(err(format!("unrecognized directive {raw:?}")));
            };
            let node = |s: &str, what: &str| -> Result<NodeId, TrafficError> {
                let id: NodeId = s.parse().map_err(|e| err(format!("{what}: {e}")))?;
                if id.index() >= nodes {
                    return Err(err(format!("{what} {id} is not below {nodes}")));
                }
                Ok(id)
            };
            let (src, dst) = (node(src, "src")?, node(dst, "dst")?);
            if src == dst {
                return Err(err("src equals dst".into()));
            }
            let start_s = parse_fixed(start, 6).map_err(|e| err(format!("start: {e}")))?;
            let rate_pps = parse_fixed(rate, 6).map_err(|e| err(format!("rate: {e}")))?;
            if rate_pps <= 0.0 {
                return Err(err("rate must be positive".into()));
            }
            let size = parse_canonical_u64(size)
                .ok()
                .and_then(|v| u32::try_from(v).ok())
                .filter(|&v| v > 0)
                .ok_or_else(|| err("size: expected a positive integer".into()))?;
            if start_s < last_start {
                return Err(err("connections must be ordered by start time".into()));
            }
            last_start = start_s;
            connections.push(Connection { src, dst, start_s, rate_pps, size });
        }
        Ok(TrafficPlan { connections })
    }
}

fn sort_connections(c: &mut [Connection]) {
    c.sort_by(|a, b| {
        a.start_s
            .total_cmp(&b.start_s)
            .then(a.src.cmp(&b.src))
            .then(a.dst.cmp(&b.dst))
    });
}
