//! Trace records and their line format.
//!
//! One record per line, ten space-separated fields:
//!
//! ```text
//! <s|r|d|f> <time, 9 decimals> <node> <AGT|RTR|MAC> <uid> <ptype> <size> <src|*> <dst|*> <reason|->
//! ```

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::engine::SimTime;
use crate::node::NodeId;
use crate::text::parse_canonical_u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TraceEvent {
    Send,
    Receive,
    Drop,
    Forward,
}

impl TraceEvent {
    fn as_str(self) -> &'static str {
        match self {
            TraceEvent::Send => "s",
            TraceEvent::Receive => "r",
            TraceEvent::Drop => "d",
            TraceEvent::Forward => "f",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Layer {
    Agt,
    Rtr,
    Mac,
}

impl Layer {
    fn as_str(self) -> &'static str {
        match self {
            Layer::Agt => "AGT",
            Layer::Rtr => "RTR",
            Layer::Mac => "MAC",
        }
    }
}

/// Protocol-specific routing packet type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RoutingTag {
    Dsdv,
    AodvRreq,
    AodvRrep,
    AodvRerr,
    AodvHello,
    DsrRreq,
    DsrRrep,
    DsrRerr,
    ZrpBeacon,
    ZrpIarp,
    ZrpIerpQuery,
    ZrpIerpReply,
    ZrpIerpError,
}

impl RoutingTag {
    pub const ALL: [RoutingTag; 13] = [
        RoutingTag::Dsdv,
        RoutingTag::AodvRreq,
        RoutingTag::AodvRrep,
        RoutingTag::AodvRerr,
        RoutingTag::AodvHello,
        RoutingTag::DsrRreq,
        RoutingTag::DsrRrep,
        RoutingTag::DsrRerr,
        RoutingTag::ZrpBeacon,
        RoutingTag::ZrpIarp,
        RoutingTag::ZrpIerpQuery,
        RoutingTag::ZrpIerpReply,
        RoutingTag::ZrpIerpError,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RoutingTag::Dsdv => "dsdv",
            RoutingTag::AodvRreq => "aodv:rreq",
            RoutingTag::AodvRrep => "aodv:rrep",
            RoutingTag::AodvRerr => "aodv:rerr",
            RoutingTag::AodvHello => "aodv:hello",
            RoutingTag::DsrRreq => "dsr:rreq",
            RoutingTag::DsrRrep => "dsr:rrep",
            RoutingTag::DsrRerr => "dsr:rerr",
            RoutingTag::ZrpBeacon => "zrp:beacon",
            RoutingTag::ZrpIarp => "zrp:iarp",
            RoutingTag::ZrpIerpQuery => "zrp:ierp_q",
            RoutingTag::ZrpIerpReply => "zrp:ierp_r",
            RoutingTag::ZrpIerpError => "zrp:ierp_e",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PacketType {
    Cbr,
    Routing(RoutingTag),
}

impl PacketType {
    pub fn is_data(self) -> bool {
        self == PacketType::Cbr
    }
}

impl fmt::Display for PacketType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PacketType::Cbr => f.write_str("cbr"),
            PacketType::Routing(t) => f.write_str(t.as_str()),
        }
    }
}

impl FromStr for PacketType {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        if s == "cbr" {
            return Ok(PacketType::Cbr);
        }
        RoutingTag::ALL
            .iter()
            .find(|t| t.as_str() == s)
            .map(|t| PacketType::Routing(*t))
            .ok_or(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DropReason {
    /// Interface queue full.
    Ifq,
    /// Send buffer overflow.
    IfqSendBuffer,
    /// No route.
    NoRoute,
    /// Hop budget exhausted.
    Ttl,
    /// Unicast retries exhausted at the MAC.
    Callback,
    /// Lost to overlapping reception.
    Collision,
    /// Waited in the send buffer too long.
    Timeout,
}

impl DropReason {
    pub const ALL: [DropReason; 7] = [
        DropReason::Ifq,
        DropReason::IfqSendBuffer,
        DropReason::NoRoute,
        DropReason::Ttl,
        DropReason::Callback,
        DropReason::Collision,
        DropReason::Timeout,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::Ifq => "IFQ",
            DropReason::IfqSendBuffer => "IFQ-SB",
            DropReason::NoRoute => "NRTE",
            DropReason::Ttl => "TTL",
            DropReason::Callback => "CBK",
            DropReason::Collision => "COL",
            DropReason::Timeout => "TOUT",
        }
    }

    /// The layer a drop of this kind is attributed to.
    pub fn layer(self) -> Layer {
        match self {
            DropReason::Ifq | DropReason::Callback | DropReason::Collision => Layer::Mac,
            _ => Layer::Rtr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub event: TraceEvent,
    pub time: SimTime,
    pub node: NodeId,
    pub layer: Layer,
    pub uid: u64,
    pub ptype: PacketType,
    pub size: u32,
    pub src: Option<NodeId>,
    pub dst: Option<NodeId>,
    pub reason: Option<DropReason>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("trace line field `{field}`: {msg}")]
pub struct TraceParseError {
    pub field: &'static str,
    pub msg: String,
}

fn field_err(field: &'static str, msg: impl Into<String>) -> TraceParseError {
    TraceParseError { field, msg: msg.into() }
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} {} {} {} {} ",
            self.event.as_str(),
            self.time,
            self.node,
            self.layer.as_str(),
            self.uid,
            self.ptype,
            self.size
        )?;
        match self.src {
            Some(n) => write!(f, "{n} ")?,
            None => f.write_str("* ")?,
        }
        match self.dst {
            Some(n) => write!(f, "{n} ")?,
            None => f.write_str("* ")?,
        }
        match self.reason {
            Some(r) => f.write_str(r.as_str()),
            None => f.write_str("-"),
        }
    }
}

fn parse_time(s: &str) -> Result<SimTime, TraceParseError> {
    let (secs, frac) = s.split_once('.').ok_or_else(|| field_err("time", "missing decimal point"))?;
    if frac.len() != 9 || !frac.bytes().all(|b| b.is_ascii_digit()) {
        return Err(field_err("time", "expected exactly 9 decimals"));
    }
    let secs = parse_canonical_u64(secs).map_err(|e| field_err("time", e.to_string()))?;
    let frac: u64 = frac.parse().map_err(|_| field_err("time", "bad fraction"))?;
    secs.checked_mul(1_000_000_000)
        .and_then(|ns| ns.checked_add(frac))
        .map(SimTime::from_nanos)
        .ok_or_else(|| field_err("time", "out of range"))
}

fn parse_node_opt(field: &'static str, s: &str) -> Result<Option<NodeId>, TraceParseError> {
    if s == "*" {
        Ok(None)
    } else {
        s.parse().map(Some).map_err(|e: crate::text::TokenError| field_err(field, e.to_string()))
    }
}

impl FromStr for TraceRecord {
    type Err = TraceParseError;

    fn from_str(line: &str) -> Result<Self, TraceParseError> {
        let tok: Vec<&str> = line.split(' ').collect();
        if tok.len() != 10 {
            return Err(field_err("line", format!("expected 10 fields, found {}", tok.len())));
        }
        let event = match tok[0] {
            "s" => TraceEvent::Send,
            "r" => TraceEvent::Receive,
            "d" => TraceEvent::Drop,
            "f" => TraceEvent::Forward,
            other => return Err(field_err("event", format!("unknown event {other:?}"))),
        };
        let time = parse_time(tok[1])?;
        let node = tok[2].parse().map_err(|e: crate::text::TokenError| field_err("node", e.to_string()))?;
        let layer = match tok[3] {
            "AGT" => Layer::Agt,
            "RTR" => Layer::Rtr,
            "MAC" => Layer::Mac,
            other => return Err(field_err("layer", format!("unknown layer {other:?}"))),
        };
        let uid = parse_canonical_u64(tok[4]).map_err(|e| field_err("uid", e.to_string()))?;
        let ptype = tok[5]
            .parse()
            .map_err(|_| field_err("ptype", format!("unknown packet type {:?}", tok[5])))?;
        let size = parse_canonical_u64(tok[6])
            .and_then(|v| u32::try_from(v).map_err(|_| crate::text::TokenError::OutOfRange))
            .map_err(|e| field_err("size", e.to_string()))?;
        let src = parse_node_opt("src", tok[7])?;
        let dst = parse_node_opt("dst", tok[8])?;
        let reason = match tok[9] {
            "-" => None,
            r => Some(
                DropReason::ALL
                    .iter()
                    .copied()
                    .find(|d| d.as_str() == r)
                    .ok_or_else(|| field_err("reason", format!("unknown drop reason {r:?}")))?,
            ),
        };
        match (event, reason) {
            (TraceEvent::Drop, None) => return Err(field_err("reason", "drop record without reason")),
            (TraceEvent::Drop, _) | (_, None) => {}
            (_, Some(_)) => return Err(field_err("reason", "reason on a non-drop record")),
        }
        Ok(TraceRecord {
            event,
            time,
            node,
            layer,
            uid,
            ptype,
            size,
            src,
            dst,
            reason,
        })
    }
}

/// Consumer of trace records emitted by a run.
pub trait TraceSink {
    fn record(&mut self, rec: &TraceRecord);
}

impl TraceSink for Vec<TraceRecord> {
    fn record(&mut self, rec: &TraceRecord) {
        self.push(rec.clone());
    }
}

/// Discards everything.
#[derive(Debug, Default)]
pub struct NullSink;

impl TraceSink for NullSink {
    fn record(&mut self, _: &TraceRecord) {}
}

/// Fans one record out to two sinks.
pub struct Tee<'a, A: ?Sized, B: ?Sized>(pub &'a mut A, pub &'a mut B);

impl<A: TraceSink + ?Sized, B: TraceSink + ?Sized> TraceSink for Tee<'_, A, B> {
    fn record(&mut self, rec: &TraceRecord) {
        self.0.record(rec);
        self.1.record(rec);
    }
}

/// Formats records as trace lines into any writer. I/O errors are latched
/// and reported by [`LineWriter::finish`].
pub struct LineWriter<W: std::io::Write> {
    out: W,
    buf: String,
    error: Option<std::io::Error>,
}

impl<W: std::io::Write> LineWriter<W> {
    pub fn new(out: W) -> Self {
        LineWriter { out, buf: String::with_capacity(96), error: None }
    }

    pub fn finish(mut self) -> std::io::Result<W> {
        if let Some(e) = self.error.take() {
            return Err(e);
        }
        self.out.flush()?;
        Ok(self.out)
    }
}

impl<W: std::io::Write> TraceSink for LineWriter<W> {
    fn record(&mut self, rec: &TraceRecord) {
        if self.error.is_some() {
            return;
        }
        use std::fmt::Write as _;
        self.buf.clear();
        let _ = writeln!(self.buf, "{rec}");
        if let Err(e) = self.out.write_all(self.buf.as_bytes()) {
            self.error = Some(e);
        }
    }
}

/// SHA-256 over the exact trace bytes, without materializing them.
pub struct DigestSink {
    hasher: sha2::Sha256,
    buf: String,
    lines: u64,
}

impl Default for DigestSink {
    fn default() -> Self {
        use sha2::Digest;
        DigestSink { hasher: sha2::Sha256::new(), buf: String::with_capacity(96), lines: 0 }
    }
}

impl DigestSink {
    pub fn lines(&self) -> u64 {
        self.lines
    }

    pub fn hex(self) -> String {
        use sha2::Digest;
        let out = self.hasher.finalize();
        out.iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl TraceSink for DigestSink {
    fn record(&mut self, rec: &TraceRecord) {
        use sha2::Digest;
        use std::fmt::Write as _;
        self.buf.clear();
        let _ = writeln!(self.buf, "{rec}");
        self.hasher.update(self.buf.as_bytes());
        self.lines += 1;
    }
}

/// SHA-256 of raw trace file bytes, matching [`DigestSink`].
pub fn digest_bytes(bytes: &[u8]) -> String {
    use sha2::Digest;
    sha2::Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_agent_send() {
        let r: TraceRecord = "s 10.250000000 3 AGT 42 cbr 512 3 7 -".parse().unwrap();
        assert_eq!(r.event, TraceEvent::Send);
        assert_eq!(r.node, NodeId(3));
        assert_eq!(r.layer, Layer::Agt);
        assert_eq!(r.time, SimTime::from_millis(10_250));
        assert_eq!((r.src, r.dst), (Some(NodeId(3)), Some(NodeId(7))));
        assert_eq!(r.reason, None);
    }

    #[test]
    fn parses_drop_with_reason() {
        let r: TraceRecord = "d 11.000000000 5 RTR 42 cbr 512 3 7 NRTE".parse().unwrap();
        assert_eq!(r.event, TraceEvent::Drop);
        assert_eq!(r.reason, Some(DropReason::NoRoute));
    }

    #[test]
    fn wrong_decimals_name_the_time_field() {
        let e = "s 10.0 3 AGT 42 cbr 512 3 7 -".parse::<TraceRecord>().unwrap_err();
        assert_eq!(e.field, "time");
    }

    #[test]
    fn malformed_fields_are_named() {
        let cases = [
            ("x 1.000000000 3 AGT 42 cbr 512 3 7 -", "event"),
            ("s 1.000000000 03 AGT 42 cbr 512 3 7 -", "node"),
            ("s 1.000000000 3 APP 42 cbr 512 3 7 -", "layer"),
            ("s 1.000000000 3 AGT -1 cbr 512 3 7 -", "uid"),
            ("s 1.000000000 3 AGT 1 tcp 512 3 7 -", "ptype"),
            ("s 1.000000000 3 AGT 1 cbr big 3 7 -", "size"),
            ("s 1.000000000 3 AGT 1 cbr 512 ? 7 -", "src"),
            ("s 1.000000000 3 AGT 1 cbr 512 3 ? -", "dst"),
            ("d 1.000000000 3 RTR 1 cbr 512 3 7 -", "reason"),
            ("s 1.000000000 3 RTR 1 cbr 512 3 7 COL", "reason"),
            ("s 1.000000000 3 AGT 1 cbr 512 3 7", "line"),
        ];
        for (line, field) in cases {
            let e = line.parse::<TraceRecord>().unwrap_err();
            assert_eq!(e.field, field, "{line}");
        }
    }

    #[test]
    fn routing_tags_round_trip() {
        for t in RoutingTag::ALL {
            let line = format!("f 0.000000001 0 RTR 9 {} 24 1 * -", t.as_str());
            let r: TraceRecord = line.parse().unwrap();
            assert_eq!(r.to_string(), line);
        }
    }

    #[test]
    fn digest_matches_file_bytes() {
        let recs: Vec<TraceRecord> = [
            "s 1.000000000 0 AGT 1 cbr 512 0 1 -",
            "r 1.002000000 1 AGT 1 cbr 512 0 1 -",
        ]
        .iter()
        .map(|l| l.parse().unwrap())
        .collect();
        let mut d = DigestSink::default();
        let mut w = LineWriter::new(Vec::new());
        for r in &recs {
            d.record(r);
            w.record(r);
        }
        let bytes = w.finish().unwrap();
        assert_eq!(d.hex(), digest_bytes(&bytes));
    }
}
