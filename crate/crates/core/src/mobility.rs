//! Random waypoint mobility: plan generation, interpolation, and the
//! movement-file text format.

use std::fmt::Write as _;

use thiserror::Error;

use crate::engine::{RandomStream, SimTime};
use crate::node::NodeId;
use crate::text::{format_fixed, parse_fixed, quantize6, TokenError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64) -> Self {
        Position { x, y }
    }

    pub fn distance(self, other: Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Rectangular simulation area anchored at the origin, in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Area {
    pub width: f64,
    pub height: f64,
}

impl Area {
    pub const fn new(width: f64, height: f64) -> Self {
        Area { width, height }
    }

    pub fn contains(&self, p: Position) -> bool {
        (0.0..=self.width).contains(&p.x) && (0.0..=self.height).contains(&p.y)
    }
}

impl Default for Area {
    fn default() -> Self {
        Area::new(500.0, 500.0)
    }
}

/// One straight movement at constant speed.
#[derive(Debug, Clone, PartialEq)]
pub struct Leg {
    /// Departure time, seconds.
    pub depart: f64,
    pub from: Position,
    pub to: Position,
    /// Meters per second, always positive.
    pub speed: f64,
}

impl Leg {
    pub fn duration(&self) -> f64 {
        self.from.distance(self.to) / self.speed
    }

    pub fn arrival(&self) -> f64 {
        self.depart + self.duration()
    }

    fn at(&self, t: f64) -> Position {
        let dur = self.duration();
        if dur <= 0.0 || t >= self.depart + dur {
            return self.to;
        }
        if t <= self.depart {
            return self.from;
        }
        let f = (t - self.depart) / dur;
        Position::new(
            self.from.x + (self.to.x - self.from.x) * f,
            self.from.y + (self.to.y - self.from.y) * f,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeTrack {
    pub initial: Position,
    /// Ordered by departure; each leg starts where the previous ended.
    pub legs: Vec<Leg>,
}

impl NodeTrack {
    pub fn stationary(p: Position) -> Self {
        NodeTrack { initial: p, legs: Vec::new() }
    }

    pub fn position_at(&self, t: f64) -> Position {
        // Last leg that has departed by `t`.
        let idx = self.legs.partition_point(|l| l.depart <= t);
        if idx == 0 {
            self.initial
        } else {
            self.legs[idx - 1].at(t)
        }
    }
}

/// Fully materialized movement of every node.
#[derive(Debug, Clone, PartialEq)]
pub struct MobilityPlan {
    pub area: Area,
    pub tracks: Vec<NodeTrack>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaypointParams {
    pub nodes: usize,
    pub area: Area,
    pub pause_s: f64,
    pub speed_min: f64,
    pub speed_max: f64,
    pub duration_s: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum MobilityError {
    #[error("invalid mobility parameters: {0}")]
    InvalidParams(&'static str),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

impl MobilityPlan {
    pub fn node_count(&self) -> usize {
        self.tracks.len()
    }

    /// Random waypoint: uniform initial position, then repeatedly a uniform
    /// destination and a uniform speed in `[speed_min, speed_max]`, resting
    /// `pause_s` at each reached waypoint. The first leg departs at time 0.
    /// All values are quantized to six decimals so the plan survives the
    /// movement file unchanged. A zero maximum speed yields static nodes.
    pub fn generate(p: &WaypointParams, stream: &mut RandomStream) -> Result<Self, MobilityError> {
        if p.nodes == 0 {
            return Err(MobilityError::InvalidParams("node count must be at least 1"));
        }
        if !(p.speed_min >= 0.0) || !(p.speed_min <= p.speed_max) || !p.speed_max.is_finite() {
            return Err(MobilityError::InvalidParams("speed range"));
        }
        if !(p.pause_s >= 0.0) || !(p.duration_s >= 0.0) {
            return Err(MobilityError::InvalidParams("pause and duration must be non-negative"));
        }
        if !(p.area.width > 0.0 && p.area.height > 0.0) {
            return Err(MobilityError::InvalidParams("area must be positive"));
        }
        let mut tracks = Vec::with_capacity(p.nodes);
        for _ in 0..p.nodes {
            let initial = random_point(&p.area, stream);
            let mut legs = Vec::new();
            if p.speed_max > 0.0 {
                let mut t = 0.0;
                let mut here = initial;
                while t < p.duration_s {
                    let to = random_point(&p.area, stream);
                    let mut speed = quantize6(stream.draw_closed(p.speed_min, p.speed_max));
                    if speed <= 0.0 {
                        // Only reachable with speed_min == 0; nudge to the smallest
                        // representable positive speed instead of stalling forever.
                        speed = 1e-6;
                    }
                    let leg = Leg { depart: t, from: here, to, speed };
                    t = quantize6(leg.arrival() + p.pause_s);
                    here = to;
                    legs.push(leg);
                }
            }
            tracks.push(NodeTrack { initial, legs });
        }
        Ok(MobilityPlan { area: p.area, tracks })
    }

    pub fn static_positions(area: Area, positions: &[Position]) -> Self {
        MobilityPlan {
            area,
            tracks: positions.iter().copied().map(NodeTrack::stationary).collect(),
        }
    }

    pub fn position_at(&self, node: NodeId, t: SimTime) -> Result<Position, MobilityError> {
        self.tracks
            .get(node.index())
            .map(|tr| tr.position_at(t.as_secs_f64()))
            .ok_or(MobilityError::UnknownNode(node))
    }

    /// Writes every node's position at `t` into `out`.
    pub fn positions_at(&self, t: SimTime, out: &mut Vec<Position>) {
        let secs = t.as_secs_f64();
        out.clear();
        out.extend(self.tracks.iter().map(|tr| tr.position_at(secs)));
    }

    /// Movement file text: `node <id> init <x> <y>` followed by
    /// `node <id> at <t> goto <x> <y> speed <v>` lines, ordered by node then time.
    pub fn to_movement_file(&self) -> String {
        let mut out = String::new();
        for (i, tr) in self.tracks.iter().enumerate() {
            let _ = writeln!(
                out,
                "node {i} init {} {}",
                format_fixed(tr.initial.x, 6),
                format_fixed(tr.initial.y, 6)
            );
            for leg in &tr.legs {
                let _ = writeln!(
                    out,
                    "node {i} at {} goto {} {} speed {}",
                    format_fixed(leg.depart, 6),
                    format_fixed(leg.to.x, 6),
                    format_fixed(leg.to.y, 6),
                    format_fixed(leg.speed, 6)
                );
            }
        }
        out
    }

    /// Parses a movement file. Node ids must be dense (`0..n`), each node's
    /// `init` line must precede its legs, and departures must not overlap the
    /// previous leg.
    pub fn parse_movement_file(text: &str, area: Area) -> Result<Self, MobilityError> {
        let mut tracks: Vec<NodeTrack> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let err = |msg: String| MobilityError::Parse { line, msg };
            let tok: Vec<&str> = raw.split(' ').collect();
            let num = |s: &str, what: &str| -> Result<f64, MobilityError> {
                parse_fixed(s, 6).map_err(|e: TokenError| err(format!("{what}: {e}")))
            };
            match tok.as_slice() {
                ["node", id, "init", x, y] => {
                    let id: NodeId = id.parse().map_err(|e| err(format!("node id: {e}")))?;
                    if id.index() != tracks.len() {
                        return Err(err(format!("expected node {} next, found {id}", tracks.len())));
                    }
                    let p = Position::new(num(x, "x")?, num(y, "y")?);
                    if !area.contains(p) {
                        return Err(err("initial position outside area".into()));
                    }
                    tracks.push(NodeTrack::stationary(p));
                }
                ["node", id, "at", t, "goto", x, y, "speed", v] => {
                    let id: NodeId = id.parse().map_err(|e| err(format!("node id: {e}")))?;
                    if id.index() + 1 != tracks.len() {
                        return Err(err(format!("leg for node {id} outside its block")));
                    }
                    let track = tracks.last_mut().expect("non-empty");
                    let depart = num(t, "time")?;
                    let to = Position::new(num(x, "x")?, num(y, "y")?);
                    let speed = num(v, "speed")?;
                    if speed <= 0.0 {
                        return Err(err("speed must be positive".into()));
                    }
                    if !area.contains(to) {
                        return Err(err("waypoint outside area".into()));
                    }
                    let (from, free_at) = match track.legs.last() {
                        Some(prev) => (prev.to, prev.arrival()),
                        None => (track.initial, 0.0),
                    };
                    if depart < free_at - 1e-6 {
                        return Err(err("leg departs before the previous one arrives".into()));
                    }
                    track.legs.push(Leg { depart, from, to, speed });
                }
                _ => return Err(err(format!("unrecognized directive {raw:?}"))),
            }
        }
        Ok(MobilityPlan { area, tracks })
    }
}

fn random_point(area: &Area, stream: &mut RandomStream) -> Position {
    Position::new(
        quantize6(stream.draw_closed(0.0, area.width)),
        quantize6(stream.draw_closed(0.0, area.height)),
    )
}
