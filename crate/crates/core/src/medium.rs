//! Wireless channel and a simplified CSMA MAC.
//!
//! Connectivity is a unit disk of `range_m`. Each node owns a drop-tail
//! interface queue served by a CSMA loop: random backoff (window doubling
//! per unicast retry), local carrier sense, transmission for
//! `size * 8 / rate` seconds. A receiver decodes a
//! frame only if nothing else reached it during the frame and it was not
//! transmitting itself (no capture). Unicast frames are acknowledged and
//! retried up to `retry_limit` times; broadcasts are sent once.

use std::collections::{BTreeMap, VecDeque};

use crate::config::RadioConfig;
use crate::engine::{RandomStream, SimTime};
use crate::mobility::Position;
use crate::node::NodeId;
use crate::routing::{NextHop, Packet, RoutingMessage};

/// Transmissions younger than this are not yet detectable by carrier sense.
pub const CCA_WINDOW: SimTime = SimTime::from_micros(20);

/// Retry count after which the backoff window stops growing.
pub const MAX_BACKOFF_DOUBLINGS: u32 = 5;

/// Airtime of a frame of `size_bytes` at `rate_bps`.
pub fn transmission_time(size_bytes: u32, rate_bps: f64) -> SimTime {
    SimTime::from_secs_f64(f64::from(size_bytes) * 8.0 / rate_bps)
}

pub fn in_range(a: Position, b: Position, range: f64) -> bool {
    a.distance(b) <= range
}

/// Nodes within `range` of `node`, excluding itself, ascending by id.
pub fn neighbors(positions: &[Position], node: NodeId, range: f64) -> Vec<NodeId> {
    let me = positions[node.index()];
    positions
        .iter()
        .enumerate()
        .filter(|&(i, p)| i != node.index() && in_range(me, *p, range))
        .map(|(i, _)| NodeId(i as u32))
        .collect()
}

#[derive(Debug, Clone)]
pub struct Frame<M> {
    pub pkt: Packet<M>,
    pub src: NodeId,
    pub dst: NextHop,
    pub size: u32,
}

/// MAC events the owner must schedule and hand back.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MacTimer {
    /// Backoff expired at this node; sense the channel and maybe transmit.
    Attempt(NodeId),
    /// A transmission finished.
    TxEnd(u64),
}

#[derive(Debug)]
struct MacNode<M> {
    queue: VecDeque<Frame<M>>,
    /// An attempt or transmission is pending for the head frame.
    busy: bool,
    transmitting: Option<u64>,
    retries: u32,
}

#[derive(Debug)]
struct Transmission {
    sender: NodeId,
    start: SimTime,
    end: SimTime,
    /// Receivers in range at the start, with a corruption flag each.
    receivers: Vec<(NodeId, bool)>,
}

/// Everything that happened when a transmission ended.
#[derive(Debug)]
pub struct TxEndOutcome<M> {
    pub sender: NodeId,
    /// Successful receptions, to be handed to each receiver's routing agent.
    pub delivered: Vec<(NodeId, Packet<M>)>,
    /// Broadcast receptions lost to overlap, per receiver.
    pub collided: Vec<(NodeId, Packet<M>)>,
    /// Unicast frames given up on after retry exhaustion (head frame first,
    /// then queued frames to the same next hop), with that next hop.
    pub failed: Vec<(NodeId, Packet<M>)>,
    pub next: Option<(SimTime, MacTimer)>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MacCounters {
    pub enqueued: u64,
    pub delivered_unicast: u64,
    pub broadcast_sent: u64,
    pub dropped_ifq: u64,
    pub dropped_cbk: u64,
    pub collisions: u64,
}

#[derive(Debug)]
pub struct Medium<M> {
    cfg: RadioConfig,
    nodes: Vec<MacNode<M>>,
    active: BTreeMap<u64, Transmission>,
    incoming: Vec<Vec<u64>>,
    next_tx: u64,
    counters: MacCounters,
}

impl<M: RoutingMessage> Medium<M> {
    pub fn new(cfg: RadioConfig, nodes: usize) -> Self {
        Medium {
            cfg,
            nodes: (0..nodes)
                .map(|_| MacNode { queue: VecDeque::new(), busy: false, transmitting: None, retries: 0 })
                .collect(),
            active: BTreeMap::new(),
            incoming: vec![Vec::new(); nodes],
            next_tx: 0,
            counters: MacCounters::default(),
        }
    }

    pub fn config(&self) -> &RadioConfig {
        &self.cfg
    }

    pub fn counters(&self) -> MacCounters {
        self.counters
    }

    pub fn queue_len(&self, node: NodeId) -> usize {
        self.nodes[node.index()].queue.len()
    }

    /// Packets still held by interface queues (including frames on the air).
    pub fn queued_packets(&self) -> impl Iterator<Item = &Packet<M>> {
        self.nodes.iter().flat_map(|n| n.queue.iter().map(|f| &f.pkt))
    }

    pub fn frame(&self, pkt: Packet<M>, src: NodeId, dst: NextHop) -> Frame<M> {
        let size = pkt.size() + self.cfg.frame_overhead_bytes;
        Frame { pkt, src, dst, size }
    }

    /// Uniform backoff; the upper bound doubles with each retry of the head
    /// frame, up to 32 times the base window.
    fn backoff(&self, retries: u32, rng: &mut RandomStream) -> SimTime {
        let max = self.cfg.backoff_max_us << retries.min(MAX_BACKOFF_DOUBLINGS);
        rng.draw_time(SimTime::from_micros(self.cfg.backoff_min_us), SimTime::from_micros(max))
    }

    /// Appends to the sender's interface queue. A full queue hands the frame
    /// back (drop, reason IFQ). If the MAC was idle, returns the attempt to
    /// schedule.
    pub fn enqueue(
        &mut self,
        frame: Frame<M>,
        now: SimTime,
        rng: &mut RandomStream,
    ) -> Result<Option<(SimTime, MacTimer)>, Frame<M>> {
        let src = frame.src;
        let cap = self.cfg.ifq_capacity;
        let node = &mut self.nodes[src.index()];
        if node.queue.len() >= cap {
            self.counters.dropped_ifq += 1;
            return Err(frame);
        }
        node.queue.push_back(frame);
        self.counters.enqueued += 1;
        if node.busy {
            return Ok(None);
        }
        node.busy = true;
        let at = now + self.backoff(0, rng);
        Ok(Some((at, MacTimer::Attempt(src))))
    }

    /// Backoff expired at `node`: transmit if the channel is clear, otherwise
    /// defer until it clears plus a fresh backoff.
    pub fn on_attempt(
        &mut self,
        node: NodeId,
        now: SimTime,
        positions: &[Position],
        rng: &mut RandomStream,
    ) -> Option<(SimTime, MacTimer)> {
        if self.nodes[node.index()].queue.is_empty() {
            self.nodes[node.index()].busy = false;
            return None;
        }
        let me = positions[node.index()];
        let range = self.cfg.range_m;
        let busy_until = self
            .active
            .values()
            .filter(|t| t.sender != node && t.start + CCA_WINDOW <= now)
            .filter(|t| in_range(me, positions[t.sender.index()], range))
            .map(|t| t.end)
            .max();
        if let Some(until) = busy_until {
            let retries = self.nodes[node.index()].retries;
            return Some((until + self.backoff(retries, rng), MacTimer::Attempt(node)));
        }

        let size = self.nodes[node.index()].queue[0].size;
        let end = now + transmission_time(size, self.cfg.data_rate_bps);
        let tx_id = self.next_tx;
        self.next_tx += 1;

        // Half duplex: whatever this node was receiving is lost.
        for id in std::mem::take(&mut self.incoming[node.index()]) {
            if let Some(t) = self.active.get_mut(&id) {
                for r in t.receivers.iter_mut().filter(|r| r.0 == node) {
                    r.1 = true;
                }
            }
        }

        let mut receivers = Vec::new();
        for (i, p) in positions.iter().enumerate() {
            if i == node.index() || !in_range(me, *p, range) {
                continue;
            }
            let rx = NodeId(i as u32);
            let mut corrupted = self.nodes[i].transmitting.is_some();
            if !self.incoming[i].is_empty() {
                corrupted = true;
                for id in &self.incoming[i] {
                    if let Some(t) = self.active.get_mut(id) {
                        for r in t.receivers.iter_mut().filter(|r| r.0 == rx) {
                            r.1 = true;
                        }
                    }
                }
            }
            self.incoming[i].push(tx_id);
            receivers.push((rx, corrupted));
        }
        self.active.insert(tx_id, Transmission { sender: node, start: now, end, receivers });
        self.nodes[node.index()].transmitting = Some(tx_id);
        Some((end, MacTimer::TxEnd(tx_id)))
    }

    pub fn on_tx_end(&mut self, tx_id: u64, now: SimTime, rng: &mut RandomStream) -> TxEndOutcome<M> {
        let tx = self.active.remove(&tx_id).expect("unknown transmission");
        for (rx, _) in &tx.receivers {
            self.incoming[rx.index()].retain(|&id| id != tx_id);
        }
        let sender = tx.sender;
        let retry_limit = self.cfg.retry_limit;
        let ack = SimTime::from_micros(self.cfg.ack_us);
        let mut out = TxEndOutcome {
            sender,
            delivered: Vec::new(),
            collided: Vec::new(),
            failed: Vec::new(),
            next: None,
        };
        let node = &mut self.nodes[sender.index()];
        node.transmitting = None;
        let dst = node.queue[0].dst;
        let mut resume_at = now;
        match dst {
            NextHop::Broadcast => {
                let frame = node.queue.pop_front().expect("head frame");
                node.retries = 0;
                self.counters.broadcast_sent += 1;
                for (rx, corrupted) in tx.receivers {
                    if corrupted {
                        self.counters.collisions += 1;
                        out.collided.push((rx, frame.pkt.clone()));
                    } else {
                        out.delivered.push((rx, frame.pkt.clone()));
                    }
                }
            }
            NextHop::Unicast(to) => {
                let ok = tx.receivers.iter().any(|&(rx, corrupted)| rx == to && !corrupted);
                if ok {
                    let frame = node.queue.pop_front().expect("head frame");
                    node.retries = 0;
                    self.counters.delivered_unicast += 1;
                    out.delivered.push((to, frame.pkt));
                    resume_at = now + ack;
                } else {
                    if tx.receivers.iter().any(|&(rx, c)| rx == to && c) {
                        self.counters.collisions += 1;
                    }
                    node.retries += 1;
                    resume_at = now + ack;
                    if node.retries > retry_limit {
                        node.retries = 0;
                        let head = node.queue.pop_front().expect("head frame");
                        out.failed.push((to, head.pkt));
                        // Everything else queued for the dead next hop fails too.
                        let mut kept = VecDeque::with_capacity(node.queue.len());
                        for f in node.queue.drain(..) {
                            if f.dst == NextHop::Unicast(to) {
                                out.failed.push((to, f.pkt));
                            } else {
                                kept.push_back(f);
                            }
                        }
                        node.queue = kept;
                        self.counters.dropped_cbk += out.failed.len() as u64;
                    }
                }
            }
        }
        let node = &mut self.nodes[sender.index()];
        if node.queue.is_empty() {
            node.busy = false;
        } else {
            let retries = node.retries;
            let at = resume_at + self.backoff(retries, rng);
            out.next = Some((at, MacTimer::Attempt(sender)));
        }
        out
    }
}
