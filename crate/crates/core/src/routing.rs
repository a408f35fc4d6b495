//! The routing-agent seam shared by all protocols: packets, the per-node
//! agent interface, the action context agents talk through, and the send
//! buffer for data awaiting a route.

use std::collections::VecDeque;
use std::fmt::Debug;

use crate::config::{SendBufferParams, SimParams};
use crate::engine::{RandomStream, SimTime};
use crate::metrics::{DropReason, RoutingTag, TraceEvent};
use crate::node::NodeId;

/// Application payload of every data packet, bytes.
pub const DATA_PAYLOAD_BYTES: u32 = 512;
/// Hop budget of data packets.
pub const DATA_TTL: u8 = 32;
/// Source-route header cost per listed hop, bytes.
pub const SOURCE_ROUTE_BYTES_PER_HOP: u32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FlowId {
    pub src: NodeId,
    pub dst: NodeId,
    pub seq: u64,
}

/// A full source route carried in a data header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceRoute {
    pub hops: Vec<NodeId>,
    /// Index of the node currently holding the packet.
    pub cursor: usize,
}

impl SourceRoute {
    pub fn new(hops: Vec<NodeId>) -> Self {
        SourceRoute { hops, cursor: 0 }
    }

    pub fn next_hop(&self) -> Option<NodeId> {
        self.hops.get(self.cursor + 1).copied()
    }

    pub fn current(&self) -> Option<NodeId> {
        self.hops.get(self.cursor).copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataPacket {
    pub flow: FlowId,
    pub payload: u32,
    pub route: Option<SourceRoute>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Body<M> {
    Data(DataPacket),
    Routing(M),
}

/// Protocol message carried in a routing packet.
pub trait RoutingMessage: Clone + Debug {
    fn tag(&self) -> RoutingTag;
    /// Size on the wire without MAC framing, bytes.
    fn size(&self) -> u32;
    /// Originator and target reported in trace records.
    fn endpoints(&self) -> (Option<NodeId>, Option<NodeId>) {
        (None, None)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Packet<M> {
    pub uid: u64,
    pub ttl: u8,
    pub created: SimTime,
    pub body: Body<M>,
}

impl<M: RoutingMessage> Packet<M> {
    pub fn data(uid: u64, flow: FlowId, created: SimTime) -> Self {
        Packet {
            uid,
            ttl: DATA_TTL,
            created,
            body: Body::Data(DataPacket { flow, payload: DATA_PAYLOAD_BYTES, route: None }),
        }
    }

    pub fn size(&self) -> u32 {
        match &self.body {
            Body::Data(d) => {
                d.payload + d.route.as_ref().map_or(0, |r| r.hops.len() as u32 * SOURCE_ROUTE_BYTES_PER_HOP)
            }
            Body::Routing(m) => m.size(),
        }
    }

    pub fn is_data(&self) -> bool {
        matches!(self.body, Body::Data(_))
    }

    pub fn as_data(&self) -> Option<&DataPacket> {
        match &self.body {
            Body::Data(d) => Some(d),
            Body::Routing(_) => None,
        }
    }

    pub fn as_data_mut(&mut self) -> Option<&mut DataPacket> {
        match &mut self.body {
            Body::Data(d) => Some(d),
            Body::Routing(_) => None,
        }
    }

    pub fn as_routing(&self) -> Option<&M> {
        match &self.body {
            Body::Routing(m) => Some(m),
            Body::Data(_) => None,
        }
    }

    /// Final destination of a data packet.
    pub fn data_dst(&self) -> Option<NodeId> {
        self.as_data().map(|d| d.flow.dst)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NextHop {
    Broadcast,
    Unicast(NodeId),
}

/// What an agent asks the simulator to do on its behalf.
#[derive(Debug)]
pub enum Action<M, T> {
    Transmit {
        pkt: Packet<M>,
        next_hop: NextHop,
        delay: SimTime,
        trace: Option<TraceEvent>,
    },
    Timer {
        after: SimTime,
        timer: T,
    },
    Deliver(Packet<M>),
    Drop {
        pkt: Packet<M>,
        reason: DropReason,
    },
}

/// Global uid allocator of one run.
#[derive(Debug, Default)]
pub struct UidSource(u64);

impl UidSource {
    pub fn next(&mut self) -> u64 {
        let v = self.0;
        self.0 += 1;
        v
    }
}

/// The only channel through which an agent affects the world.
pub struct AgentCtx<'a, M, T> {
    node: NodeId,
    now: SimTime,
    jitter_max: SimTime,
    rng: &'a mut RandomStream,
    uids: &'a mut UidSource,
    out: &'a mut Vec<Action<M, T>>,
}

impl<'a, M: RoutingMessage, T> AgentCtx<'a, M, T> {
    pub fn new(
        node: NodeId,
        now: SimTime,
        jitter_max: SimTime,
        rng: &'a mut RandomStream,
        uids: &'a mut UidSource,
        out: &'a mut Vec<Action<M, T>>,
    ) -> Self {
        AgentCtx { node, now, jitter_max, rng, uids, out }
    }

    pub fn node(&self) -> NodeId {
        self.node
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn rng(&mut self) -> &mut RandomStream {
        self.rng
    }

    fn jitter(&mut self) -> SimTime {
        self.rng.draw_time(SimTime::ZERO, self.jitter_max)
    }

    /// Sends a fresh routing packet, traced as an RTR send.
    pub fn originate(&mut self, msg: M, next_hop: NextHop) -> u64 {
        let uid = self.uids.next();
        let pkt = Packet { uid, ttl: u8::MAX, created: self.now, body: Body::Routing(msg) };
        let delay = if next_hop == NextHop::Broadcast { self.jitter() } else { SimTime::ZERO };
        self.out.push(Action::Transmit { pkt, next_hop, delay, trace: Some(TraceEvent::Send) });
        uid
    }

    /// Relays a received routing packet (same uid), traced as an RTR forward.
    pub fn relay(&mut self, mut pkt: Packet<M>, msg: M, next_hop: NextHop) {
        pkt.body = Body::Routing(msg);
        let delay = if next_hop == NextHop::Broadcast { self.jitter() } else { SimTime::ZERO };
        self.out.push(Action::Transmit { pkt, next_hop, delay, trace: Some(TraceEvent::Forward) });
    }

    /// First transmission of a data packet by its source. Not traced: the
    /// application send already was.
    pub fn send_data(&mut self, pkt: Packet<M>, next_hop: NodeId) {
        self.out.push(Action::Transmit {
            pkt,
            next_hop: NextHop::Unicast(next_hop),
            delay: SimTime::ZERO,
            trace: None,
        });
    }

    /// Forwards a data packet one hop, spending one unit of its TTL.
    pub fn forward_data(&mut self, mut pkt: Packet<M>, next_hop: NodeId) {
        pkt.ttl = pkt.ttl.saturating_sub(1);
        if pkt.ttl == 0 {
            self.drop(pkt, DropReason::Ttl);
            return;
        }
        self.out.push(Action::Transmit {
            pkt,
            next_hop: NextHop::Unicast(next_hop),
            delay: SimTime::ZERO,
            trace: Some(TraceEvent::Forward),
        });
    }

    pub fn deliver(&mut self, pkt: Packet<M>) {
        self.out.push(Action::Deliver(pkt));
    }

    pub fn drop(&mut self, pkt: Packet<M>, reason: DropReason) {
        self.out.push(Action::Drop { pkt, reason });
    }

    pub fn set_timer(&mut self, after: SimTime, timer: T) {
        self.out.push(Action::Timer { after, timer });
    }
}

/// Outcome of handing a data packet to the routing layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DispatchOutcome {
    Forwarded,
    Buffered,
    Dropped(DropReason),
}

/// Routing state of a matched destination as seen at one node, used to check
/// sequence-number monotonicity along forwarding paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RouteWitness {
    pub dest_seq: u32,
    pub hops: u32,
}

pub type Ctx<'a, A> = AgentCtx<'a, <A as RoutingAgent>::Msg, <A as RoutingAgent>::Timer>;

/// Per-node protocol instance. An agent mutates only its own state; all
/// inter-node influence flows through transmitted packets.
pub trait RoutingAgent: Sized {
    type Msg: RoutingMessage;
    type Timer: Clone + Debug;

    fn new(node: NodeId, params: &SimParams) -> Self;

    fn start(&mut self, ctx: &mut Ctx<'_, Self>);

    fn on_data_from_app(&mut self, ctx: &mut Ctx<'_, Self>, pkt: Packet<Self::Msg>) -> DispatchOutcome;

    fn on_packet_from_net(&mut self, ctx: &mut Ctx<'_, Self>, pkt: Packet<Self::Msg>, from: NodeId);

    /// The MAC exhausted its retries sending `pkt` to `next_hop`.
    fn on_link_break(&mut self, ctx: &mut Ctx<'_, Self>, next_hop: NodeId, pkt: Packet<Self::Msg>);

    fn on_timer(&mut self, ctx: &mut Ctx<'_, Self>, timer: Self::Timer);

    /// Data packets currently held by the agent.
    fn buffered_data(&self) -> usize;

    fn route_witness(&self, _dst: NodeId, _now: SimTime) -> Option<RouteWitness> {
        None
    }
}

/// Common front door for data from the application.
pub fn dispatch_data<A: RoutingAgent>(
    agent: &mut A,
    ctx: &mut Ctx<'_, A>,
    pkt: Packet<A::Msg>,
) -> DispatchOutcome {
    debug_assert!(pkt.is_data(), "dispatch_data with a routing packet");
    agent.on_data_from_app(ctx, pkt)
}

/// Data packets waiting for a route, FIFO.
#[derive(Debug, Clone)]
pub struct SendBuffer<M> {
    entries: VecDeque<(SimTime, Packet<M>)>,
    capacity: usize,
    timeout: SimTime,
}

impl<M: RoutingMessage> SendBuffer<M> {
    pub fn new(params: &SendBufferParams) -> Self {
        SendBuffer {
            entries: VecDeque::new(),
            capacity: params.capacity,
            timeout: SimTime::from_secs_f64(params.timeout_s),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Buffers `pkt`; on overflow the oldest packet is evicted and returned.
    pub fn push(&mut self, pkt: Packet<M>, now: SimTime) -> Option<Packet<M>> {
        let evicted = if self.entries.len() >= self.capacity {
            self.entries.pop_front().map(|(_, p)| p)
        } else {
            None
        };
        self.entries.push_back((now, pkt));
        evicted
    }

    /// Removes every packet buffered for longer than the timeout.
    pub fn expire(&mut self, now: SimTime) -> Vec<Packet<M>> {
        let timeout = self.timeout;
        let mut expired = Vec::new();
        let mut kept = VecDeque::with_capacity(self.entries.len());
        for (t, p) in self.entries.drain(..) {
            if now.saturating_sub(t) > timeout {
                expired.push(p);
            } else {
                kept.push_back((t, p));
            }
        }
        self.entries = kept;
        expired
    }

    pub fn has_for(&self, dst: NodeId) -> bool {
        self.entries.iter().any(|(_, p)| p.data_dst() == Some(dst))
    }

    /// Removes and returns the packets for `dst`, oldest first.
    pub fn take_for(&mut self, dst: NodeId) -> Vec<Packet<M>> {
        let mut taken = Vec::new();
        let mut kept = VecDeque::with_capacity(self.entries.len());
        for (t, p) in self.entries.drain(..) {
            if p.data_dst() == Some(dst) {
                taken.push(p);
            } else {
                kept.push_back((t, p));
            }
        }
        self.entries = kept;
        taken
    }

    /// Distinct destinations with buffered packets, in buffer order.
    pub fn destinations(&self) -> Vec<NodeId> {
        let mut out: Vec<NodeId> = Vec::new();
        for (_, p) in &self.entries {
            if let Some(d) = p.data_dst() {
                if !out.contains(&d) {
                    out.push(d);
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, Clone)]
    struct Nop;

    impl RoutingMessage for Nop {
        fn tag(&self) -> RoutingTag {
            RoutingTag::Dsdv
        }
        fn size(&self) -> u32 {
            0
        }
    }

    fn pkt(uid: u64, dst: u32) -> Packet<Nop> {
        Packet::data(uid, FlowId { src: NodeId(0), dst: NodeId(dst), seq: uid }, SimTime::ZERO)
    }

    fn buf() -> SendBuffer<Nop> {
        SendBuffer::new(&SendBufferParams::default())
    }

    #[test]
    fn expire_on_empty_buffer() {
        assert!(buf().expire(SimTime::from_secs(100)).is_empty());
    }

    #[test]
    fn expire_threshold() {
        let mut b = buf();
        b.push(pkt(1, 1), SimTime::ZERO);
        b.push(pkt(2, 1), SimTime::from_millis(1_100));
        let gone = b.expire(SimTime::from_secs(31));
        assert_eq!(gone.iter().map(|p| p.uid).collect::<Vec<_>>(), vec![1]);
        assert_eq!(b.len(), 1);
        // Second packet has waited 29.9 s.
        assert!(b.expire(SimTime::from_secs(31)).is_empty());
    }

    #[test]
    fn overflow_evicts_oldest() {
        let mut b = SendBuffer::new(&SendBufferParams { capacity: 2, timeout_s: 30.0 });
        assert!(b.push(pkt(1, 1), SimTime::ZERO).is_none());
        assert!(b.push(pkt(2, 1), SimTime::ZERO).is_none());
        assert_eq!(b.push(pkt(3, 1), SimTime::ZERO).map(|p| p.uid), Some(1));
        assert_eq!(b.len(), 2);
    }

    #[test]
    fn take_for_is_fifo_per_destination() {
        let mut b = buf();
        for (uid, d) in [(1, 5), (2, 6), (3, 5)] {
            b.push(pkt(uid, d), SimTime::ZERO);
        }
        assert_eq!(b.destinations(), vec![NodeId(5), NodeId(6)]);
        assert_eq!(b.take_for(NodeId(5)).iter().map(|p| p.uid).collect::<Vec<_>>(), vec![1, 3]);
        assert!(!b.has_for(NodeId(5)));
        assert!(b.has_for(NodeId(6)));
    }

    #[test]
    fn data_packet_sizes() {
        let mut p = pkt(1, 2);
        assert_eq!(p.size(), 512);
        p.as_data_mut().unwrap().route = Some(SourceRoute::new(vec![NodeId(0), NodeId(1), NodeId(2)]));
        assert_eq!(p.size(), 524);
    }

    #[test]
    fn forward_data_spends_ttl() {
        let mut rng = RandomStream::new(0, crate::engine::StreamLabel::Protocol);
        let mut uids = UidSource::default();
        let mut out: Vec<Action<Nop, ()>> = Vec::new();
        let mut ctx = AgentCtx::new(NodeId(0), SimTime::ZERO, SimTime::ZERO, &mut rng, &mut uids, &mut out);
        let mut p = pkt(1, 2);
        p.ttl = 1;
        ctx.forward_data(p, NodeId(1));
        assert!(matches!(out[0], Action::Drop { reason: DropReason::Ttl, .. }));
    }
}
