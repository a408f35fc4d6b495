//! Ad-hoc On-demand Distance Vector.
//!
//! Routes are discovered by an expanding-ring RREQ flood and confirmed by a
//! RREP travelling back along reverse routes. Destination sequence numbers
//! order route information. Breaks, detected by MAC callback or hello loss,
//! invalidate routes and are reported to precursors with a RERR.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use crate::config::{secs, AodvParams, SimParams};
use crate::engine::SimTime;
use crate::metrics::{DropReason, RoutingTag};
use crate::node::NodeId;
use crate::routing::{
    Body, Ctx, DispatchOutcome, NextHop, Packet, RouteWitness, RoutingAgent, RoutingMessage, SendBuffer,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rreq {
    pub id: u32,
    pub orig: NodeId,
    pub orig_seq: u32,
    pub dest: NodeId,
    /// Last known sequence number of `dest`, if any.
    pub dest_seq: Option<u32>,
    pub hops: u32,
    pub ttl: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rrep {
    pub dest: NodeId,
    pub dest_seq: u32,
    /// The node that asked.
    pub orig: NodeId,
    pub hops: u32,
    pub lifetime: SimTime,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rerr {
    pub unreachable: Vec<(NodeId, u32)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hello {
    pub node: NodeId,
    pub seq: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AodvMsg {
    Rreq(Rreq),
    Rrep(Rrep),
    Rerr(Rerr),
    Hello(Hello),
}

impl RoutingMessage for AodvMsg {
    fn tag(&self) -> RoutingTag {
        match self {
            AodvMsg::Rreq(_) => RoutingTag::AodvRreq,
            AodvMsg::Rrep(_) => RoutingTag::AodvRrep,
            AodvMsg::Rerr(_) => RoutingTag::AodvRerr,
            AodvMsg::Hello(_) => RoutingTag::AodvHello,
        }
    }

    fn size(&self) -> u32 {
        match self {
            AodvMsg::Rreq(_) => 24,
            AodvMsg::Rrep(_) | AodvMsg::Hello(_) => 20,
            AodvMsg::Rerr(e) => 4 + 8 * e.unreachable.len() as u32,
        }
    }

    fn endpoints(&self) -> (Option<NodeId>, Option<NodeId>) {
        match self {
            AodvMsg::Rreq(q) => (Some(q.orig), Some(q.dest)),
            AodvMsg::Rrep(r) => (Some(r.dest), Some(r.orig)),
            AodvMsg::Rerr(_) => (None, None),
            AodvMsg::Hello(h) => (Some(h.node), None),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RouteState {
    Valid,
    Invalid,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AodvRoute {
    pub dest: NodeId,
    pub next_hop: NodeId,
    pub hops: u32,
    pub dest_seq: u32,
    pub seq_known: bool,
    pub lifetime: SimTime,
    pub state: RouteState,
    pub precursors: BTreeSet<NodeId>,
}

impl AodvRoute {
    pub fn is_valid(&self, now: SimTime) -> bool {
        self.state == RouteState::Valid && self.lifetime > now
    }
}

/// Route information offered to the table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RouteOffer {
    pub dest: NodeId,
    pub next_hop: NodeId,
    pub hops: u32,
    pub dest_seq: Option<u32>,
    pub lifetime: SimTime,
}

#[derive(Debug, Clone, Default)]
pub struct AodvTable {
    routes: BTreeMap<NodeId, AodvRoute>,
}

impl AodvTable {
    pub fn get(&self, dest: NodeId) -> Option<&AodvRoute> {
        self.routes.get(&dest)
    }

    pub fn valid(&self, dest: NodeId, now: SimTime) -> Option<&AodvRoute> {
        self.routes.get(&dest).filter(|r| r.is_valid(now))
    }

    pub fn routes(&self) -> impl Iterator<Item = &AodvRoute> {
        self.routes.values()
    }

    pub fn any_valid(&self, now: SimTime) -> bool {
        self.routes.values().any(|r| r.is_valid(now))
    }

    /// Offers route information. A route is never overwritten by one with a
    /// smaller sequence number; a valid route is replaced only by a newer
    /// sequence number, or an equal one with fewer hops. Returns whether the
    /// table changed its next hop or sequence number.
    pub fn offer(&mut self, o: RouteOffer, now: SimTime) -> bool {
        let Some(r) = self.routes.get_mut(&o.dest) else {
            self.routes.insert(
                o.dest,
                AodvRoute {
                    dest: o.dest,
                    next_hop: o.next_hop,
                    hops: o.hops,
                    dest_seq: o.dest_seq.unwrap_or(0),
                    seq_known: o.dest_seq.is_some(),
                    lifetime: o.lifetime,
                    state: RouteState::Valid,
                    precursors: BTreeSet::new(),
                },
            );
            return true;
        };
        let valid = r.is_valid(now);
        let accept = match o.dest_seq {
            Some(seq) if r.seq_known => {
                seq > r.dest_seq || (seq == r.dest_seq && (!valid || o.hops < r.hops))
            }
            Some(_) => true,
            None => !valid || (r.next_hop == o.next_hop && r.hops == o.hops),
        };
        if !accept {
            return false;
        }
        let same_path = valid && r.next_hop == o.next_hop && r.hops == o.hops;
        if let Some(seq) = o.dest_seq {
            r.dest_seq = seq;
            r.seq_known = true;
        }
        if !valid {
            r.precursors.clear();
        }
        r.next_hop = o.next_hop;
        r.hops = o.hops;
        r.lifetime = if same_path { r.lifetime.max(o.lifetime) } else { o.lifetime };
        r.state = RouteState::Valid;
        !same_path
    }

    /// Extends the lifetime of a valid route.
    pub fn refresh(&mut self, dest: NodeId, until: SimTime, now: SimTime) {
        if let Some(r) = self.routes.get_mut(&dest).filter(|r| r.is_valid(now)) {
            r.lifetime = r.lifetime.max(until);
        }
    }

    pub fn add_precursor(&mut self, dest: NodeId, p: NodeId) {
        if let Some(r) = self.routes.get_mut(&dest) {
            r.precursors.insert(p);
        }
    }

    /// Invalidates every valid route through `next_hop`, bumping its
    /// sequence number. Returns the `(dest, seq)` pairs that had precursors.
    pub fn invalidate_via(&mut self, next_hop: NodeId, now: SimTime) -> Vec<(NodeId, u32)> {
        let mut report = Vec::new();
        for r in self.routes.values_mut() {
            if r.next_hop == next_hop && r.is_valid(now) {
                r.state = RouteState::Invalid;
                r.dest_seq += 1;
                if !std::mem::take(&mut r.precursors).is_empty() {
                    report.push((r.dest, r.dest_seq));
                }
            }
        }
        report
    }
}

/// Expanding-ring schedule: `(ttl, wait)` per attempt. Retries at the full
/// network diameter back off binary-exponentially.
pub fn ring_schedule(p: &AodvParams) -> Vec<(u32, SimTime)> {
    let wait = |t: u32| 2.0 * f64::from(t) * p.node_traversal_time_s;
    let mut out = Vec::new();
    let mut ttl = p.ttl_start;
    while ttl <= p.ttl_threshold {
        out.push((ttl, secs(wait(ttl))));
        ttl += p.ttl_increment.max(1);
    }
    for k in 0..=p.rreq_retries {
        out.push((p.net_diameter, secs(wait(p.net_diameter) * f64::from(1u32 << k.min(16)))));
    }
    out
}

#[derive(Debug, Clone)]
pub enum AodvTimer {
    /// Hello, hello-loss check and send-buffer sweep.
    Tick,
    RreqTimeout { dest: NodeId, attempt: usize },
}

#[derive(Debug)]
pub struct AodvAgent {
    node: NodeId,
    params: AodvParams,
    schedule: Vec<(u32, SimTime)>,
    own_seq: u32,
    rreq_id: u32,
    table: AodvTable,
    seen: HashSet<(NodeId, u32)>,
    discoveries: BTreeMap<NodeId, usize>,
    buffer: SendBuffer<AodvMsg>,
    /// Last time a hello (or any packet) was heard from each neighbor.
    heard: BTreeMap<NodeId, SimTime>,
}

impl AodvAgent {
    pub fn table(&self) -> &AodvTable {
        &self.table
    }

    pub fn own_seq(&self) -> u32 {
        self.own_seq
    }

    fn active_timeout(&self) -> SimTime {
        secs(self.params.active_route_timeout_s)
    }

    fn hello_lifetime(&self) -> SimTime {
        secs(self.params.hello_interval_s * f64::from(self.params.allowed_hello_loss))
    }

    fn start_discovery(&mut self, ctx: &mut Ctx<'_, Self>, dest: NodeId) {
        if self.discoveries.contains_key(&dest) {
            return;
        }
        self.discoveries.insert(dest, 0);
        self.send_rreq(ctx, dest, 0);
    }

    fn send_rreq(&mut self, ctx: &mut Ctx<'_, Self>, dest: NodeId, attempt: usize) {
        let (ttl, wait) = self.schedule[attempt];
        self.own_seq += 1;
        self.rreq_id += 1;
        self.seen.insert((self.node, self.rreq_id));
        let dest_seq = self.table.get(dest).filter(|r| r.seq_known).map(|r| r.dest_seq);
        let q = Rreq { id: self.rreq_id, orig: self.node, orig_seq: self.own_seq, dest, dest_seq, hops: 0, ttl };
        ctx.originate(AodvMsg::Rreq(q), NextHop::Broadcast);
        ctx.set_timer(wait, AodvTimer::RreqTimeout { dest, attempt });
    }

    fn on_rreq_timeout(&mut self, ctx: &mut Ctx<'_, Self>, dest: NodeId, attempt: usize) {
        if self.discoveries.get(&dest) != Some(&attempt) {
            return;
        }
        if self.table.valid(dest, ctx.now()).is_some() {
            self.discoveries.remove(&dest);
            self.flush(ctx, dest);
            return;
        }
        if attempt + 1 < self.schedule.len() {
            self.discoveries.insert(dest, attempt + 1);
            self.send_rreq(ctx, dest, attempt + 1);
        } else {
            self.discoveries.remove(&dest);
            for p in self.buffer.take_for(dest) {
                ctx.drop(p, DropReason::NoRoute);
            }
        }
    }

    /// Sends every buffered packet for `dest` over its fresh route.
    fn flush(&mut self, ctx: &mut Ctx<'_, Self>, dest: NodeId) {
        let Some(nh) = self.table.valid(dest, ctx.now()).map(|r| r.next_hop) else { return };
        for p in self.buffer.take_for(dest) {
            ctx.send_data(p, nh);
        }
        let until = ctx.now() + self.active_timeout();
        self.table.refresh(dest, until, ctx.now());
    }

    fn send_rerr(&mut self, ctx: &mut Ctx<'_, Self>, unreachable: Vec<(NodeId, u32)>) {
        if !unreachable.is_empty() {
            ctx.originate(AodvMsg::Rerr(Rerr { unreachable }), NextHop::Broadcast);
        }
    }

    /// Invalidates routes through a lost neighbor and reports them.
    pub fn handle_link_break(&mut self, ctx: &mut Ctx<'_, Self>, lost: NodeId) {
        self.heard.remove(&lost);
        let report = self.table.invalidate_via(lost, ctx.now());
        self.send_rerr(ctx, report);
    }

    fn buffer_data(&mut self, ctx: &mut Ctx<'_, Self>, pkt: Packet<AodvMsg>) {
        let dst = pkt.data_dst().expect("data packet");
        if let Some(old) = self.buffer.push(pkt, ctx.now()) {
            ctx.drop(old, DropReason::IfqSendBuffer);
        }
        self.start_discovery(ctx, dst);
    }

    fn refresh_data_routes(&mut self, now: SimTime, src: NodeId, dst: NodeId, prev: Option<NodeId>) {
        let until = now + self.active_timeout();
        self.table.refresh(dst, until, now);
        self.table.refresh(src, until, now);
        if let Some(p) = prev {
            self.table.refresh(p, until, now);
        }
    }

    fn on_rreq(&mut self, ctx: &mut Ctx<'_, Self>, pkt: Packet<AodvMsg>, q: Rreq, from: NodeId) {
        let now = ctx.now();
        if q.orig == self.node {
            return;
        }
        let life = now + self.active_timeout();
        self.table.offer(RouteOffer { dest: from, next_hop: from, hops: 1, dest_seq: None, lifetime: life }, now);
        if !self.seen.insert((q.orig, q.id)) {
            return;
        }
        let reverse = RouteOffer { dest: q.orig, next_hop: from, hops: q.hops + 1, dest_seq: Some(q.orig_seq), lifetime: life };
        self.table.offer(reverse, now);
        self.table.refresh(q.orig, life, now);

        if q.dest == self.node {
            self.own_seq = self.own_seq.max(q.dest_seq.unwrap_or(0));
            let rep = Rrep { dest: self.node, dest_seq: self.own_seq, orig: q.orig, hops: 0, lifetime: self.active_timeout() };
            ctx.originate(AodvMsg::Rrep(rep), NextHop::Unicast(from));
            return;
        }
        if let Some(r) = self.table.valid(q.dest, now) {
            let fresh = r.seq_known && q.dest_seq.is_none_or(|s| r.dest_seq >= s);
            if fresh {
                let rep = Rrep {
                    dest: q.dest,
                    dest_seq: r.dest_seq,
                    orig: q.orig,
                    hops: r.hops,
                    lifetime: r.lifetime.saturating_sub(now),
                };
                let fwd_next = r.next_hop;
                self.table.add_precursor(q.dest, from);
                self.table.add_precursor(q.orig, fwd_next);
                ctx.originate(AodvMsg::Rrep(rep), NextHop::Unicast(from));
                return;
            }
        }
        if q.ttl > 1 {
            let known = self.table.get(q.dest).filter(|r| r.seq_known).map(|r| r.dest_seq);
            let dest_seq = match (q.dest_seq, known) {
                (Some(a), Some(b)) => Some(a.max(b)),
                (a, b) => a.or(b),
            };
            let fwd = Rreq { hops: q.hops + 1, ttl: q.ttl - 1, dest_seq, ..q };
            ctx.relay(pkt, AodvMsg::Rreq(fwd), NextHop::Broadcast);
        }
    }

    fn on_rrep(&mut self, ctx: &mut Ctx<'_, Self>, pkt: Packet<AodvMsg>, rep: Rrep, from: NodeId) {
        let now = ctx.now();
        let offer = RouteOffer {
            dest: rep.dest,
            next_hop: from,
            hops: rep.hops + 1,
            dest_seq: Some(rep.dest_seq),
            lifetime: now + rep.lifetime.max(SimTime::from_nanos(1)),
        };
        self.table.offer(offer, now);
        if rep.orig == self.node {
            if self.table.valid(rep.dest, now).is_some() {
                self.discoveries.remove(&rep.dest);
                self.flush(ctx, rep.dest);
            }
            return;
        }
        let Some(back) = self.table.valid(rep.orig, now).map(|r| r.next_hop) else {
            ctx.drop(pkt, DropReason::NoRoute);
            return;
        };
        self.table.add_precursor(rep.dest, back);
        self.table.add_precursor(rep.orig, from);
        let fwd = Rrep { hops: rep.hops + 1, ..rep };
        ctx.relay(pkt, AodvMsg::Rrep(fwd), NextHop::Unicast(back));
    }

    fn on_rerr(&mut self, ctx: &mut Ctx<'_, Self>, err: Rerr, from: NodeId) {
        let now = ctx.now();
        let mut report = Vec::new();
        for (dest, seq) in err.unreachable {
            let Some(r) = self.table.routes.get_mut(&dest) else { continue };
            if r.next_hop == from && r.is_valid(now) {
                r.state = RouteState::Invalid;
                r.dest_seq = r.dest_seq.max(seq);
                r.seq_known = true;
                if !std::mem::take(&mut r.precursors).is_empty() {
                    report.push((dest, r.dest_seq));
                }
            }
        }
        self.send_rerr(ctx, report);
    }

    fn on_hello(&mut self, ctx: &mut Ctx<'_, Self>, h: Hello) {
        let now = ctx.now();
        let offer = RouteOffer {
            dest: h.node,
            next_hop: h.node,
            hops: 1,
            dest_seq: Some(h.seq),
            lifetime: now + self.hello_lifetime(),
        };
        self.table.offer(offer, now);
        self.table.refresh(h.node, now + self.hello_lifetime(), now);
    }

    fn tick(&mut self, ctx: &mut Ctx<'_, Self>) {
        let now = ctx.now();
        for p in self.buffer.expire(now) {
            ctx.drop(p, DropReason::Timeout);
        }
        if self.params.hello_enabled {
            let limit = self.hello_lifetime();
            let lost: Vec<NodeId> =
                self.heard.iter().filter(|(_, &t)| now.saturating_sub(t) > limit).map(|(&n, _)| n).collect();
            for n in lost {
                self.heard.remove(&n);
                if self.table.routes().any(|r| r.next_hop == n && r.is_valid(now)) {
                    self.handle_link_break(ctx, n);
                }
            }
            if self.table.any_valid(now) {
                ctx.originate(AodvMsg::Hello(Hello { node: self.node, seq: self.own_seq }), NextHop::Broadcast);
            }
        }
        ctx.set_timer(secs(self.params.hello_interval_s), AodvTimer::Tick);
    }
}

impl RoutingAgent for AodvAgent {
    type Msg = AodvMsg;
    type Timer = AodvTimer;

    fn new(node: NodeId, params: &SimParams) -> Self {
        AodvAgent {
            node,
            params: params.aodv.clone(),
            schedule: ring_schedule(&params.aodv),
            own_seq: 0,
            rreq_id: 0,
            table: AodvTable::default(),
            seen: HashSet::new(),
            discoveries: BTreeMap::new(),
            buffer: SendBuffer::new(&params.sendbuf),
            heard: BTreeMap::new(),
        }
    }

    fn start(&mut self, ctx: &mut Ctx<'_, Self>) {
        let offset = ctx.rng().draw_time(SimTime::ZERO, secs(self.params.hello_interval_s));
        ctx.set_timer(offset, AodvTimer::Tick);
    }

    fn on_data_from_app(&mut self, ctx: &mut Ctx<'_, Self>, pkt: Packet<AodvMsg>) -> DispatchOutcome {
        let now = ctx.now();
        let dst = pkt.data_dst().expect("data packet");
        match self.table.valid(dst, now).map(|r| r.next_hop) {
            Some(nh) => {
                self.refresh_data_routes(now, self.node, dst, None);
                ctx.send_data(pkt, nh);
                DispatchOutcome::Forwarded
            }
            None => {
                self.buffer_data(ctx, pkt);
                DispatchOutcome::Buffered
            }
        }
    }

    fn on_packet_from_net(&mut self, ctx: &mut Ctx<'_, Self>, pkt: Packet<AodvMsg>, from: NodeId) {
        let now = ctx.now();
        self.heard.insert(from, now);
        match pkt.body {
            Body::Data(ref d) => {
                let (src, dst) = (d.flow.src, d.flow.dst);
                self.refresh_data_routes(now, src, dst, Some(from));
                if dst == self.node {
                    ctx.deliver(pkt);
                    return;
                }
                match self.table.valid(dst, now).map(|r| r.next_hop) {
                    Some(nh) => ctx.forward_data(pkt, nh),
                    None => {
                        let seq = self.table.get(dst).map_or(0, |r| r.dest_seq);
                        ctx.drop(pkt, DropReason::NoRoute);
                        self.send_rerr(ctx, vec![(dst, seq)]);
                    }
                }
            }
            Body::Routing(ref m) => match m.clone() {
                AodvMsg::Rreq(q) => self.on_rreq(ctx, pkt, q, from),
                AodvMsg::Rrep(r) => self.on_rrep(ctx, pkt, r, from),
                AodvMsg::Rerr(e) => self.on_rerr(ctx, e, from),
                AodvMsg::Hello(h) => self.on_hello(ctx, h),
            },
        }
    }

    fn on_link_break(&mut self, ctx: &mut Ctx<'_, Self>, next_hop: NodeId, pkt: Packet<AodvMsg>) {
        if self.params.link_layer_detection {
            self.handle_link_break(ctx, next_hop);
        }
        match pkt.as_data() {
            Some(d) if d.flow.src == self.node && self.params.link_layer_detection => self.buffer_data(ctx, pkt),
            _ => ctx.drop(pkt, DropReason::Callback),
        }
    }

    fn on_timer(&mut self, ctx: &mut Ctx<'_, Self>, timer: AodvTimer) {
        match timer {
            AodvTimer::Tick => self.tick(ctx),
            AodvTimer::RreqTimeout { dest, attempt } => self.on_rreq_timeout(ctx, dest, attempt),
        }
    }

    fn buffered_data(&self) -> usize {
        self.buffer.len()
    }

    fn route_witness(&self, dst: NodeId, now: SimTime) -> Option<RouteWitness> {
        self.table
            .valid(dst, now)
            .filter(|r| r.seq_known)
            .map(|r| RouteWitness { dest_seq: r.dest_seq, hops: r.hops })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{RandomStream, StreamLabel};
    use crate::routing::{Action, AgentCtx, FlowId, UidSource};

    #[test]
    fn ring_schedule_ttls_and_waits() {
        let s = ring_schedule(&AodvParams::default());
        let ttls: Vec<u32> = s.iter().map(|x| x.0).collect();
        assert_eq!(ttls, vec![1, 3, 5, 7, 35, 35, 35]);
        let waits: Vec<SimTime> = s.iter().map(|x| x.1).collect();
        assert_eq!(
            waits,
            [80, 240, 400, 560, 2800, 5600, 11200].map(SimTime::from_millis).to_vec()
        );
    }

    fn offer(dest: u32, nh: u32, hops: u32, seq: Option<u32>) -> RouteOffer {
        RouteOffer { dest: NodeId(dest), next_hop: NodeId(nh), hops, dest_seq: seq, lifetime: SimTime::from_secs(10) }
    }

    #[test]
    fn valid_route_replacement_rules() {
        let now = SimTime::ZERO;
        let mut t = AodvTable::default();
        assert!(t.offer(offer(5, 1, 3, Some(4)), now));
        assert!(!t.offer(offer(5, 2, 4, Some(4)), now));
        assert!(!t.offer(offer(5, 2, 1, Some(3)), now));
        assert!(t.offer(offer(5, 2, 2, Some(4)), now));
        assert!(t.offer(offer(5, 3, 6, Some(5)), now));
        let r = t.get(NodeId(5)).unwrap();
        assert_eq!((r.next_hop, r.hops, r.dest_seq), (NodeId(3), 6, 5));
    }

    #[test]
    fn invalid_route_never_takes_older_sequence() {
        let now = SimTime::ZERO;
        let mut t = AodvTable::default();
        t.offer(offer(5, 1, 3, Some(4)), now);
        t.add_precursor(NodeId(5), NodeId(9));
        assert_eq!(t.invalidate_via(NodeId(1), now), vec![(NodeId(5), 5)]);
        assert!(t.valid(NodeId(5), now).is_none());
        assert!(!t.offer(offer(5, 2, 1, Some(4)), now));
        assert!(t.offer(offer(5, 2, 7, Some(5)), now));
    }

    #[test]
    fn break_without_routes_reports_nothing() {
        let mut t = AodvTable::default();
        t.offer(offer(5, 1, 3, Some(4)), SimTime::ZERO);
        assert!(t.invalidate_via(NodeId(2), SimTime::ZERO).is_empty());
        assert!(t.valid(NodeId(5), SimTime::ZERO).is_some());
    }

    struct Harness {
        rng: RandomStream,
        uids: UidSource,
        out: Vec<Action<AodvMsg, AodvTimer>>,
    }

    impl Harness {
        fn new() -> Self {
            Harness { rng: RandomStream::new(0, StreamLabel::Protocol), uids: UidSource::default(), out: Vec::new() }
        }

        fn ctx(&mut self, node: u32, now: SimTime) -> AgentCtx<'_, AodvMsg, AodvTimer> {
            AgentCtx::new(NodeId(node), now, SimTime::from_millis(10), &mut self.rng, &mut self.uids, &mut self.out)
        }

        fn sent(&mut self) -> Vec<(Packet<AodvMsg>, NextHop)> {
            self.out
                .drain(..)
                .filter_map(|a| match a {
                    Action::Transmit { pkt, next_hop, .. } => Some((pkt, next_hop)),
                    _ => None,
                })
                .collect()
        }
    }

    fn agents(n: u32) -> Vec<AodvAgent> {
        (0..n).map(|i| AodvAgent::new(NodeId(i), &SimParams::default())).collect()
    }

    #[test]
    fn three_node_chain_discovery() {
        // A=0, B=1, C=2 in a line.
        let mut ag = agents(3);
        let mut h = Harness::new();
        let t = SimTime::from_secs(1);
        let data = Packet::data(100, FlowId { src: NodeId(0), dst: NodeId(2), seq: 0 }, t);
        assert_eq!(ag[0].on_data_from_app(&mut h.ctx(0, t), data), DispatchOutcome::Buffered);
        let (rreq, nh) = h.sent().pop().unwrap();
        assert_eq!(nh, NextHop::Broadcast);
        assert!(matches!(rreq.as_routing(), Some(AodvMsg::Rreq(q)) if q.ttl == 1));

        // TTL 1 reaches B, which must not rebroadcast.
        ag[1].on_packet_from_net(&mut h.ctx(1, t), rreq, NodeId(0));
        assert!(h.sent().is_empty());

        // First ring times out; ttl 3 attempt.
        ag[0].on_timer(&mut h.ctx(0, t), AodvTimer::RreqTimeout { dest: NodeId(2), attempt: 0 });
        let (rreq, _) = h.sent().pop().unwrap();
        ag[1].on_packet_from_net(&mut h.ctx(1, t), rreq, NodeId(0));
        let (fwd, _) = h.sent().pop().unwrap();
        ag[2].on_packet_from_net(&mut h.ctx(2, t), fwd, NodeId(1));
        let (rrep, nh) = h.sent().pop().unwrap();
        assert_eq!(nh, NextHop::Unicast(NodeId(1)));
        ag[1].on_packet_from_net(&mut h.ctx(1, t), rrep, NodeId(2));
        let (rrep, nh) = h.sent().pop().unwrap();
        assert_eq!(nh, NextHop::Unicast(NodeId(0)));
        ag[0].on_packet_from_net(&mut h.ctx(0, t), rrep, NodeId(1));
        let flushed = h.sent();
        assert_eq!(flushed.len(), 1);
        assert_eq!(flushed[0].1, NextHop::Unicast(NodeId(1)));

        let a = ag[0].table().valid(NodeId(2), t).unwrap();
        assert_eq!((a.next_hop, a.hops), (NodeId(1), 2));
        let b = ag[1].table().valid(NodeId(2), t).unwrap();
        assert_eq!((b.next_hop, b.hops), (NodeId(2), 1));
        assert_eq!(ag[0].buffered_data(), 0);
    }

    #[test]
    fn duplicate_rreq_is_discarded() {
        let mut ag = agents(2);
        let mut h = Harness::new();
        let t = SimTime::from_secs(1);
        let q = Rreq { id: 1, orig: NodeId(7), orig_seq: 1, dest: NodeId(9), dest_seq: None, hops: 0, ttl: 5 };
        let pkt = Packet { uid: 1, ttl: 255, created: t, body: Body::Routing(AodvMsg::Rreq(q)) };
        ag[1].on_packet_from_net(&mut h.ctx(1, t), pkt.clone(), NodeId(3));
        assert_eq!(h.sent().len(), 1);
        ag[1].on_packet_from_net(&mut h.ctx(1, t), pkt, NodeId(4));
        assert!(h.sent().is_empty());
    }

    #[test]
    fn fresh_intermediate_replies_itself() {
        let mut ag = agents(2);
        let mut h = Harness::new();
        let t = SimTime::from_secs(1);
        ag[1].table.offer(offer(9, 5, 2, Some(8)), t);
        let q = Rreq { id: 1, orig: NodeId(7), orig_seq: 1, dest: NodeId(9), dest_seq: Some(6), hops: 0, ttl: 5 };
        let pkt = Packet { uid: 1, ttl: 255, created: t, body: Body::Routing(AodvMsg::Rreq(q)) };
        ag[1].on_packet_from_net(&mut h.ctx(1, t), pkt, NodeId(7));
        let sent = h.sent();
        assert_eq!(sent.len(), 1);
        assert_eq!(sent[0].1, NextHop::Unicast(NodeId(7)));
        assert!(matches!(sent[0].0.as_routing(), Some(AodvMsg::Rrep(r)) if r.dest_seq == 8 && r.hops == 2));
    }

    #[test]
    fn break_sends_rerr_and_source_rebuffers() {
        let mut ag = agents(3);
        let mut h = Harness::new();
        let t = SimTime::from_secs(1);
        // B (1) routes to C (2) with A (0) as precursor.
        ag[1].table.offer(offer(2, 2, 1, Some(3)), t);
        ag[1].table.add_precursor(NodeId(2), NodeId(0));
        let data = Packet::data(5, FlowId { src: NodeId(0), dst: NodeId(2), seq: 0 }, t);
        ag[1].on_link_break(&mut h.ctx(1, t), NodeId(2), data);
        let r = ag[1].table().get(NodeId(2)).unwrap();
        assert_eq!((r.state, r.dest_seq), (RouteState::Invalid, 4));
        let mut acts = std::mem::take(&mut h.out);
        assert!(acts.iter().any(|a| matches!(a, Action::Drop { reason: DropReason::Callback, .. })));
        let rerr = acts
            .drain(..)
            .find_map(|a| match a {
                Action::Transmit { pkt, .. } => Some(pkt),
                _ => None,
            })
            .unwrap();
        // A routes via B and drops its route on the RERR.
        ag[0].table.offer(offer(2, 1, 2, Some(3)), t);
        ag[0].on_packet_from_net(&mut h.ctx(0, t), rerr, NodeId(1));
        assert!(ag[0].table().valid(NodeId(2), t).is_none());
        assert_eq!(ag[0].table().get(NodeId(2)).unwrap().dest_seq, 4);

        // At the source the failed packet is buffered for rediscovery.
        h.out.clear();
        ag[0].table.offer(offer(2, 1, 2, Some(4)), t);
        let data = Packet::data(6, FlowId { src: NodeId(0), dst: NodeId(2), seq: 1 }, t);
        ag[0].on_link_break(&mut h.ctx(0, t), NodeId(1), data);
        assert_eq!(ag[0].buffered_data(), 1);
    }

    #[test]
    fn idle_node_sends_no_hello() {
        let mut ag = agents(1);
        let mut h = Harness::new();
        ag[0].on_timer(&mut h.ctx(0, SimTime::from_secs(1)), AodvTimer::Tick);
        assert!(h.sent().is_empty());
    }

    #[test]
    fn hello_installs_neighbor_route_and_skips_discovery() {
        let mut ag = agents(2);
        let mut h = Harness::new();
        let t = SimTime::from_secs(1);
        let pkt = Packet { uid: 1, ttl: 255, created: t, body: Body::Routing(AodvMsg::Hello(Hello { node: NodeId(1), seq: 3 })) };
        ag[0].on_packet_from_net(&mut h.ctx(0, t), pkt, NodeId(1));
        let r = ag[0].table().valid(NodeId(1), t).unwrap();
        assert_eq!((r.hops, r.next_hop), (1, NodeId(1)));
        let data = Packet::data(2, FlowId { src: NodeId(0), dst: NodeId(1), seq: 0 }, t);
        assert_eq!(ag[0].on_data_from_app(&mut h.ctx(0, t), data), DispatchOutcome::Forwarded);
        assert!(h.sent().iter().all(|(p, _)| p.is_data()));
    }

    #[test]
    fn hello_loss_triggers_break() {
        let mut ag = agents(2);
        let mut h = Harness::new();
        let t = SimTime::from_secs(1);
        let pkt = Packet { uid: 1, ttl: 255, created: t, body: Body::Routing(AodvMsg::Hello(Hello { node: NodeId(1), seq: 3 })) };
        ag[0].on_packet_from_net(&mut h.ctx(0, t), pkt, NodeId(1));
        ag[0].table.offer(offer(9, 1, 3, Some(1)), t);
        ag[0].on_timer(&mut h.ctx(0, SimTime::from_millis(2_500)), AodvTimer::Tick);
        assert!(ag[0].table().valid(NodeId(9), SimTime::from_millis(2_500)).is_some());
        ag[0].on_timer(&mut h.ctx(0, SimTime::from_millis(3_100)), AodvTimer::Tick);
        assert!(ag[0].table().valid(NodeId(9), SimTime::from_millis(3_100)).is_none());
    }

    #[test]
    fn isolated_source_drops_after_schedule() {
        let mut ag = agents(1);
        let mut h = Harness::new();
        let t = SimTime::from_secs(1);
        let data = Packet::data(1, FlowId { src: NodeId(0), dst: NodeId(4), seq: 0 }, t);
        ag[0].on_data_from_app(&mut h.ctx(0, t), data);
        for attempt in 0..7 {
            ag[0].on_timer(&mut h.ctx(0, t), AodvTimer::RreqTimeout { dest: NodeId(4), attempt });
        }
        assert_eq!(ag[0].buffered_data(), 0);
        assert!(h.out.iter().any(|a| matches!(a, Action::Drop { reason: DropReason::NoRoute, .. })));
        let rreqs = h.out.iter().filter(|a| matches!(a, Action::Transmit { .. })).count();
        assert_eq!(rreqs, 7);
    }
}
