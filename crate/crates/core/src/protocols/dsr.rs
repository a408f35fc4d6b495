//! Dynamic Source Routing.
//!
//! Sources stamp the whole route into each data packet. Routes come from a
//! per-node cache fed by replies, overheard request records and forwarded
//! data headers; a miss starts a discovery, first non-propagating, then
//! flooded with a doubling timeout. Broken links are reported back to the
//! source with a route error and pruned from every cache it crosses. Nothing
//! is sent periodically.

use std::collections::{BTreeMap, HashSet, VecDeque};

use crate::config::{secs, DsrParams, SimParams};
use crate::engine::SimTime;
use crate::metrics::{DropReason, RoutingTag};
use crate::node::NodeId;
use crate::routing::{Body, Ctx, DispatchOutcome, NextHop, Packet, RoutingAgent, RoutingMessage, SendBuffer, SourceRoute};

/// Hop limit of a propagating request.
pub const MAX_ROUTE_LEN: u32 = 64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DsrRreq {
    pub id: u32,
    pub orig: NodeId,
    pub target: NodeId,
    /// Nodes traversed so far, originator first.
    pub record: Vec<NodeId>,
    pub ttl: u32,
}

/// Travels source-routed along `back`, from the replier to the originator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DsrRrep {
    pub route: Vec<NodeId>,
    pub back: SourceRoute,
}

/// Link `from -> to` is broken; travels along `back` to the data source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DsrRerr {
    pub from: NodeId,
    pub to: NodeId,
    pub back: SourceRoute,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DsrMsg {
    Rreq(DsrRreq),
    Rrep(DsrRrep),
    Rerr(DsrRerr),
}

impl RoutingMessage for DsrMsg {
    fn tag(&self) -> RoutingTag {
        match self {
            DsrMsg::Rreq(_) => RoutingTag::DsrRreq,
            DsrMsg::Rrep(_) => RoutingTag::DsrRrep,
            DsrMsg::Rerr(_) => RoutingTag::DsrRerr,
        }
    }

    fn size(&self) -> u32 {
        let n = |v: &[NodeId]| 4 * v.len() as u32;
        match self {
            DsrMsg::Rreq(q) => 16 + n(&q.record),
            DsrMsg::Rrep(r) => 16 + n(&r.route) + n(&r.back.hops),
            DsrMsg::Rerr(e) => 20 + n(&e.back.hops),
        }
    }

    fn endpoints(&self) -> (Option<NodeId>, Option<NodeId>) {
        match self {
            DsrMsg::Rreq(q) => (Some(q.orig), Some(q.target)),
            DsrMsg::Rrep(r) => (r.back.hops.first().copied(), r.back.hops.last().copied()),
            DsrMsg::Rerr(e) => (Some(e.from), e.back.hops.last().copied()),
        }
    }
}

fn has_duplicates(path: &[NodeId]) -> bool {
    let mut seen = HashSet::with_capacity(path.len());
    !path.iter().all(|n| seen.insert(*n))
}

fn contains_link(path: &[NodeId], a: NodeId, b: NodeId) -> bool {
    path.windows(2).any(|w| w[0] == a && w[1] == b)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CachedRoute {
    pub path: Vec<NodeId>,
    pub installed: SimTime,
}

/// Source routes starting at the owning node, FIFO-evicted.
#[derive(Debug, Clone)]
pub struct RouteCache {
    owner: NodeId,
    routes: VecDeque<CachedRoute>,
    capacity: usize,
    expiry: SimTime,
}

impl RouteCache {
    pub fn new(owner: NodeId, capacity: usize, expiry: SimTime) -> Self {
        RouteCache { owner, routes: VecDeque::new(), capacity, expiry }
    }

    pub fn routes(&self) -> impl Iterator<Item = &CachedRoute> {
        self.routes.iter()
    }

    pub fn len(&self) -> usize {
        self.routes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.routes.is_empty()
    }

    /// Adds a route; it must start at the owner, have at least one hop and
    /// no repeated node. Re-learning a known route refreshes it.
    pub fn add(&mut self, path: Vec<NodeId>, now: SimTime) -> bool {
        if path.len() < 2 || path[0] != self.owner || has_duplicates(&path) {
            return false;
        }
        if let Some(r) = self.routes.iter_mut().find(|r| r.path == path) {
            r.installed = now;
            return true;
        }
        if self.routes.len() >= self.capacity {
            self.routes.pop_front();
        }
        self.routes.push_back(CachedRoute { path, installed: now });
        true
    }

    /// Shortest unexpired route to `dst`, as a path ending at `dst`.
    pub fn find(&self, dst: NodeId, now: SimTime) -> Option<Vec<NodeId>> {
        self.routes
            .iter()
            .filter(|r| now.saturating_sub(r.installed) <= self.expiry)
            .filter_map(|r| r.path.iter().position(|&n| n == dst).map(|i| &r.path[..=i]))
            .min_by_key(|p| p.len())
            .map(<[NodeId]>::to_vec)
    }

    /// Removes every route using link `a -> b`. Returns how many went.
    pub fn prune_link(&mut self, a: NodeId, b: NodeId) -> usize {
        let before = self.routes.len();
        self.routes.retain(|r| !contains_link(&r.path, a, b));
        before - self.routes.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Discovery {
    attempt: u32,
    timeout: SimTime,
}

#[derive(Debug, Clone)]
pub enum DsrTimer {
    Discovery { target: NodeId, attempt: u32 },
    Sweep,
}

#[derive(Debug)]
pub struct DsrAgent {
    node: NodeId,
    params: DsrParams,
    cache: RouteCache,
    buffer: SendBuffer<DsrMsg>,
    rreq_id: u32,
    seen: HashSet<(NodeId, u32)>,
    answered: HashSet<(NodeId, u32, Vec<NodeId>)>,
    discoveries: BTreeMap<NodeId, Discovery>,
    sweep_armed: bool,
    /// Last route error sent per (source, broken next hop).
    recent_errors: BTreeMap<(NodeId, NodeId), SimTime>,
}

impl DsrAgent {
    pub fn cache(&self) -> &RouteCache {
        &self.cache
    }

    fn learn(&mut self, path: Vec<NodeId>, now: SimTime) {
        self.cache.add(path, now);
    }

    /// Learns both directions of `path` as seen from this node.
    fn learn_through(&mut self, path: &[NodeId], now: SimTime) {
        if let Some(i) = path.iter().position(|&n| n == self.node) {
            self.learn(path[i..].to_vec(), now);
            let mut back: Vec<NodeId> = path[..=i].to_vec();
            back.reverse();
            self.learn(back, now);
        }
    }

    fn stamp_and_send(&mut self, ctx: &mut Ctx<'_, Self>, mut pkt: Packet<DsrMsg>, path: Vec<NodeId>) {
        let next = path[1];
        if let Some(d) = pkt.as_data_mut() {
            d.route = Some(SourceRoute::new(path));
        }
        ctx.send_data(pkt, next);
    }

    fn buffer_data(&mut self, ctx: &mut Ctx<'_, Self>, mut pkt: Packet<DsrMsg>) {
        let dst = pkt.data_dst().expect("data packet");
        if let Some(d) = pkt.as_data_mut() {
            d.route = None;
        }
        if let Some(old) = self.buffer.push(pkt, ctx.now()) {
            ctx.drop(old, DropReason::IfqSendBuffer);
        }
        if !self.sweep_armed {
            self.sweep_armed = true;
            ctx.set_timer(SimTime::from_secs(1), DsrTimer::Sweep);
        }
        if !self.discoveries.contains_key(&dst) {
            let d = Discovery { attempt: 0, timeout: secs(self.params.nonprop_timeout_s) };
            self.discoveries.insert(dst, d);
            self.send_rreq(ctx, dst, 1, d);
        }
    }

    fn send_rreq(&mut self, ctx: &mut Ctx<'_, Self>, target: NodeId, ttl: u32, d: Discovery) {
        self.rreq_id += 1;
        self.seen.insert((self.node, self.rreq_id));
        let q = DsrRreq { id: self.rreq_id, orig: self.node, target, record: vec![self.node], ttl };
        ctx.originate(DsrMsg::Rreq(q), NextHop::Broadcast);
        ctx.set_timer(d.timeout, DsrTimer::Discovery { target, attempt: d.attempt });
    }

    fn on_discovery_timeout(&mut self, ctx: &mut Ctx<'_, Self>, target: NodeId, attempt: u32) {
        let Some(d) = self.discoveries.get(&target).copied() else { return };
        if d.attempt != attempt {
            return;
        }
        if self.cache.find(target, ctx.now()).is_some() {
            self.discoveries.remove(&target);
            self.flush(ctx, target);
            return;
        }
        if !self.buffer.has_for(target) {
            self.discoveries.remove(&target);
            return;
        }
        let timeout = if attempt == 0 {
            secs(self.params.rreq_timeout_s)
        } else {
            d.timeout.mul(2).min(secs(self.params.max_rreq_timeout_s))
        };
        let next = Discovery { attempt: attempt + 1, timeout };
        self.discoveries.insert(target, next);
        self.send_rreq(ctx, target, MAX_ROUTE_LEN, next);
    }

    fn flush(&mut self, ctx: &mut Ctx<'_, Self>, target: NodeId) {
        let Some(path) = self.cache.find(target, ctx.now()) else { return };
        for p in self.buffer.take_for(target) {
            self.stamp_and_send(ctx, p, path.clone());
        }
    }

    fn on_rreq(&mut self, ctx: &mut Ctx<'_, Self>, pkt: Packet<DsrMsg>, q: DsrRreq) {
        let now = ctx.now();
        if q.orig == self.node || q.record.contains(&self.node) {
            return;
        }
        let mut back: Vec<NodeId> = q.record.clone();
        back.push(self.node);
        back.reverse();
        self.learn(back.clone(), now);

        if q.target == self.node {
            // Every distinct path is answered; the originator keeps the first.
            if !self.answered.insert((q.orig, q.id, q.record.clone())) {
                return;
            }
            let mut route = q.record.clone();
            route.push(self.node);
            let rep = DsrRrep { route, back: SourceRoute::new(back.clone()) };
            ctx.originate(DsrMsg::Rrep(rep), NextHop::Unicast(back[1]));
            return;
        }
        if !self.seen.insert((q.orig, q.id)) {
            return;
        }
        if let Some(suffix) = self.cache.find(q.target, now) {
            let mut route = q.record.clone();
            route.extend_from_slice(&suffix);
            if !has_duplicates(&route) {
                let rep = DsrRrep { route, back: SourceRoute::new(back.clone()) };
                ctx.originate(DsrMsg::Rrep(rep), NextHop::Unicast(back[1]));
                return;
            }
        }
        if q.ttl > 1 {
            let mut record = q.record.clone();
            record.push(self.node);
            let fwd = DsrRreq { record, ttl: q.ttl - 1, ..q };
            ctx.relay(pkt, DsrMsg::Rreq(fwd), NextHop::Broadcast);
        }
    }

    fn on_rrep(&mut self, ctx: &mut Ctx<'_, Self>, pkt: Packet<DsrMsg>, mut rep: DsrRrep) {
        let now = ctx.now();
        self.learn_through(&rep.route.clone(), now);
        rep.back.cursor += 1;
        if rep.back.current() != Some(self.node) {
            return;
        }
        match rep.back.next_hop() {
            Some(next) => ctx.relay(pkt, DsrMsg::Rrep(rep), NextHop::Unicast(next)),
            None => {
                let target = *rep.route.last().expect("non-empty route");
                if self.discoveries.remove(&target).is_some() || self.buffer.has_for(target) {
                    self.flush(ctx, target);
                }
            }
        }
    }

    fn on_rerr(&mut self, ctx: &mut Ctx<'_, Self>, pkt: Packet<DsrMsg>, mut err: DsrRerr) {
        self.cache.prune_link(err.from, err.to);
        err.back.cursor += 1;
        if let Some(next) = err.back.next_hop() {
            ctx.relay(pkt, DsrMsg::Rerr(err), NextHop::Unicast(next));
        }
    }

    fn on_data(&mut self, ctx: &mut Ctx<'_, Self>, mut pkt: Packet<DsrMsg>) {
        let now = ctx.now();
        let Some(route) = pkt.as_data_mut().and_then(|d| d.route.as_mut()) else {
            ctx.drop(pkt, DropReason::NoRoute);
            return;
        };
        route.cursor += 1;
        if route.current() != Some(self.node) {
            ctx.drop(pkt, DropReason::NoRoute);
            return;
        }
        let hops = route.hops.clone();
        let next = route.next_hop();
        self.learn_through(&hops, now);
        match next {
            None => ctx.deliver(pkt),
            Some(nh) => ctx.forward_data(pkt, nh),
        }
    }
}

impl RoutingAgent for DsrAgent {
    type Msg = DsrMsg;
    type Timer = DsrTimer;

    fn new(node: NodeId, params: &SimParams) -> Self {
        DsrAgent {
            node,
            params: params.dsr.clone(),
            cache: RouteCache::new(node, params.dsr.cache_capacity, secs(params.dsr.route_expiry_s)),
            buffer: SendBuffer::new(&params.sendbuf),
            rreq_id: 0,
            seen: HashSet::new(),
            answered: HashSet::new(),
            discoveries: BTreeMap::new(),
            sweep_armed: false,
            recent_errors: BTreeMap::new(),
        }
    }

    fn start(&mut self, _ctx: &mut Ctx<'_, Self>) {}

    fn on_data_from_app(&mut self, ctx: &mut Ctx<'_, Self>, pkt: Packet<DsrMsg>) -> DispatchOutcome {
        let dst = pkt.data_dst().expect("data packet");
        match self.cache.find(dst, ctx.now()) {
            Some(path) => {
                self.stamp_and_send(ctx, pkt, path);
                DispatchOutcome::Forwarded
            }
            None => {
                self.buffer_data(ctx, pkt);
                DispatchOutcome::Buffered
            }
        }
    }

    fn on_packet_from_net(&mut self, ctx: &mut Ctx<'_, Self>, pkt: Packet<DsrMsg>, _from: NodeId) {
        match pkt.body {
            Body::Data(_) => self.on_data(ctx, pkt),
            Body::Routing(ref m) => match m.clone() {
                DsrMsg::Rreq(q) => self.on_rreq(ctx, pkt, q),
                DsrMsg::Rrep(r) => self.on_rrep(ctx, pkt, r),
                DsrMsg::Rerr(e) => self.on_rerr(ctx, pkt, e),
            },
        }
    }

    fn on_link_break(&mut self, ctx: &mut Ctx<'_, Self>, next_hop: NodeId, pkt: Packet<DsrMsg>) {
        let now = ctx.now();
        self.cache.prune_link(self.node, next_hop);
        let Some(route) = pkt.as_data().and_then(|d| d.route.clone()) else {
            ctx.drop(pkt, DropReason::Callback);
            return;
        };
        let src = route.hops[0];
        if src == self.node {
            let dst = pkt.data_dst().expect("data packet");
            match self.cache.find(dst, now) {
                Some(path) => self.stamp_and_send(ctx, pkt, path),
                None => self.buffer_data(ctx, pkt),
            }
            return;
        }
        ctx.drop(pkt, DropReason::Callback);
        let key = (src, next_hop);
        if self.recent_errors.get(&key).is_some_and(|&t| now.saturating_sub(t) < SimTime::from_secs(1)) {
            return;
        }
        self.recent_errors.insert(key, now);
        let mut back: Vec<NodeId> = route.hops[..=route.cursor].to_vec();
        back.reverse();
        let next = back[1];
        let err = DsrRerr { from: self.node, to: next_hop, back: SourceRoute::new(back) };
        ctx.originate(DsrMsg::Rerr(err), NextHop::Unicast(next));
    }

    fn on_timer(&mut self, ctx: &mut Ctx<'_, Self>, timer: DsrTimer) {
        match timer {
            DsrTimer::Discovery { target, attempt } => self.on_discovery_timeout(ctx, target, attempt),
            DsrTimer::Sweep => {
                for p in self.buffer.expire(ctx.now()) {
                    ctx.drop(p, DropReason::Timeout);
                }
                if self.buffer.is_empty() {
                    self.sweep_armed = false;
                } else {
                    ctx.set_timer(SimTime::from_secs(1), DsrTimer::Sweep);
                }
            }
        }
    }

    fn buffered_data(&self) -> usize {
        self.buffer.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{RandomStream, StreamLabel};
    use crate::routing::{Action, AgentCtx, FlowId, UidSource};

    fn ids(v: &[u32]) -> Vec<NodeId> {
        v.iter().map(|&i| NodeId(i)).collect()
    }

    #[test]
    fn cache_rejects_loops_and_foreign_routes() {
        let mut c = RouteCache::new(NodeId(0), 64, SimTime::from_secs(300));
        assert!(!c.add(ids(&[0, 1, 0]), SimTime::ZERO));
        assert!(!c.add(ids(&[1, 2]), SimTime::ZERO));
        assert!(!c.add(ids(&[0]), SimTime::ZERO));
        assert!(c.add(ids(&[0, 1, 2]), SimTime::ZERO));
        assert_eq!(c.len(), 1);
    }

    #[test]
    fn cache_prefix_and_shortest() {
        let mut c = RouteCache::new(NodeId(0), 64, SimTime::from_secs(300));
        c.add(ids(&[0, 1, 2, 3]), SimTime::ZERO);
        c.add(ids(&[0, 4, 3]), SimTime::ZERO);
        assert_eq!(c.find(NodeId(2), SimTime::ZERO), Some(ids(&[0, 1, 2])));
        assert_eq!(c.find(NodeId(3), SimTime::ZERO), Some(ids(&[0, 4, 3])));
        assert_eq!(c.find(NodeId(9), SimTime::ZERO), None);
    }

    #[test]
    fn cache_expiry_and_fifo() {
        let mut c = RouteCache::new(NodeId(0), 2, SimTime::from_secs(300));
        c.add(ids(&[0, 1]), SimTime::ZERO);
        assert_eq!(c.find(NodeId(1), SimTime::from_secs(301)), None);
        c.add(ids(&[0, 2]), SimTime::ZERO);
        c.add(ids(&[0, 3]), SimTime::ZERO);
        assert_eq!(c.find(NodeId(1), SimTime::ZERO), None);
        assert_eq!(c.len(), 2);
    }

    #[test]
    fn prune_removes_only_routes_with_link() {
        let mut c = RouteCache::new(NodeId(0), 64, SimTime::from_secs(300));
        c.add(ids(&[0, 1, 2, 3]), SimTime::ZERO);
        c.add(ids(&[0, 4, 3]), SimTime::ZERO);
        assert_eq!(c.prune_link(NodeId(2), NodeId(3)), 1);
        assert_eq!(c.prune_link(NodeId(7), NodeId(8)), 0);
        assert_eq!(c.find(NodeId(3), SimTime::ZERO), Some(ids(&[0, 4, 3])));
    }

    struct Harness {
        rng: RandomStream,
        uids: UidSource,
        out: Vec<Action<DsrMsg, DsrTimer>>,
    }

    impl Harness {
        fn new() -> Self {
            Harness { rng: RandomStream::new(0, StreamLabel::Protocol), uids: UidSource::default(), out: Vec::new() }
        }

        fn ctx(&mut self, node: u32, now: SimTime) -> AgentCtx<'_, DsrMsg, DsrTimer> {
            AgentCtx::new(NodeId(node), now, SimTime::from_millis(10), &mut self.rng, &mut self.uids, &mut self.out)
        }

        fn sent(&mut self) -> Vec<(Packet<DsrMsg>, NextHop)> {
            self.out
                .drain(..)
                .filter_map(|a| match a {
                    Action::Transmit { pkt, next_hop, .. } => Some((pkt, next_hop)),
                    _ => None,
                })
                .collect()
        }
    }

    fn agents(n: u32) -> Vec<DsrAgent> {
        (0..n).map(|i| DsrAgent::new(NodeId(i), &SimParams::default())).collect()
    }

    #[test]
    fn three_node_chain_discovery() {
        let mut ag = agents(3);
        let mut h = Harness::new();
        let t = SimTime::from_secs(1);
        let data = Packet::data(50, FlowId { src: NodeId(0), dst: NodeId(2), seq: 0 }, t);
        ag[0].on_data_from_app(&mut h.ctx(0, t), data);
        let (q, _) = h.sent().pop().unwrap();
        assert!(matches!(q.as_routing(), Some(DsrMsg::Rreq(r)) if r.record == ids(&[0]) && r.ttl == 1));
        // Non-propagating request dies at B.
        ag[1].on_packet_from_net(&mut h.ctx(1, t), q, NodeId(0));
        assert!(h.sent().is_empty());
        ag[0].on_timer(&mut h.ctx(0, t), DsrTimer::Discovery { target: NodeId(2), attempt: 0 });
        let (q, _) = h.sent().pop().unwrap();
        ag[1].on_packet_from_net(&mut h.ctx(1, t), q, NodeId(0));
        let (q, _) = h.sent().pop().unwrap();
        assert!(matches!(q.as_routing(), Some(DsrMsg::Rreq(r)) if r.record == ids(&[0, 1])));
        ag[2].on_packet_from_net(&mut h.ctx(2, t), q, NodeId(1));
        let (rep, nh) = h.sent().pop().unwrap();
        assert_eq!(nh, NextHop::Unicast(NodeId(1)));
        assert!(matches!(rep.as_routing(), Some(DsrMsg::Rrep(r)) if r.route == ids(&[0, 1, 2])));
        ag[1].on_packet_from_net(&mut h.ctx(1, t), rep, NodeId(2));
        let (rep, nh) = h.sent().pop().unwrap();
        assert_eq!(nh, NextHop::Unicast(NodeId(0)));
        ag[0].on_packet_from_net(&mut h.ctx(0, t), rep, NodeId(1));
        assert_eq!(ag[0].cache().find(NodeId(2), t), Some(ids(&[0, 1, 2])));
        let (data, nh) = h.sent().pop().unwrap();
        assert_eq!(nh, NextHop::Unicast(NodeId(1)));
        let r = data.as_data().unwrap().route.clone().unwrap();
        assert_eq!((r.hops, r.cursor), (ids(&[0, 1, 2]), 0));
        assert_eq!(data.size(), 512 + 12);
    }

    #[test]
    fn intermediate_replies_from_cache() {
        let mut ag = agents(3);
        let mut h = Harness::new();
        let t = SimTime::from_secs(1);
        ag[1].cache.add(ids(&[1, 2]), t);
        let q = DsrRreq { id: 1, orig: NodeId(0), target: NodeId(2), record: ids(&[0]), ttl: 64 };
        let pkt = Packet { uid: 1, ttl: 255, created: t, body: Body::Routing(DsrMsg::Rreq(q)) };
        ag[1].on_packet_from_net(&mut h.ctx(1, t), pkt, NodeId(0));
        let sent = h.sent();
        assert_eq!(sent.len(), 1);
        assert!(matches!(sent[0].0.as_routing(), Some(DsrMsg::Rrep(r)) if r.route == ids(&[0, 1, 2])));
    }

    #[test]
    fn request_already_in_record_is_discarded() {
        let mut ag = agents(3);
        let mut h = Harness::new();
        let t = SimTime::from_secs(1);
        let q = DsrRreq { id: 1, orig: NodeId(0), target: NodeId(9), record: ids(&[0, 1, 2]), ttl: 64 };
        let pkt = Packet { uid: 1, ttl: 255, created: t, body: Body::Routing(DsrMsg::Rreq(q)) };
        ag[1].on_packet_from_net(&mut h.ctx(1, t), pkt, NodeId(2));
        assert!(h.sent().is_empty());
    }

    #[test]
    fn break_mid_route_reports_to_source() {
        // Route [0,1,2,3]; link 2->3 fails at node 2.
        let mut ag = agents(4);
        let mut h = Harness::new();
        let t = SimTime::from_secs(1);
        ag[1].cache.add(ids(&[1, 2, 3]), t);
        ag[0].cache.add(ids(&[0, 1, 2, 3]), t);
        ag[0].cache.add(ids(&[0, 5]), t);
        let mut data = Packet::data(9, FlowId { src: NodeId(0), dst: NodeId(3), seq: 0 }, t);
        data.as_data_mut().unwrap().route = Some(SourceRoute { hops: ids(&[0, 1, 2, 3]), cursor: 2 });
        ag[2].on_link_break(&mut h.ctx(2, t), NodeId(3), data);
        assert!(h.out.iter().any(|a| matches!(a, Action::Drop { reason: DropReason::Callback, .. })));
        let (err, nh) = h.sent().pop().unwrap();
        assert_eq!(nh, NextHop::Unicast(NodeId(1)));
        ag[1].on_packet_from_net(&mut h.ctx(1, t), err, NodeId(2));
        assert!(ag[1].cache().is_empty());
        let (err, nh) = h.sent().pop().unwrap();
        assert_eq!(nh, NextHop::Unicast(NodeId(0)));
        ag[0].on_packet_from_net(&mut h.ctx(0, t), err, NodeId(1));
        assert!(h.sent().is_empty());
        assert_eq!(ag[0].cache().find(NodeId(3), t), None);
        assert_eq!(ag[0].cache().find(NodeId(5), t), Some(ids(&[0, 5])));
    }

    #[test]
    fn source_retries_alternate_without_request() {
        let mut ag = agents(1);
        let mut h = Harness::new();
        let t = SimTime::from_secs(1);
        ag[0].cache.add(ids(&[0, 1, 3]), t);
        ag[0].cache.add(ids(&[0, 2, 4, 3]), t);
        let mut data = Packet::data(9, FlowId { src: NodeId(0), dst: NodeId(3), seq: 0 }, t);
        data.as_data_mut().unwrap().route = Some(SourceRoute::new(ids(&[0, 1, 3])));
        ag[0].on_link_break(&mut h.ctx(0, t), NodeId(1), data);
        let sent = h.sent();
        assert_eq!(sent.len(), 1);
        assert!(sent[0].0.is_data());
        assert_eq!(sent[0].1, NextHop::Unicast(NodeId(2)));
    }

    #[test]
    fn idle_agent_is_silent() {
        let mut ag = agents(1);
        let mut h = Harness::new();
        ag[0].start(&mut h.ctx(0, SimTime::ZERO));
        assert!(h.out.is_empty());
    }
}
