//! Zone Routing Protocol.
//!
//! Beacons discover neighbors. IARP floods each node's neighbor list `r-1`
//! hops so every node knows the links inside its zone of radius `r`; a cutoff
//! BFS over that link-state table gives zone members, intra-zone paths and
//! the peripheral nodes at exactly `r` hops. Destinations outside the zone
//! are found by IERP queries bordercast to uncovered peripheral nodes; the
//! reply returns the accumulated path, which sources stamp into data
//! packets. All data is source-routed.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};

use crate::config::{secs, SimParams, ZrpParams};
use crate::engine::SimTime;
use crate::metrics::{DropReason, RoutingTag};
use crate::node::NodeId;
use crate::routing::{Body, Ctx, DispatchOutcome, NextHop, Packet, RoutingAgent, RoutingMessage, SendBuffer, SourceRoute};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Beacon {
    pub node: NodeId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IarpUpdate {
    pub origin: NodeId,
    pub seq: u32,
    pub neighbors: Vec<NodeId>,
    pub ttl: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IerpQuery {
    pub id: u32,
    pub orig: NodeId,
    pub target: NodeId,
    /// Every node the query has passed through, originator first.
    pub route: Vec<NodeId>,
    /// Zones already bordercast into.
    pub covered: Vec<NodeId>,
    /// Intra-zone leg from the bordercasting node to one peripheral node.
    pub leg: SourceRoute,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IerpReply {
    pub orig: NodeId,
    pub target: NodeId,
    pub route: Vec<NodeId>,
    pub back: SourceRoute,
}

/// Link `from -> to` on an inter-zone route is broken.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IerpError {
    pub from: NodeId,
    pub to: NodeId,
    pub back: SourceRoute,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ZrpMsg {
    Beacon(Beacon),
    Iarp(IarpUpdate),
    Query(IerpQuery),
    Reply(IerpReply),
    Error(IerpError),
}

impl RoutingMessage for ZrpMsg {
    fn tag(&self) -> RoutingTag {
        match self {
            ZrpMsg::Beacon(_) => RoutingTag::ZrpBeacon,
            ZrpMsg::Iarp(_) => RoutingTag::ZrpIarp,
            ZrpMsg::Query(_) => RoutingTag::ZrpIerpQuery,
            ZrpMsg::Reply(_) => RoutingTag::ZrpIerpReply,
            ZrpMsg::Error(_) => RoutingTag::ZrpIerpError,
        }
    }

    fn size(&self) -> u32 {
        let n = |v: &[NodeId]| 4 * v.len() as u32;
        match self {
            ZrpMsg::Beacon(_) => 8,
            ZrpMsg::Iarp(u) => 12 + n(&u.neighbors),
            ZrpMsg::Query(q) => 16 + n(&q.route) + n(&q.covered) + n(&q.leg.hops),
            ZrpMsg::Reply(r) => 16 + n(&r.route) + n(&r.back.hops),
            ZrpMsg::Error(e) => 20 + n(&e.back.hops),
        }
    }

    fn endpoints(&self) -> (Option<NodeId>, Option<NodeId>) {
        match self {
            ZrpMsg::Beacon(b) => (Some(b.node), None),
            ZrpMsg::Iarp(u) => (Some(u.origin), None),
            ZrpMsg::Query(q) => (Some(q.orig), Some(q.target)),
            ZrpMsg::Reply(r) => (Some(r.target), Some(r.orig)),
            ZrpMsg::Error(e) => (Some(e.from), e.back.hops.last().copied()),
        }
    }
}

/// Cutoff BFS result: hop distance and BFS parent of every zone member.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Zone {
    pub root: NodeId,
    pub radius: u32,
    pub dist: BTreeMap<NodeId, u32>,
    parent: BTreeMap<NodeId, NodeId>,
}

impl Zone {
    /// BFS from `root` over directed `links`, expanding only nodes closer than `radius`.
    pub fn compute(root: NodeId, radius: u32, links: &BTreeMap<NodeId, Vec<NodeId>>) -> Zone {
        let mut dist = BTreeMap::from([(root, 0)]);
        let mut parent = BTreeMap::new();
        let mut queue = VecDeque::from([root]);
        while let Some(u) = queue.pop_front() {
            let d = dist[&u];
            if d >= radius {
                continue;
            }
            for &v in links.get(&u).map(Vec::as_slice).unwrap_or(&[]) {
                if !dist.contains_key(&v) {
                    dist.insert(v, d + 1);
                    parent.insert(v, u);
                    queue.push_back(v);
                }
            }
        }
        Zone { root, radius, dist, parent }
    }

    pub fn contains(&self, n: NodeId) -> bool {
        self.dist.contains_key(&n)
    }

    pub fn members(&self) -> BTreeSet<NodeId> {
        self.dist.keys().copied().collect()
    }

    pub fn peripheral(&self) -> BTreeSet<NodeId> {
        self.dist.iter().filter(|(_, &d)| d == self.radius).map(|(&n, _)| n).collect()
    }

    /// Path root..=`to`, if `to` is in the zone.
    pub fn path_to(&self, to: NodeId) -> Option<Vec<NodeId>> {
        if !self.contains(to) {
            return None;
        }
        let mut path = vec![to];
        let mut cur = to;
        while cur != self.root {
            cur = self.parent[&cur];
            path.push(cur);
        }
        path.reverse();
        Some(path)
    }
}

/// Removes cycles: whenever a node recurs, the detour between its two
/// visits is cut out.
pub fn cut_loops(path: &[NodeId]) -> Vec<NodeId> {
    let mut out: Vec<NodeId> = Vec::with_capacity(path.len());
    for &n in path {
        if let Some(i) = out.iter().position(|&m| m == n) {
            out.truncate(i + 1);
        } else {
            out.push(n);
        }
    }
    out
}

#[derive(Debug, Clone)]
struct LinkState {
    seq: u32,
    neighbors: Vec<NodeId>,
    received: SimTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct PendingQuery {
    attempt: u32,
    id: u32,
}

#[derive(Debug, Clone)]
pub enum ZrpTimer {
    Beacon,
    IarpRefresh,
    IarpTriggered,
    QueryTimeout { target: NodeId, attempt: u32 },
    Sweep,
}

#[derive(Debug)]
pub struct ZrpAgent {
    node: NodeId,
    params: ZrpParams,
    neighbors: BTreeMap<NodeId, SimTime>,
    lsdb: BTreeMap<NodeId, LinkState>,
    iarp_seq: u32,
    last_iarp: Option<SimTime>,
    iarp_pending: bool,
    query_id: u32,
    processed: HashSet<(NodeId, u32)>,
    pending: BTreeMap<NodeId, PendingQuery>,
    inter: BTreeMap<NodeId, (Vec<NodeId>, SimTime)>,
    buffer: SendBuffer<ZrpMsg>,
    sweep_armed: bool,
    recent_errors: BTreeMap<(NodeId, NodeId), SimTime>,
}

impl ZrpAgent {
    fn neighbor_timeout(&self) -> SimTime {
        secs(self.params.beacon_interval_s * f64::from(self.params.beacon_loss))
    }

    fn lsdb_timeout(&self) -> SimTime {
        secs(self.params.iarp_refresh_s * 3.0)
    }

    fn links(&self, now: SimTime) -> BTreeMap<NodeId, Vec<NodeId>> {
        let mut links: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
        links.insert(self.node, self.neighbors.keys().copied().collect());
        let limit = self.lsdb_timeout();
        for (&o, ls) in &self.lsdb {
            if o != self.node && now.saturating_sub(ls.received) <= limit {
                links.insert(o, ls.neighbors.clone());
            }
        }
        links
    }

    /// The zone as currently known.
    pub fn zone(&self, now: SimTime) -> Zone {
        Zone::compute(self.node, self.params.radius, &self.links(now))
    }

    /// Current neighbor set.
    pub fn neighbor_set(&self) -> BTreeSet<NodeId> {
        self.neighbors.keys().copied().collect()
    }

    /// Inter-zone route to `target`, if cached and unexpired.
    pub fn inter_route(&self, target: NodeId, now: SimTime) -> Option<&[NodeId]> {
        let expiry = secs(self.params.route_expiry_s);
        self.inter
            .get(&target)
            .filter(|(_, t)| now.saturating_sub(*t) <= expiry)
            .map(|(p, _)| p.as_slice())
    }

    fn route_for(&self, dst: NodeId, now: SimTime) -> Option<Vec<NodeId>> {
        self.zone(now).path_to(dst).or_else(|| self.inter_route(dst, now).map(<[NodeId]>::to_vec))
    }

    fn neighbor_heard(&mut self, ctx: &mut Ctx<'_, Self>, n: NodeId) {
        if self.neighbors.insert(n, ctx.now()).is_none() {
            self.neighbors_changed(ctx);
        }
    }

    fn neighbors_changed(&mut self, ctx: &mut Ctx<'_, Self>) {
        self.schedule_iarp(ctx);
        self.flush_reachable(ctx);
    }

    fn schedule_iarp(&mut self, ctx: &mut Ctx<'_, Self>) {
        if self.iarp_pending {
            return;
        }
        self.iarp_pending = true;
        let earliest = self.last_iarp.map_or(SimTime::ZERO, |t| t + secs(self.params.iarp_min_spacing_s));
        ctx.set_timer(earliest.saturating_sub(ctx.now()), ZrpTimer::IarpTriggered);
    }

    fn send_iarp(&mut self, ctx: &mut Ctx<'_, Self>) {
        self.last_iarp = Some(ctx.now());
        if self.params.radius < 2 {
            return;
        }
        self.iarp_seq += 1;
        let u = IarpUpdate {
            origin: self.node,
            seq: self.iarp_seq,
            neighbors: self.neighbors.keys().copied().collect(),
            ttl: self.params.radius - 1,
        };
        ctx.originate(ZrpMsg::Iarp(u), NextHop::Broadcast);
    }

    fn stamp_and_send(&mut self, ctx: &mut Ctx<'_, Self>, mut pkt: Packet<ZrpMsg>, path: Vec<NodeId>) {
        let next = path[1];
        if let Some(d) = pkt.as_data_mut() {
            d.route = Some(SourceRoute::new(path));
        }
        ctx.send_data(pkt, next);
    }

    /// Sends buffered packets whose destination has become reachable.
    fn flush_reachable(&mut self, ctx: &mut Ctx<'_, Self>) {
        if self.buffer.is_empty() {
            return;
        }
        let now = ctx.now();
        for dst in self.buffer.destinations() {
            if let Some(path) = self.route_for(dst, now) {
                self.pending.remove(&dst);
                for p in self.buffer.take_for(dst) {
                    self.stamp_and_send(ctx, p, path.clone());
                }
            }
        }
    }

    fn buffer_data(&mut self, ctx: &mut Ctx<'_, Self>, mut pkt: Packet<ZrpMsg>) {
        let dst = pkt.data_dst().expect("data packet");
        if let Some(d) = pkt.as_data_mut() {
            d.route = None;
        }
        if let Some(old) = self.buffer.push(pkt, ctx.now()) {
            ctx.drop(old, DropReason::IfqSendBuffer);
        }
        if !self.sweep_armed {
            self.sweep_armed = true;
            ctx.set_timer(SimTime::from_secs(1), ZrpTimer::Sweep);
        }
        if !self.pending.contains_key(&dst) {
            self.start_query(ctx, dst, 0);
        }
    }

    fn start_query(&mut self, ctx: &mut Ctx<'_, Self>, target: NodeId, attempt: u32) {
        self.query_id += 1;
        let id = self.query_id;
        self.pending.insert(target, PendingQuery { attempt, id });
        self.processed.insert((self.node, id));
        let q = IerpQuery {
            id,
            orig: self.node,
            target,
            route: vec![self.node],
            covered: Vec::new(),
            leg: SourceRoute::new(Vec::new()),
        };
        self.bordercast(ctx, None, q);
        ctx.set_timer(secs(self.params.query_timeout_s), ZrpTimer::QueryTimeout { target, attempt });
    }

    /// Sends one copy of `q` along the intra-zone path to every peripheral
    /// node outside the covered zones. A received packet's copies keep its uid.
    fn bordercast(&mut self, ctx: &mut Ctx<'_, Self>, pkt: Option<&Packet<ZrpMsg>>, q: IerpQuery) {
        let zone = self.zone(ctx.now());
        let covered_before: BTreeSet<NodeId> = q.covered.iter().copied().collect();
        let mut covered = covered_before.clone();
        covered.extend(zone.members());
        let covered: Vec<NodeId> = covered.into_iter().collect();
        for p in zone.peripheral() {
            if covered_before.contains(&p) || q.route.contains(&p) {
                continue;
            }
            let path = zone.path_to(p).expect("peripheral node is in zone");
            let next = path[1];
            let copy = IerpQuery { covered: covered.clone(), leg: SourceRoute::new(path), ..q.clone() };
            match pkt {
                None => {
                    ctx.originate(ZrpMsg::Query(copy), NextHop::Unicast(next));
                }
                Some(p) => ctx.relay(p.clone(), ZrpMsg::Query(copy), NextHop::Unicast(next)),
            }
        }
    }

    fn on_query(&mut self, ctx: &mut Ctx<'_, Self>, pkt: Packet<ZrpMsg>, mut q: IerpQuery) {
        let now = ctx.now();
        q.route.push(self.node);
        q.leg.cursor += 1;
        if q.leg.current() != Some(self.node) {
            return;
        }
        let zone = self.zone(now);
        if zone.contains(q.target) {
            if !self.processed.insert((q.orig, q.id)) {
                return;
            }
            let mut route = q.route.clone();
            let suffix = zone.path_to(q.target).expect("target in zone");
            route.extend_from_slice(&suffix[1..]);
            let route = cut_loops(&route);
            let mut back = cut_loops(&q.route);
            back.reverse();
            if back.len() < 2 {
                return;
            }
            let next = back[1];
            let r = IerpReply { orig: q.orig, target: q.target, route, back: SourceRoute::new(back) };
            ctx.originate(ZrpMsg::Reply(r), NextHop::Unicast(next));
            return;
        }
        if let Some(next) = q.leg.next_hop() {
            ctx.relay(pkt, ZrpMsg::Query(q), NextHop::Unicast(next));
            return;
        }
        if !self.processed.insert((q.orig, q.id)) {
            return;
        }
        self.bordercast(ctx, Some(&pkt), q);
    }

    fn on_reply(&mut self, ctx: &mut Ctx<'_, Self>, pkt: Packet<ZrpMsg>, mut r: IerpReply) {
        r.back.cursor += 1;
        if r.back.current() != Some(self.node) {
            return;
        }
        if let Some(next) = r.back.next_hop() {
            ctx.relay(pkt, ZrpMsg::Reply(r), NextHop::Unicast(next));
            return;
        }
        let now = ctx.now();
        if self.pending.remove(&r.target).is_some() || self.inter_route(r.target, now).is_none() {
            self.inter.insert(r.target, (r.route, now));
        }
        self.flush_reachable(ctx);
    }

    fn prune_link(&mut self, a: NodeId, b: NodeId) {
        self.inter.retain(|_, (p, _)| !p.windows(2).any(|w| w[0] == a && w[1] == b));
    }

    fn on_error(&mut self, ctx: &mut Ctx<'_, Self>, pkt: Packet<ZrpMsg>, mut e: IerpError) {
        self.prune_link(e.from, e.to);
        e.back.cursor += 1;
        if let Some(next) = e.back.next_hop() {
            ctx.relay(pkt, ZrpMsg::Error(e), NextHop::Unicast(next));
        }
    }

    fn on_data(&mut self, ctx: &mut Ctx<'_, Self>, mut pkt: Packet<ZrpMsg>) {
        let Some(route) = pkt.as_data_mut().and_then(|d| d.route.as_mut()) else {
            ctx.drop(pkt, DropReason::NoRoute);
            return;
        };
        route.cursor += 1;
        if route.current() != Some(self.node) {
            ctx.drop(pkt, DropReason::NoRoute);
            return;
        }
        match route.next_hop() {
            None => ctx.deliver(pkt),
            Some(nh) => ctx.forward_data(pkt, nh),
        }
    }

    fn beacon_tick(&mut self, ctx: &mut Ctx<'_, Self>) {
        let now = ctx.now();
        let limit = self.neighbor_timeout();
        let before = self.neighbors.len();
        self.neighbors.retain(|_, &mut t| now.saturating_sub(t) <= limit);
        if self.neighbors.len() != before {
            self.neighbors_changed(ctx);
        }
        ctx.originate(ZrpMsg::Beacon(Beacon { node: self.node }), NextHop::Broadcast);
        ctx.set_timer(secs(self.params.beacon_interval_s), ZrpTimer::Beacon);
    }
}

impl RoutingAgent for ZrpAgent {
    type Msg = ZrpMsg;
    type Timer = ZrpTimer;

    fn new(node: NodeId, params: &SimParams) -> Self {
        ZrpAgent {
            node,
            params: params.zrp.clone(),
            neighbors: BTreeMap::new(),
            lsdb: BTreeMap::new(),
            iarp_seq: 0,
            last_iarp: None,
            iarp_pending: false,
            query_id: 0,
            processed: HashSet::new(),
            pending: BTreeMap::new(),
            inter: BTreeMap::new(),
            buffer: SendBuffer::new(&params.sendbuf),
            sweep_armed: false,
            recent_errors: BTreeMap::new(),
        }
    }

    fn start(&mut self, ctx: &mut Ctx<'_, Self>) {
        let b = ctx.rng().draw_time(SimTime::ZERO, secs(self.params.beacon_interval_s));
        ctx.set_timer(b, ZrpTimer::Beacon);
        let r = ctx.rng().draw_time(SimTime::ZERO, secs(self.params.iarp_refresh_s));
        ctx.set_timer(r, ZrpTimer::IarpRefresh);
    }

    fn on_data_from_app(&mut self, ctx: &mut Ctx<'_, Self>, pkt: Packet<ZrpMsg>) -> DispatchOutcome {
        let dst = pkt.data_dst().expect("data packet");
        match self.route_for(dst, ctx.now()) {
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

    fn on_packet_from_net(&mut self, ctx: &mut Ctx<'_, Self>, pkt: Packet<ZrpMsg>, from: NodeId) {
        self.neighbor_heard(ctx, from);
        match pkt.body {
            Body::Data(_) => self.on_data(ctx, pkt),
            Body::Routing(ref m) => match m.clone() {
                ZrpMsg::Beacon(_) => {}
                ZrpMsg::Iarp(u) => {
                    if u.origin == self.node {
                        return;
                    }
                    let fresh = self.lsdb.get(&u.origin).is_none_or(|ls| u.seq > ls.seq);
                    if !fresh {
                        return;
                    }
                    let ls = LinkState { seq: u.seq, neighbors: u.neighbors.clone(), received: ctx.now() };
                    self.lsdb.insert(u.origin, ls);
                    self.flush_reachable(ctx);
                    if u.ttl > 1 {
                        let fwd = IarpUpdate { ttl: u.ttl - 1, ..u };
                        ctx.relay(pkt, ZrpMsg::Iarp(fwd), NextHop::Broadcast);
                    }
                }
                ZrpMsg::Query(q) => self.on_query(ctx, pkt, q),
                ZrpMsg::Reply(r) => self.on_reply(ctx, pkt, r),
                ZrpMsg::Error(e) => self.on_error(ctx, pkt, e),
            },
        }
    }

    fn on_link_break(&mut self, ctx: &mut Ctx<'_, Self>, next_hop: NodeId, pkt: Packet<ZrpMsg>) {
        let now = ctx.now();
        if self.neighbors.remove(&next_hop).is_some() {
            self.schedule_iarp(ctx);
        }
        self.prune_link(self.node, next_hop);
        let Some(route) = pkt.as_data().and_then(|d| d.route.clone()) else {
            ctx.drop(pkt, DropReason::Callback);
            return;
        };
        let src = route.hops[0];
        if src == self.node {
            let dst = pkt.data_dst().expect("data packet");
            match self.route_for(dst, now) {
                Some(path) => self.stamp_and_send(ctx, pkt, path),
                None => self.buffer_data(ctx, pkt),
            }
            return;
        }
        ctx.drop(pkt, DropReason::Callback);
        // Intra-zone routes are repaired by IARP alone.
        if route.hops.len() as u32 <= self.params.radius + 1 {
            return;
        }
        let key = (src, next_hop);
        if self.recent_errors.get(&key).is_some_and(|&t| now.saturating_sub(t) < SimTime::from_secs(1)) {
            return;
        }
        self.recent_errors.insert(key, now);
        let mut back: Vec<NodeId> = route.hops[..=route.cursor].to_vec();
        back.reverse();
        let next = back[1];
        let e = IerpError { from: self.node, to: next_hop, back: SourceRoute::new(back) };
        ctx.originate(ZrpMsg::Error(e), NextHop::Unicast(next));
    }

    fn on_timer(&mut self, ctx: &mut Ctx<'_, Self>, timer: ZrpTimer) {
        match timer {
            ZrpTimer::Beacon => self.beacon_tick(ctx),
            ZrpTimer::IarpRefresh => {
                self.send_iarp(ctx);
                ctx.set_timer(secs(self.params.iarp_refresh_s), ZrpTimer::IarpRefresh);
            }
            ZrpTimer::IarpTriggered => {
                self.iarp_pending = false;
                self.send_iarp(ctx);
            }
            ZrpTimer::QueryTimeout { target, attempt } => {
                if self.pending.get(&target).map(|p| p.attempt) != Some(attempt) {
                    return;
                }
                self.pending.remove(&target);
                if !self.buffer.has_for(target) {
                    return;
                }
                if attempt < self.params.query_retries {
                    self.start_query(ctx, target, attempt + 1);
                } else {
                    for p in self.buffer.take_for(target) {
                        ctx.drop(p, DropReason::NoRoute);
                    }
                }
            }
            ZrpTimer::Sweep => {
                for p in self.buffer.expire(ctx.now()) {
                    ctx.drop(p, DropReason::Timeout);
                }
                if self.buffer.is_empty() {
                    self.sweep_armed = false;
                } else {
                    ctx.set_timer(SimTime::from_secs(1), ZrpTimer::Sweep);
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

    fn chain_links(n: u32) -> BTreeMap<NodeId, Vec<NodeId>> {
        (0..n)
            .map(|i| {
                let mut nb = Vec::new();
                if i > 0 {
                    nb.push(NodeId(i - 1));
                }
                if i + 1 < n {
                    nb.push(NodeId(i + 1));
                }
                (NodeId(i), nb)
            })
            .collect()
    }

    #[test]
    fn chain_zone_and_periphery() {
        let z = Zone::compute(NodeId(0), 2, &chain_links(5));
        assert_eq!(z.members(), ids(&[0, 1, 2]).into_iter().collect());
        assert_eq!(z.peripheral(), ids(&[2]).into_iter().collect());
        assert_eq!(z.path_to(NodeId(2)), Some(ids(&[0, 1, 2])));
        assert_eq!(z.path_to(NodeId(3)), None);
        let c = Zone::compute(NodeId(2), 2, &chain_links(5));
        assert_eq!(c.members(), ids(&[0, 1, 2, 3, 4]).into_iter().collect());
        assert_eq!(c.peripheral(), ids(&[0, 4]).into_iter().collect());
    }

    #[test]
    fn isolated_zone_is_self() {
        let z = Zone::compute(NodeId(3), 2, &BTreeMap::new());
        assert_eq!(z.members().len(), 1);
        assert!(z.peripheral().is_empty());
    }

    #[test]
    fn loops_are_cut() {
        assert_eq!(cut_loops(&ids(&[0, 1, 2, 1, 3])), ids(&[0, 1, 3]));
        assert_eq!(cut_loops(&ids(&[0, 1, 2])), ids(&[0, 1, 2]));
    }

    struct Harness {
        rng: RandomStream,
        uids: UidSource,
        out: Vec<Action<ZrpMsg, ZrpTimer>>,
    }

    impl Harness {
        fn new() -> Self {
            Harness { rng: RandomStream::new(0, StreamLabel::Protocol), uids: UidSource::default(), out: Vec::new() }
        }

        fn ctx(&mut self, node: u32, now: SimTime) -> AgentCtx<'_, ZrpMsg, ZrpTimer> {
            AgentCtx::new(NodeId(node), now, SimTime::from_millis(10), &mut self.rng, &mut self.uids, &mut self.out)
        }

        fn sent(&mut self) -> Vec<(Packet<ZrpMsg>, NextHop)> {
            self.out
                .drain(..)
                .filter_map(|a| match a {
                    Action::Transmit { pkt, next_hop, .. } => Some((pkt, next_hop)),
                    _ => None,
                })
                .collect()
        }
    }

    /// Agents of a 5-chain with converged neighbor and link-state tables.
    fn converged_chain(t: SimTime) -> Vec<ZrpAgent> {
        let links = chain_links(5);
        (0..5)
            .map(|i| {
                let mut a = ZrpAgent::new(NodeId(i), &SimParams::default());
                for &nb in &links[&NodeId(i)] {
                    a.neighbors.insert(nb, t);
                    a.lsdb.insert(nb, LinkState { seq: 1, neighbors: links[&nb].clone(), received: t });
                }
                a
            })
            .collect()
    }

    fn data(src: u32, dst: u32, t: SimTime) -> Packet<ZrpMsg> {
        Packet::data(99, FlowId { src: NodeId(src), dst: NodeId(dst), seq: 0 }, t)
    }

    #[test]
    fn intra_zone_destination_needs_no_query() {
        let t = SimTime::from_secs(10);
        let mut ag = converged_chain(t);
        let mut h = Harness::new();
        assert_eq!(ag[0].on_data_from_app(&mut h.ctx(0, t), data(0, 2, t)), DispatchOutcome::Forwarded);
        let sent = h.sent();
        assert_eq!(sent.len(), 1);
        assert!(sent[0].0.is_data());
        assert_eq!(sent[0].1, NextHop::Unicast(NodeId(1)));
    }

    #[test]
    fn five_chain_bordercast_and_reply() {
        let t = SimTime::from_secs(10);
        let mut ag = converged_chain(t);
        let mut h = Harness::new();
        assert_eq!(ag[0].on_data_from_app(&mut h.ctx(0, t), data(0, 4, t)), DispatchOutcome::Buffered);
        let sent = h.sent();
        assert_eq!(sent.len(), 1, "one copy, to the single peripheral node");
        let (q, nh) = sent.into_iter().next().unwrap();
        assert_eq!(nh, NextHop::Unicast(NodeId(1)));
        assert!(matches!(q.as_routing(), Some(ZrpMsg::Query(x)) if x.leg.hops == ids(&[0, 1, 2])));

        ag[1].on_packet_from_net(&mut h.ctx(1, t), q, NodeId(0));
        let (q, nh) = h.sent().pop().unwrap();
        assert_eq!(nh, NextHop::Unicast(NodeId(2)));
        ag[2].on_packet_from_net(&mut h.ctx(2, t), q, NodeId(1));
        let (rep, nh) = h.sent().pop().unwrap();
        assert_eq!(nh, NextHop::Unicast(NodeId(1)));
        assert!(matches!(rep.as_routing(), Some(ZrpMsg::Reply(r)) if r.route == ids(&[0, 1, 2, 3, 4])));
        ag[1].on_packet_from_net(&mut h.ctx(1, t), rep, NodeId(2));
        let (rep, _) = h.sent().pop().unwrap();
        ag[0].on_packet_from_net(&mut h.ctx(0, t), rep, NodeId(1));
        assert_eq!(ag[0].inter_route(NodeId(4), t), Some(ids(&[0, 1, 2, 3, 4]).as_slice()));
        let sent = h.sent();
        assert_eq!(sent.len(), 1);
        let r = sent[0].0.as_data().unwrap().route.clone().unwrap();
        assert_eq!(r.hops, ids(&[0, 1, 2, 3, 4]));
    }

    #[test]
    fn duplicate_query_at_border_is_discarded() {
        let t = SimTime::from_secs(10);
        let mut ag = converged_chain(t);
        let mut h = Harness::new();
        let q = IerpQuery {
            id: 1,
            orig: NodeId(0),
            target: NodeId(9),
            route: ids(&[0, 1]),
            covered: ids(&[0, 1, 2]),
            leg: SourceRoute { hops: ids(&[0, 1, 2]), cursor: 1 },
        };
        let pkt = Packet { uid: 1, ttl: 255, created: t, body: Body::Routing(ZrpMsg::Query(q)) };
        ag[2].on_packet_from_net(&mut h.ctx(2, t), pkt.clone(), NodeId(1));
        let first = h.sent().len();
        assert_eq!(first, 1, "bordercast onward to node 4 only");
        ag[2].on_packet_from_net(&mut h.ctx(2, t), pkt, NodeId(1));
        assert!(h.sent().is_empty());
    }

    #[test]
    fn iarp_ttl_is_radius_minus_one() {
        let t = SimTime::from_secs(10);
        let mut ag = converged_chain(t);
        let mut h = Harness::new();
        ag[2].on_timer(&mut h.ctx(2, t), ZrpTimer::IarpRefresh);
        let sent = h.sent();
        assert_eq!(sent.len(), 1);
        assert!(matches!(sent[0].0.as_routing(), Some(ZrpMsg::Iarp(u)) if u.ttl == 1));
        // A ttl-1 update is not relayed.
        let (u, _) = sent.into_iter().next().unwrap();
        ag[3].on_packet_from_net(&mut h.ctx(3, t), u, NodeId(2));
        assert!(h.sent().iter().all(|(p, _)| !matches!(p.as_routing(), Some(ZrpMsg::Iarp(_)))));
    }

    #[test]
    fn inter_zone_break_notifies_source() {
        let t = SimTime::from_secs(10);
        let mut ag = converged_chain(t);
        let mut h = Harness::new();
        ag[0].inter.insert(NodeId(4), (ids(&[0, 1, 2, 3, 4]), t));
        let mut d = data(0, 4, t);
        d.as_data_mut().unwrap().route = Some(SourceRoute { hops: ids(&[0, 1, 2, 3, 4]), cursor: 2 });
        ag[2].on_link_break(&mut h.ctx(2, t), NodeId(3), d);
        let (e, nh) = h.sent().into_iter().find(|(p, _)| matches!(p.as_routing(), Some(ZrpMsg::Error(_)))).unwrap();
        assert_eq!(nh, NextHop::Unicast(NodeId(1)));
        ag[1].on_packet_from_net(&mut h.ctx(1, t), e, NodeId(2));
        let (e, _) = h.sent().pop().unwrap();
        ag[0].on_packet_from_net(&mut h.ctx(0, t), e, NodeId(1));
        assert_eq!(ag[0].inter_route(NodeId(4), t), None);
    }

    #[test]
    fn intra_zone_break_sends_no_error() {
        let t = SimTime::from_secs(10);
        let mut ag = converged_chain(t);
        let mut h = Harness::new();
        let mut d = data(0, 2, t);
        d.as_data_mut().unwrap().route = Some(SourceRoute { hops: ids(&[0, 1, 2]), cursor: 1 });
        ag[1].on_link_break(&mut h.ctx(1, t), NodeId(2), d);
        assert!(h.sent().is_empty());
    }
}
