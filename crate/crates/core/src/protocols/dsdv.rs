//! Destination-Sequenced Distance Vector.
//!
//! Proactive distance vector with destination-originated sequence numbers.
//! Every node advertises on a fixed period: a full dump every
//! `full_dump_every` ticks and, in between, an incremental update carrying
//! entries changed since the last full dump. Table changes also trigger an
//! incremental update, at most one per `min_trigger_spacing_s`. A lost link
//! poisons every route through it with metric infinity and an odd sequence
//! number one above the last even one.

use std::collections::BTreeMap;

use crate::config::{secs, DsdvParams, SimParams};
use crate::engine::SimTime;
use crate::metrics::{DropReason, RoutingTag};
use crate::node::NodeId;
use crate::routing::{Body, Ctx, DispatchOutcome, NextHop, Packet, RoutingAgent, RoutingMessage};

pub const INFINITE_METRIC: u32 = u32::MAX;

fn plus_one(metric: u32) -> u32 {
    if metric == INFINITE_METRIC {
        INFINITE_METRIC
    } else {
        metric + 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DsdvEntry {
    pub dest: NodeId,
    pub next_hop: NodeId,
    pub metric: u32,
    pub seq: u32,
    pub installed: SimTime,
    /// Changed since the last full dump.
    pub changed: bool,
}

impl DsdvEntry {
    pub fn is_reachable(&self) -> bool {
        self.metric != INFINITE_METRIC
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Advert {
    pub dest: NodeId,
    pub metric: u32,
    pub seq: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateKind {
    FullDump,
    Incremental,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DsdvUpdate {
    pub kind: UpdateKind,
    pub origin: NodeId,
    pub entries: Vec<Advert>,
}

impl RoutingMessage for DsdvUpdate {
    fn tag(&self) -> RoutingTag {
        RoutingTag::Dsdv
    }

    fn size(&self) -> u32 {
        8 + 12 * self.entries.len() as u32
    }

    fn endpoints(&self) -> (Option<NodeId>, Option<NodeId>) {
        (Some(self.origin), None)
    }
}

/// What `integrate` did to the table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Integration {
    Installed,
    Replaced,
    Ignored,
}

#[derive(Debug, Clone, Default)]
pub struct DsdvTable {
    entries: BTreeMap<NodeId, DsdvEntry>,
}

impl DsdvTable {
    pub fn get(&self, dest: NodeId) -> Option<&DsdvEntry> {
        self.entries.get(&dest)
    }

    pub fn entries(&self) -> impl Iterator<Item = &DsdvEntry> {
        self.entries.values()
    }

    pub fn insert(&mut self, e: DsdvEntry) {
        self.entries.insert(e.dest, e);
    }

    /// Applies an advertisement heard from neighbor `from`. The entry is
    /// replaced iff the advertised sequence number is newer, or equal with a
    /// strictly shorter resulting metric.
    pub fn integrate(&mut self, advert: Advert, from: NodeId, now: SimTime) -> Integration {
        let metric = plus_one(advert.metric);
        let fresh = DsdvEntry { dest: advert.dest, next_hop: from, metric, seq: advert.seq, installed: now, changed: true };
        match self.entries.get_mut(&advert.dest) {
            None => {
                self.entries.insert(advert.dest, fresh);
                Integration::Installed
            }
            Some(e) => {
                if advert.seq > e.seq || (advert.seq == e.seq && metric < e.metric) {
                    *e = fresh;
                    Integration::Replaced
                } else {
                    Integration::Ignored
                }
            }
        }
    }

    /// Poisons every reachable route through `lost`. Returns the destinations affected.
    pub fn break_via(&mut self, lost: NodeId) -> Vec<NodeId> {
        let mut hit = Vec::new();
        for e in self.entries.values_mut() {
            if e.next_hop == lost && e.is_reachable() {
                e.metric = INFINITE_METRIC;
                e.seq += 1;
                e.changed = true;
                hit.push(e.dest);
            }
        }
        hit
    }
}

#[derive(Debug, Clone)]
pub enum DsdvTimer {
    Periodic,
    Triggered,
}

#[derive(Debug)]
pub struct DsdvAgent {
    node: NodeId,
    params: DsdvParams,
    own_seq: u32,
    table: DsdvTable,
    ticks: u64,
    neighbors: BTreeMap<NodeId, SimTime>,
    trigger_pending: bool,
    last_update_sent: Option<SimTime>,
}

impl DsdvAgent {
    pub fn table(&self) -> &DsdvTable {
        &self.table
    }

    pub fn own_seq(&self) -> u32 {
        self.own_seq
    }

    /// Hop count to `dest`, if reachable.
    pub fn metric_to(&self, dest: NodeId) -> Option<u32> {
        self.table.get(dest).filter(|e| e.is_reachable()).map(|e| e.metric)
    }

    fn next_hop(&self, dest: NodeId) -> Option<NodeId> {
        self.table.get(dest).filter(|e| e.is_reachable() && e.metric > 0).map(|e| e.next_hop)
    }

    fn self_entry(&mut self, now: SimTime) {
        let node = self.node;
        self.table.insert(DsdvEntry { dest: node, next_hop: node, metric: 0, seq: self.own_seq, installed: now, changed: false });
    }

    /// Builds this tick's advertisement, if any. Full dumps bump the own
    /// sequence number by two.
    pub fn periodic_advertise(&mut self, now: SimTime) -> Option<DsdvUpdate> {
        let full = self.ticks % u64::from(self.params.full_dump_every) == 0;
        self.ticks += 1;
        if full {
            self.own_seq += 2;
            self.self_entry(now);
            let entries = self.table.entries().map(advert_of).collect();
            for e in self.table.entries.values_mut() {
                e.changed = false;
            }
            Some(DsdvUpdate { kind: UpdateKind::FullDump, origin: self.node, entries })
        } else {
            self.incremental()
        }
    }

    fn incremental(&self) -> Option<DsdvUpdate> {
        let mut entries: Vec<Advert> = self.table.entries().filter(|e| e.changed).map(advert_of).collect();
        if entries.is_empty() {
            return None;
        }
        if let Some(me) = self.table.get(self.node) {
            entries.insert(0, advert_of(me));
        }
        Some(DsdvUpdate { kind: UpdateKind::Incremental, origin: self.node, entries })
    }

    fn broadcast(&mut self, ctx: &mut Ctx<'_, Self>, update: DsdvUpdate) {
        self.last_update_sent = Some(ctx.now());
        ctx.originate(update, NextHop::Broadcast);
    }

    fn schedule_trigger(&mut self, ctx: &mut Ctx<'_, Self>) {
        if self.trigger_pending {
            return;
        }
        self.trigger_pending = true;
        let spacing = secs(self.params.min_trigger_spacing_s);
        let earliest = self.last_update_sent.map_or(SimTime::ZERO, |t| t + spacing);
        let delay = earliest.saturating_sub(ctx.now());
        ctx.set_timer(delay, DsdvTimer::Triggered);
    }

    /// Poisons routes through a lost neighbor and schedules a triggered update.
    pub fn handle_link_break(&mut self, ctx: &mut Ctx<'_, Self>, lost: NodeId) -> Vec<NodeId> {
        self.neighbors.remove(&lost);
        let hit = self.table.break_via(lost);
        if !hit.is_empty() {
            self.schedule_trigger(ctx);
        }
        hit
    }

    fn check_neighbors(&mut self, ctx: &mut Ctx<'_, Self>) {
        let limit = secs(self.params.periodic_interval_s * f64::from(self.params.missed_updates));
        let now = ctx.now();
        let silent: Vec<NodeId> = self
            .neighbors
            .iter()
            .filter(|(_, &heard)| now.saturating_sub(heard) > limit)
            .map(|(&n, _)| n)
            .collect();
        for n in silent {
            self.handle_link_break(ctx, n);
        }
    }

    fn route_data(&mut self, ctx: &mut Ctx<'_, Self>, pkt: Packet<DsdvUpdate>, originating: bool) -> DispatchOutcome {
        let dst = pkt.data_dst().expect("data packet");
        match self.next_hop(dst) {
            Some(nh) => {
                if originating {
                    ctx.send_data(pkt, nh);
                } else {
                    ctx.forward_data(pkt, nh);
                }
                DispatchOutcome::Forwarded
            }
            None => {
                ctx.drop(pkt, DropReason::NoRoute);
                DispatchOutcome::Dropped(DropReason::NoRoute)
            }
        }
    }
}

fn advert_of(e: &DsdvEntry) -> Advert {
    Advert { dest: e.dest, metric: e.metric, seq: e.seq }
}

impl RoutingAgent for DsdvAgent {
    type Msg = DsdvUpdate;
    type Timer = DsdvTimer;

    fn new(node: NodeId, params: &SimParams) -> Self {
        let mut a = DsdvAgent {
            node,
            params: params.dsdv.clone(),
            own_seq: 0,
            table: DsdvTable::default(),
            ticks: 0,
            neighbors: BTreeMap::new(),
            trigger_pending: false,
            last_update_sent: None,
        };
        a.self_entry(SimTime::ZERO);
        a
    }

    fn start(&mut self, ctx: &mut Ctx<'_, Self>) {
        let offset = ctx.rng().draw_time(SimTime::ZERO, SimTime::from_secs(1));
        ctx.set_timer(offset, DsdvTimer::Periodic);
    }

    fn on_data_from_app(&mut self, ctx: &mut Ctx<'_, Self>, pkt: Packet<DsdvUpdate>) -> DispatchOutcome {
        self.route_data(ctx, pkt, true)
    }

    fn on_packet_from_net(&mut self, ctx: &mut Ctx<'_, Self>, pkt: Packet<DsdvUpdate>, from: NodeId) {
        match pkt.body {
            Body::Data(ref d) => {
                if d.flow.dst == self.node {
                    ctx.deliver(pkt);
                } else {
                    self.route_data(ctx, pkt, false);
                }
            }
            Body::Routing(update) => {
                let now = ctx.now();
                self.neighbors.insert(from, now);
                let mut changed = false;
                for advert in update.entries {
                    if advert.dest == self.node {
                        // Someone poisoned us: out-number the odd sequence.
                        if advert.seq > self.own_seq {
                            self.own_seq = advert.seq + 1 + (advert.seq % 2);
                            self.self_entry(now);
                            if let Some(me) = self.table.entries.get_mut(&self.node) {
                                me.changed = true;
                            }
                            changed = true;
                        }
                        continue;
                    }
                    if self.table.integrate(advert, from, now) != Integration::Ignored {
                        changed = true;
                    }
                }
                if changed {
                    self.schedule_trigger(ctx);
                }
            }
        }
    }

    fn on_link_break(&mut self, ctx: &mut Ctx<'_, Self>, next_hop: NodeId, pkt: Packet<DsdvUpdate>) {
        self.handle_link_break(ctx, next_hop);
        ctx.drop(pkt, DropReason::Callback);
    }

    fn on_timer(&mut self, ctx: &mut Ctx<'_, Self>, timer: DsdvTimer) {
        match timer {
            DsdvTimer::Periodic => {
                self.check_neighbors(ctx);
                if let Some(update) = self.periodic_advertise(ctx.now()) {
                    self.broadcast(ctx, update);
                }
                ctx.set_timer(secs(self.params.periodic_interval_s), DsdvTimer::Periodic);
            }
            DsdvTimer::Triggered => {
                self.trigger_pending = false;
                if let Some(update) = self.incremental() {
                    self.broadcast(ctx, update);
                }
            }
        }
    }

    fn buffered_data(&self) -> usize {
        0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{RandomStream, StreamLabel};
    use crate::routing::{Action, AgentCtx, FlowId, UidSource};

    fn entry(dest: u32, next: u32, metric: u32, seq: u32) -> DsdvEntry {
        DsdvEntry { dest: NodeId(dest), next_hop: NodeId(next), metric, seq, installed: SimTime::ZERO, changed: false }
    }

    fn advert(dest: u32, metric: u32, seq: u32) -> Advert {
        Advert { dest: NodeId(dest), metric, seq }
    }

    #[test]
    fn integrate_installs_unknown_destination() {
        let mut t = DsdvTable::default();
        assert_eq!(t.integrate(advert(9, 2, 4), NodeId(1), SimTime::ZERO), Integration::Installed);
        let e = t.get(NodeId(9)).unwrap();
        assert_eq!((e.metric, e.seq, e.next_hop), (3, 4, NodeId(1)));
    }

    #[test]
    fn higher_sequence_wins() {
        let mut t = DsdvTable::default();
        t.insert(entry(9, 1, 2, 36));
        assert_eq!(t.integrate(advert(9, 5, 38), NodeId(2), SimTime::ZERO), Integration::Replaced);
        let e = t.get(NodeId(9)).unwrap();
        assert_eq!((e.metric, e.seq, e.next_hop), (6, 38, NodeId(2)));
    }

    #[test]
    fn equal_sequence_needs_shorter_metric() {
        let mut t = DsdvTable::default();
        t.insert(entry(9, 1, 2, 36));
        assert_eq!(t.integrate(advert(9, 4, 36), NodeId(2), SimTime::ZERO), Integration::Ignored);
        assert_eq!(t.integrate(advert(9, 1, 36), NodeId(2), SimTime::ZERO), Integration::Ignored);
        assert_eq!(t.integrate(advert(9, 0, 36), NodeId(2), SimTime::ZERO), Integration::Replaced);
        assert_eq!(t.get(NodeId(9)).unwrap().metric, 1);
    }

    #[test]
    fn stale_sequence_is_ignored() {
        let mut t = DsdvTable::default();
        t.insert(entry(9, 1, 5, 36));
        assert_eq!(t.integrate(advert(9, 0, 34), NodeId(2), SimTime::ZERO), Integration::Ignored);
    }

    #[test]
    fn break_poisons_with_odd_sequence() {
        let mut t = DsdvTable::default();
        t.insert(entry(7, 3, 3, 10));
        t.insert(entry(8, 4, 2, 10));
        assert_eq!(t.break_via(NodeId(3)), vec![NodeId(7)]);
        let e = t.get(NodeId(7)).unwrap();
        assert_eq!((e.metric, e.seq), (INFINITE_METRIC, 11));
        assert_eq!(t.get(NodeId(8)).unwrap().metric, 2);
        assert_eq!(t.integrate(advert(7, 1, 12), NodeId(4), SimTime::ZERO), Integration::Replaced);
        assert_eq!(t.get(NodeId(7)).unwrap().metric, 2);
    }

    fn agent() -> DsdvAgent {
        DsdvAgent::new(NodeId(0), &SimParams::default())
    }

    #[test]
    fn first_tick_is_full_dump_with_self() {
        let mut a = agent();
        let u = a.periodic_advertise(SimTime::ZERO).unwrap();
        assert_eq!(u.kind, UpdateKind::FullDump);
        assert!(u.entries.contains(&advert(0, 0, 2)));
    }

    #[test]
    fn quiet_table_suppresses_incremental() {
        let mut a = agent();
        a.periodic_advertise(SimTime::ZERO).unwrap();
        assert_eq!(a.periodic_advertise(SimTime::from_secs(15)), None);
        assert_eq!(a.periodic_advertise(SimTime::from_secs(30)), None);
        assert_eq!(a.periodic_advertise(SimTime::from_secs(45)).unwrap().kind, UpdateKind::FullDump);
    }

    #[test]
    fn changes_produce_incremental() {
        let mut a = agent();
        a.periodic_advertise(SimTime::ZERO).unwrap();
        a.table.integrate(advert(5, 0, 2), NodeId(5), SimTime::ZERO);
        let u = a.periodic_advertise(SimTime::from_secs(15)).unwrap();
        assert_eq!(u.kind, UpdateKind::Incremental);
        assert_eq!(u.entries, vec![advert(0, 0, 2), advert(5, 1, 2)]);
    }

    #[test]
    fn own_sequence_steps_by_two() {
        let mut a = agent();
        a.own_seq = 4;
        let u = a.periodic_advertise(SimTime::ZERO).unwrap();
        assert!(u.entries.contains(&advert(0, 0, 6)));
        assert_eq!(a.own_seq() % 2, 0);
    }

    #[test]
    fn unrouteable_data_is_dropped() {
        let mut a = agent();
        let mut rng = RandomStream::new(0, StreamLabel::Protocol);
        let mut uids = UidSource::default();
        let mut out = Vec::new();
        let mut ctx = AgentCtx::new(NodeId(0), SimTime::ZERO, SimTime::ZERO, &mut rng, &mut uids, &mut out);
        let pkt = Packet::data(1, FlowId { src: NodeId(0), dst: NodeId(3), seq: 0 }, SimTime::ZERO);
        assert_eq!(a.on_data_from_app(&mut ctx, pkt), DispatchOutcome::Dropped(DropReason::NoRoute));
        assert!(matches!(out[0], Action::Drop { reason: DropReason::NoRoute, .. }));
    }
}
