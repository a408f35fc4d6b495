//! One simulation run: wires mobility, traffic, the medium and a routing
//! agent per node onto the event engine and emits the trace.

use std::collections::HashMap;

use crate::config::SimParams;
use crate::engine::{Engine, RandomStream, RunSummary, SimTime, StreamLabel};
use crate::medium::{MacCounters, MacTimer, Medium};
use crate::metrics::{DropReason, Layer, PacketType, TraceEvent, TraceRecord, TraceSink};
use crate::mobility::{MobilityPlan, Position};
use crate::node::NodeId;
use crate::routing::{
    dispatch_data, Action, AgentCtx, Body, FlowId, NextHop, Packet, RouteWitness, RoutingAgent, RoutingMessage,
    UidSource,
};
use crate::traffic::TrafficPlan;

enum SimEvent<M, T> {
    Mac(MacTimer),
    Timer(NodeId, T),
    Emit(usize),
    Enqueue { node: NodeId, pkt: Packet<M>, next_hop: NextHop },
}

/// Optional instrumentation for property checks.
#[derive(Debug, Clone, Copy, Default)]
pub struct Instrumentation {
    /// Record each data packet's per-hop route state and check sequence
    /// number monotonicity on delivery.
    pub track_paths: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoopViolation {
    pub uid: u64,
    pub path: Vec<(NodeId, Option<RouteWitness>)>,
}

/// Result of a run; the agents are returned for state inspection.
pub struct RunOutcome<A> {
    pub summary: RunSummary,
    /// Data packets still held in queues or buffers when the run ended.
    pub residual_data: u64,
    pub mac: MacCounters,
    pub loop_violations: Vec<LoopViolation>,
    pub revisits: u64,
    pub agents: Vec<A>,
}

pub struct Simulator<'p, A: RoutingAgent> {
    params: &'p SimParams,
    plan: &'p MobilityPlan,
    traffic: &'p TrafficPlan,
    duration: SimTime,
    seed: u64,
    instrumentation: Instrumentation,
    _agent: std::marker::PhantomData<A>,
}

impl<'p, A: RoutingAgent> Simulator<'p, A> {
    pub fn new(params: &'p SimParams, plan: &'p MobilityPlan, traffic: &'p TrafficPlan, duration: SimTime, seed: u64) -> Self {
        Simulator {
            params,
            plan,
            traffic,
            duration,
            seed,
            instrumentation: Instrumentation::default(),
            _agent: std::marker::PhantomData,
        }
    }

    pub fn with_instrumentation(mut self, inst: Instrumentation) -> Self {
        self.instrumentation = inst;
        self
    }

    pub fn run(self, sink: &mut dyn TraceSink) -> RunOutcome<A> {
        let n = self.plan.node_count();
        let mut world = World::<A> {
            params: self.params,
            plan: self.plan,
            traffic: self.traffic,
            duration: self.duration,
            agents: (0..n).map(|i| A::new(NodeId(i as u32), self.params)).collect(),
            medium: Medium::new(self.params.radio.clone(), n),
            mac_rng: RandomStream::new(self.seed, StreamLabel::MacJitter),
            proto_rng: RandomStream::new(self.seed, StreamLabel::Protocol),
            uids: UidSource::default(),
            flow_seq: vec![0; self.traffic.connections.len()],
            positions: Vec::with_capacity(n),
            positions_at: None,
            actions: Vec::new(),
            sink,
            inst: self.instrumentation,
            paths: HashMap::new(),
            loop_violations: Vec::new(),
            revisits: 0,
        };
        let mut engine: Engine<SimEvent<A::Msg, A::Timer>> = Engine::new();

        for i in 0..n {
            let node = NodeId(i as u32);
            world.with_agent(&mut engine, node, |a, ctx| a.start(ctx));
        }
        for (i, c) in self.traffic.connections.iter().enumerate() {
            let at = SimTime::from_secs_f64(c.start_s);
            if at < self.duration {
                engine.schedule(at, SimEvent::Emit(i)).expect("start in the future");
            }
        }

        let summary = engine.run_until(self.duration, |eng, ev| world.handle(eng, ev.payload));

        let residual = world.medium.queued_packets().filter(|p| p.is_data()).count() as u64
            + world.agents.iter().map(|a| a.buffered_data() as u64).sum::<u64>();
        RunOutcome {
            summary,
            residual_data: residual,
            mac: world.medium.counters(),
            loop_violations: world.loop_violations,
            revisits: world.revisits,
            agents: world.agents,
        }
    }
}

struct World<'p, 's, A: RoutingAgent> {
    params: &'p SimParams,
    plan: &'p MobilityPlan,
    traffic: &'p TrafficPlan,
    duration: SimTime,
    agents: Vec<A>,
    medium: Medium<A::Msg>,
    mac_rng: RandomStream,
    proto_rng: RandomStream,
    uids: UidSource,
    flow_seq: Vec<u64>,
    positions: Vec<Position>,
    positions_at: Option<SimTime>,
    actions: Vec<Action<A::Msg, A::Timer>>,
    sink: &'s mut dyn TraceSink,
    inst: Instrumentation,
    paths: HashMap<u64, Vec<(NodeId, Option<RouteWitness>)>>,
    loop_violations: Vec<LoopViolation>,
    revisits: u64,
}

type Eng<A> = Engine<SimEvent<<A as RoutingAgent>::Msg, <A as RoutingAgent>::Timer>>;

impl<A: RoutingAgent> World<'_, '_, A> {
    fn handle(&mut self, eng: &mut Eng<A>, ev: SimEvent<A::Msg, A::Timer>) {
        match ev {
            SimEvent::Emit(i) => self.emit(eng, i),
            SimEvent::Timer(node, t) => self.with_agent(eng, node, |a, ctx| a.on_timer(ctx, t)),
            SimEvent::Enqueue { node, pkt, next_hop } => self.enqueue(eng, node, pkt, next_hop),
            SimEvent::Mac(MacTimer::Attempt(node)) => {
                self.refresh_positions(eng.now());
                if let Some((at, t)) = self.medium.on_attempt(node, eng.now(), &self.positions, &mut self.mac_rng) {
                    eng.schedule(at, SimEvent::Mac(t)).expect("future mac event");
                }
            }
            SimEvent::Mac(MacTimer::TxEnd(id)) => {
                let out = self.medium.on_tx_end(id, eng.now(), &mut self.mac_rng);
                if let Some((at, t)) = out.next {
                    eng.schedule(at, SimEvent::Mac(t)).expect("future mac event");
                }
                for (rx, pkt) in out.collided {
                    self.trace_drop(eng.now(), rx, &pkt, DropReason::Collision);
                }
                let from = out.sender;
                for (rx, pkt) in out.delivered {
                    self.with_agent(eng, rx, |a, ctx| a.on_packet_from_net(ctx, pkt, from));
                }
                for (next_hop, pkt) in out.failed {
                    self.with_agent(eng, from, |a, ctx| a.on_link_break(ctx, next_hop, pkt));
                }
            }
        }
    }

    fn refresh_positions(&mut self, now: SimTime) {
        if self.positions_at != Some(now) {
            self.plan.positions_at(now, &mut self.positions);
            self.positions_at = Some(now);
        }
    }

    fn emit(&mut self, eng: &mut Eng<A>, i: usize) {
        let now = eng.now();
        let conn = &self.traffic.connections[i];
        let seq = self.flow_seq[i];
        self.flow_seq[i] += 1;
        let flow = FlowId { src: conn.src, dst: conn.dst, seq };
        let mut pkt = Packet::data(self.uids.next(), flow, now);
        if let Some(d) = pkt.as_data_mut() {
            d.payload = conn.size;
        }
        self.sink.record(&TraceRecord {
            event: TraceEvent::Send,
            time: now,
            node: conn.src,
            layer: Layer::Agt,
            uid: pkt.uid,
            ptype: PacketType::Cbr,
            size: conn.size,
            src: Some(conn.src),
            dst: Some(conn.dst),
            reason: None,
        });
        let next = SimTime::from_secs_f64(conn.start_s) + conn.interval().mul(seq + 1);
        if next < self.duration {
            eng.schedule(next, SimEvent::Emit(i)).expect("future emission");
        }
        if self.inst.track_paths {
            self.paths.insert(pkt.uid, Vec::new());
        }
        self.with_agent(eng, conn.src, |a, ctx| {
            dispatch_data(a, ctx, pkt);
        });
    }

    /// Runs one agent callback and applies the actions it produced.
    fn with_agent<F>(&mut self, eng: &mut Eng<A>, node: NodeId, f: F)
    where
        F: FnOnce(&mut A, &mut AgentCtx<'_, A::Msg, A::Timer>),
    {
        let now = eng.now();
        let jitter = SimTime::from_millis(self.params.radio.broadcast_jitter_ms);
        let mut actions = std::mem::take(&mut self.actions);
        {
            let mut ctx = AgentCtx::new(node, now, jitter, &mut self.proto_rng, &mut self.uids, &mut actions);
            f(&mut self.agents[node.index()], &mut ctx);
        }
        for action in actions.drain(..) {
            match action {
                Action::Transmit { pkt, next_hop, delay, trace } => {
                    if let Some(ev) = trace {
                        self.trace_rtr(now, node, ev, &pkt);
                    }
                    if self.inst.track_paths {
                        self.note_hop(node, &pkt, now);
                    }
                    if delay == SimTime::ZERO {
                        self.enqueue(eng, node, pkt, next_hop);
                    } else {
                        debug_assert!(!pkt.is_data(), "data packets are never delayed");
                        eng.schedule_in(delay, SimEvent::Enqueue { node, pkt, next_hop });
                    }
                }
                Action::Timer { after, timer } => {
                    eng.schedule_in(after, SimEvent::Timer(node, timer));
                }
                Action::Deliver(pkt) => self.deliver(now, node, pkt),
                Action::Drop { pkt, reason } => {
                    if self.inst.track_paths {
                        self.paths.remove(&pkt.uid);
                    }
                    self.trace_drop(now, node, &pkt, reason);
                }
            }
        }
        self.actions = actions;
    }

    fn enqueue(&mut self, eng: &mut Eng<A>, node: NodeId, pkt: Packet<A::Msg>, next_hop: NextHop) {
        let frame = self.medium.frame(pkt, node, next_hop);
        match self.medium.enqueue(frame, eng.now(), &mut self.mac_rng) {
            Ok(Some((at, t))) => {
                eng.schedule(at, SimEvent::Mac(t)).expect("future mac event");
            }
            Ok(None) => {}
            Err(frame) => {
                if self.inst.track_paths {
                    self.paths.remove(&frame.pkt.uid);
                }
                self.trace_drop(eng.now(), node, &frame.pkt, DropReason::Ifq);
            }
        }
    }

    fn note_hop(&mut self, node: NodeId, pkt: &Packet<A::Msg>, now: SimTime) {
        if let Some(d) = pkt.as_data() {
            let w = self.agents[node.index()].route_witness(d.flow.dst, now);
            if let Some(path) = self.paths.get_mut(&pkt.uid) {
                // A node re-sending after a failed attempt is the same hop.
                match path.last_mut() {
                    Some(last) if last.0 == node => last.1 = w,
                    _ => path.push((node, w)),
                }
            }
        }
    }

    fn deliver(&mut self, now: SimTime, node: NodeId, pkt: Packet<A::Msg>) {
        let Some(d) = pkt.as_data() else { return };
        self.sink.record(&TraceRecord {
            event: TraceEvent::Receive,
            time: now,
            node,
            layer: Layer::Agt,
            uid: pkt.uid,
            ptype: PacketType::Cbr,
            size: d.payload,
            src: Some(d.flow.src),
            dst: Some(d.flow.dst),
            reason: None,
        });
        if let Some(mut path) = self.paths.remove(&pkt.uid) {
            path.push((node, None));
            let mut seen: Vec<NodeId> = path.iter().map(|h| h.0).collect();
            seen.sort();
            let before = seen.len();
            seen.dedup();
            if seen.len() != before {
                self.revisits += 1;
            }
            if !witness_monotone(&path) {
                self.loop_violations.push(LoopViolation { uid: pkt.uid, path });
            }
        }
    }

    fn record_for(&self, pkt: &Packet<A::Msg>) -> (PacketType, Option<NodeId>, Option<NodeId>) {
        match &pkt.body {
            Body::Data(d) => (PacketType::Cbr, Some(d.flow.src), Some(d.flow.dst)),
            Body::Routing(m) => {
                let (s, d) = m.endpoints();
                (PacketType::Routing(m.tag()), s, d)
            }
        }
    }

    fn trace_rtr(&mut self, now: SimTime, node: NodeId, event: TraceEvent, pkt: &Packet<A::Msg>) {
        let (ptype, src, dst) = self.record_for(pkt);
        self.sink.record(&TraceRecord {
            event,
            time: now,
            node,
            layer: Layer::Rtr,
            uid: pkt.uid,
            ptype,
            size: pkt.size(),
            src,
            dst,
            reason: None,
        });
    }

    fn trace_drop(&mut self, now: SimTime, node: NodeId, pkt: &Packet<A::Msg>, reason: DropReason) {
        let (ptype, src, dst) = self.record_for(pkt);
        self.sink.record(&TraceRecord {
            event: TraceEvent::Drop,
            time: now,
            node,
            layer: reason.layer(),
            uid: pkt.uid,
            ptype,
            size: pkt.size(),
            src,
            dst,
            reason: Some(reason),
        });
    }
}

/// Along a forwarding path, `(dest_seq, -hops)` must not decrease. Hops
/// without a witness are skipped.
pub fn witness_monotone(path: &[(NodeId, Option<RouteWitness>)]) -> bool {
    let ws: Vec<RouteWitness> = path.iter().filter_map(|h| h.1).collect();
    ws.windows(2).all(|w| {
        let (a, b) = (w[0], w[1]);
        b.dest_seq > a.dest_seq || (b.dest_seq == a.dest_seq && b.hops < a.hops)
    })
}
