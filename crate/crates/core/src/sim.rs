//! Packet-level simulation of hosts, switches and links.
//!
//! Every directed port is a drop-tail FIFO served at line rate. A packet costs
//! one event per hop: its arrival at the far end of the link, computed when it
//! is enqueued from the port's `busy_until` horizon.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dataplane::codec::{ProbeHeader, SwitchId};
use crate::dataplane::{Fabric, FlowletTableMode, LbConfig, Port, Scheme, SwitchCounters, SwitchState};
use crate::engine::{Event, Scheduler};
use crate::flowdyn::{FlowDynConfig, FlowDynTor};
use crate::metrics::{FlowRecord, PortSample};
use crate::time::{tx_time, SimTime};
use crate::topology::{NetworkGraph, NodeKind};
use crate::transport::{DataPacket, FlowId, Segment, TcpConfig, TcpReceiver, TcpSender, MIN_WIRE_BYTES, TCP_PROTOCOL};

/// IP/UDP encapsulation around a probe header plus its 4-byte sequence number.
const PROBE_ENCAP_BYTES: u32 = 28 + 4;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub lb: LbConfig,
    pub flowdyn: FlowDynConfig,
    pub tcp: TcpConfig,
    pub probe_interval: SimTime,
    /// Probes run only if this is set and FlowDyn or HULA needs them.
    pub probes: bool,
    pub flowlet_table: FlowletTableMode,
    /// EWMA weight of the newest utilization window.
    pub util_alpha: f64,
    /// Port samples are kept for windows starting at or after this time.
    pub sample_from: SimTime,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(scheme: Scheme, flowdyn: bool, seed: u64) -> Self {
        let fd = FlowDynConfig::default();
        let probe_interval = SimTime::from_micros(100);
        Self {
            lb: LbConfig {
                scheme,
                flowdyn,
                static_gap: SimTime::from_micros(800),
                hula_stale: SimTime::from_nanos(10 * probe_interval.as_nanos()),
                gap_stale: fd.staleness_window,
            },
            flowdyn: fd,
            tcp: TcpConfig::default(),
            probe_interval,
            probes: true,
            flowlet_table: FlowletTableMode::Exact,
            util_alpha: 0.2,
            sample_from: SimTime::ZERO,
            seed,
        }
    }

    fn probes_needed(&self) -> bool {
        self.probes && (self.lb.flowdyn || self.lb.scheme == Scheme::Hula)
    }
}

#[derive(Debug, Clone)]
enum Packet {
    Data(DataPacket),
    Probe(ProbeHeader),
}

#[derive(Debug, Clone)]
enum Ev {
    Arrive { node: u32, port: u32, pkt: Box<Packet> },
    Rto { conn: u32, at: SimTime },
    AppWrite { conn: u32, bytes: u64 },
    FlowStart { conn: u32 },
    ProbeEmit { tor: u32 },
}

impl Ev {
    fn label(&self) -> (&'static str, u32) {
        match self {
            Ev::Arrive { node, pkt, .. } => match **pkt {
                Packet::Data(ref d) if d.is_ack => ("ack", *node),
                Packet::Data(_) => ("data", *node),
                Packet::Probe(_) => ("probe", *node),
            },
            Ev::Rto { conn, .. } => ("rto", *conn),
            Ev::AppWrite { conn, .. } => ("write", *conn),
            Ev::FlowStart { conn } => ("start", *conn),
            Ev::ProbeEmit { tor } => ("emit", *tor),
        }
    }
}

#[derive(Debug, Clone)]
struct PortQueue {
    rate: u64,
    prop: SimTime,
    cap: u64,
    enabled: bool,
    peer: u32,
    peer_port: u32,
    busy_until: SimTime,
    /// Busy nanoseconds of the current window and the ones after it.
    windows: std::collections::VecDeque<u64>,
    win_idx: u64,
    ewma: f64,
    bytes_sent: u64,
    drops: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetCounters {
    pub data_packets: u64,
    pub ack_packets: u64,
    pub probe_packets: u64,
    pub probe_bytes: u64,
    pub drops: u64,
    pub probe_drops: u64,
    pub black_holes: u64,
    pub unknown_acks: u64,
}

#[derive(Debug, Clone)]
struct Conn {
    flow: FlowId,
    src: usize,
    dst: usize,
    start: SimTime,
    sender: TcpSender,
    receiver: TcpReceiver,
    finish: Option<SimTime>,
    timer_at: Option<SimTime>,
    started: bool,
}

struct World {
    cfg: SimConfig,
    fabric: Fabric,
    switches: Vec<Option<SwitchState>>,
    port_base: Vec<usize>,
    queues: Vec<PortQueue>,
    conns: Vec<Conn>,
    counters: NetCounters,
    samples: Vec<PortSample>,
    trace: Option<Box<dyn Write + Send>>,
}

pub struct Simulator {
    sched: Scheduler<Ev>,
    world: World,
}

impl Simulator {
    pub fn new(graph: &NetworkGraph, cfg: SimConfig) -> Self {
        let fabric = Fabric::new(graph);
        let n = fabric.num_nodes();
        let mut port_base = Vec::with_capacity(n + 1);
        let mut queues = Vec::new();
        for node in 0..n {
            port_base.push(queues.len());
            for (p, adj) in fabric.ports(node).iter().enumerate() {
                let link = graph.link(adj.link);
                queues.push(PortQueue {
                    rate: link.capacity_bps,
                    prop: link.propagation_delay,
                    cap: link.queue_capacity,
                    enabled: link.enabled,
                    peer: adj.peer as u32,
                    peer_port: fabric.peer_port(node, p) as u32,
                    busy_until: SimTime::ZERO,
                    windows: std::collections::VecDeque::from([0]),
                    win_idx: 0,
                    ewma: 0.0,
                    bytes_sent: 0,
                    drops: 0,
                });
            }
        }
        port_base.push(queues.len());
        let switches = (0..n)
            .map(|node| {
                let kind = fabric.kind(node);
                (kind != NodeKind::Host).then(|| {
                    let mut s = SwitchState::new(node, kind, cfg.flowlet_table, cfg.seed);
                    if kind == NodeKind::EdgeToR && cfg.lb.flowdyn {
                        s.flowdyn = Some(FlowDynTor::new(SwitchId::from_index(node), cfg.flowdyn.clone()));
                    }
                    s
                })
            })
            .collect();
        let mut sched = Scheduler::new();
        if cfg.probes_needed() {
            let tors = fabric.tors().to_vec();
            let step = cfg.probe_interval.as_nanos() / tors.len().max(1) as u64;
            for (i, &t) in tors.iter().enumerate() {
                sched.schedule(SimTime::from_nanos(step * i as u64), Ev::ProbeEmit { tor: t as u32 });
            }
        }
        Self {
            sched,
            world: World {
                cfg,
                fabric,
                switches,
                port_base,
                queues,
                conns: Vec::new(),
                counters: NetCounters::default(),
                samples: Vec::new(),
                trace: None,
            },
        }
    }

    /// One line per processed event: `time_ns kind node`.
    pub fn set_trace(&mut self, w: Box<dyn Write + Send>) {
        self.world.trace = Some(w);
    }

    pub fn now(&self) -> SimTime {
        self.sched.now()
    }

    pub fn config(&self) -> &SimConfig {
        &self.world.cfg
    }

    pub fn fabric(&self) -> &Fabric {
        &self.world.fabric
    }

    fn new_conn(&mut self, src: usize, dst: usize, start: SimTime, sender: TcpSender) -> usize {
        let w = &mut self.world;
        assert_eq!(w.fabric.kind(src), NodeKind::Host, "flow source is not a host");
        assert_eq!(w.fabric.kind(dst), NodeKind::Host, "flow destination is not a host");
        let id = w.conns.len();
        let node_id = |i: usize| crate::topology::NodeId {
            kind: NodeKind::Host,
            index: i as u32,
            pod: w.fabric.pod(i),
        };
        let flow = FlowId {
            src_host: node_id(src),
            dst_host: node_id(dst),
            src_port: 1024 + (id % 64_000) as u16,
            dst_port: 5001,
            protocol: TCP_PROTOCOL,
        };
        w.conns.push(Conn {
            flow,
            src,
            dst,
            start,
            sender,
            receiver: TcpReceiver::default(),
            finish: None,
            timer_at: None,
            started: false,
        });
        self.sched.schedule(start, Ev::FlowStart { conn: id as u32 });
        id
    }

    /// Bulk transfer of `bytes` from host `src` to host `dst` starting at `start`.
    pub fn add_flow(&mut self, src: usize, dst: usize, bytes: u64, start: SimTime) -> usize {
        let sender = TcpSender::new(bytes, self.world.cfg.tcp.clone());
        self.new_conn(src, dst, start, sender)
    }

    /// A flow whose application hands bytes to TCP at the given times.
    pub fn add_paced_flow(&mut self, src: usize, dst: usize, writes: &[(SimTime, u64)]) -> usize {
        let total: u64 = writes.iter().map(|w| w.1).sum();
        let start = writes.iter().map(|w| w.0).min().expect("at least one write");
        let sender = TcpSender::app_limited(total, self.world.cfg.tcp.clone());
        let id = self.new_conn(src, dst, start, sender);
        for &(t, bytes) in writes {
            self.sched.schedule(t, Ev::AppWrite { conn: id as u32, bytes });
        }
        id
    }

    /// Pin a gap at `switch` toward `dst_tor` that no piggybacked header can
    /// replace. It only stays in force if the staleness windows are unbounded.
    pub fn install_gap(&mut self, switch: usize, dst_tor: usize, gap: SimTime) {
        let now = self.now();
        let sw = self.world.switches[switch].as_mut().expect("not a switch");
        let dst = SwitchId::from_index(dst_tor);
        match sw.flowdyn.as_mut() {
            Some(tor) => tor.local.install(dst, gap, u32::MAX, now),
            None => sw.gaps.install(dst, gap, u32::MAX, now),
        }
    }

    pub fn switch(&self, node: usize) -> Option<&SwitchState> {
        self.world.switches[node].as_ref()
    }

    pub fn switch_mut(&mut self, node: usize) -> Option<&mut SwitchState> {
        self.world.switches[node].as_mut()
    }

    pub fn run_until(&mut self, t_end: SimTime) -> u64 {
        let world = &mut self.world;
        let n = self.sched.run_until(t_end, |s, ev| world.handle(s, ev));
        if let Some(t) = world.trace.as_mut() {
            let _ = t.flush();
        }
        n
    }

    pub fn events_processed(&self) -> u64 {
        self.sched.processed()
    }

    pub fn counters(&self) -> NetCounters {
        let mut c = self.world.counters;
        c.drops = self.world.queues.iter().map(|q| q.drops).sum();
        c
    }

    pub fn switch_counters(&self) -> SwitchCounters {
        let mut total = SwitchCounters::default();
        for s in self.world.switches.iter().flatten() {
            let c = &s.counters;
            total.new_flowlets += c.new_flowlets;
            total.same_flowlet += c.same_flowlet;
            total.black_holes += c.black_holes;
            total.own_probe_drops += c.own_probe_drops;
            total.probes_consumed += c.probes_consumed;
            total.probes_replicated += c.probes_replicated;
            total.gap_headers_seen += c.gap_headers_seen;
            total.gap_headers_stale += c.gap_headers_stale;
            total.gap_headers_stripped += c.gap_headers_stripped;
        }
        total
    }

    pub fn record(&self, conn: usize) -> FlowRecord {
        let c = &self.world.conns[conn];
        FlowRecord {
            flow: c.flow,
            size: c.sender.size(),
            start: c.start,
            finish: c.finish,
            retransmissions: c.sender.retransmissions,
            reorder_events: c.receiver.reorder_events,
            completed: c.finish.is_some(),
            delivered: c.receiver.delivered(),
        }
    }

    pub fn records(&self) -> Vec<FlowRecord> {
        (0..self.world.conns.len()).map(|i| self.record(i)).collect()
    }

    /// Close every sampling window that ended by now and return all samples.
    pub fn port_samples(&mut self) -> &[PortSample] {
        let now = self.now();
        let w = &mut self.world;
        let idx = now.as_nanos() / w.cfg.probe_interval.as_nanos();
        for node in 0..w.fabric.num_nodes() {
            for p in 0..w.fabric.ports(node).len() {
                w.advance(node, p, idx);
            }
        }
        &w.samples
    }

    /// Bytes sent so far on a directed port.
    pub fn port_bytes(&self, node: usize, port: Port) -> u64 {
        self.world.queues[self.world.port_base[node] + port].bytes_sent
    }

    /// EWMA utilization of a directed port as HULA sees it.
    pub fn port_utilization(&mut self, node: usize, port: Port) -> f64 {
        let now = self.now();
        self.world.utilization(node, port, now)
    }
}

impl World {
    fn qi(&self, node: usize, port: Port) -> usize {
        self.port_base[node] + port
    }

    /// Roll the port's windows forward so that `idx` is current.
    fn advance(&mut self, node: usize, port: Port, idx: u64) {
        let qi = self.qi(node, port);
        let window = self.cfg.probe_interval.as_nanos();
        let alpha = self.cfg.util_alpha;
        let sample_from = self.cfg.sample_from;
        let q = &mut self.queues[qi];
        while q.win_idx < idx {
            let busy = q.windows.pop_front().unwrap_or(0);
            if q.windows.is_empty() {
                q.windows.push_back(0);
            }
            let start = SimTime::from_nanos(q.win_idx * window);
            if busy > 0 && start >= sample_from {
                self.samples.push(PortSample {
                    node,
                    port,
                    window_start: start,
                    bytes_sent: (u128::from(busy) * u128::from(q.rate) / 8_000_000_000) as u64,
                });
            }
            q.ewma = alpha * (busy as f64 / window as f64) + (1.0 - alpha) * q.ewma;
            q.win_idx += 1;
            if busy == 0 && q.windows.iter().all(|&b| b == 0) && q.win_idx < idx {
                // idle stretch: decay in one step
                let k = idx - q.win_idx;
                q.ewma *= (1.0 - alpha).powi(k.min(i32::MAX as u64) as i32);
                q.win_idx = idx;
            }
        }
    }

    fn utilization(&mut self, node: usize, port: Port, now: SimTime) -> f64 {
        let idx = now.as_nanos() / self.cfg.probe_interval.as_nanos();
        self.advance(node, port, idx);
        self.queues[self.qi(node, port)].ewma
    }

    fn account(&mut self, node: usize, port: Port, start: SimTime, finish: SimTime) {
        let window = self.cfg.probe_interval.as_nanos();
        let qi = self.qi(node, port);
        let q = &mut self.queues[qi];
        let (mut s, f) = (start.as_nanos(), finish.as_nanos());
        while s < f {
            let idx = s / window;
            let end = ((idx + 1) * window).min(f);
            let slot = (idx - q.win_idx) as usize;
            while q.windows.len() <= slot {
                q.windows.push_back(0);
            }
            q.windows[slot] += end - s;
            s = end;
        }
    }

    /// Drop-tail enqueue. Returns false if the packet was dropped.
    fn enqueue(&mut self, sched: &mut Scheduler<Ev>, node: usize, port: Port, pkt: Packet, bytes: u32) -> bool {
        let now = sched.now();
        let qi = self.qi(node, port);
        if !self.queues[qi].enabled {
            self.counters.black_holes += 1;
            return false;
        }
        self.advance(node, port, now.as_nanos() / self.cfg.probe_interval.as_nanos());
        let is_host = self.fabric.kind(node) == NodeKind::Host;
        let q = &mut self.queues[qi];
        let backlog_ns = q.busy_until.saturating_sub(now).as_nanos();
        let backlog = (u128::from(backlog_ns) * u128::from(q.rate) / 8_000_000_000) as u64;
        // a host NIC pushes back on its sockets instead of dropping
        if backlog + u64::from(bytes) > q.cap && !is_host {
            q.drops += 1;
            if matches!(pkt, Packet::Probe(_)) {
                self.counters.probe_drops += 1;
            }
            return false;
        }
        let start = q.busy_until.max(now);
        let finish = start + tx_time(u64::from(bytes), q.rate);
        q.busy_until = finish;
        q.bytes_sent += u64::from(bytes);
        let (peer, peer_port, arrive) = (q.peer, q.peer_port, finish + q.prop);
        self.account(node, port, start, finish);
        sched.schedule(
            arrive,
            Ev::Arrive {
                node: peer,
                port: peer_port,
                pkt: Box::new(pkt),
            },
        );
        true
    }

    fn handle(&mut self, sched: &mut Scheduler<Ev>, ev: Event<Ev>) {
        if let Some(t) = self.trace.as_mut() {
            let (kind, id) = ev.payload.label();
            let _ = writeln!(t, "{} {} {}", ev.time.as_nanos(), kind, id);
        }
        match ev.payload {
            Ev::Arrive { node, port, pkt } => {
                let (node, port) = (node as usize, port as usize);
                match *pkt {
                    Packet::Probe(p) => self.on_probe(sched, node, port, p),
                    Packet::Data(d) if self.fabric.kind(node) == NodeKind::Host => self.on_host_packet(sched, node, d),
                    Packet::Data(d) => self.on_switch_packet(sched, node, port, d),
                }
            }
            Ev::Rto { conn, at } => self.on_rto(sched, conn as usize, at),
            Ev::AppWrite { conn, bytes } => {
                let c = &mut self.conns[conn as usize];
                c.sender.release(bytes);
                if c.started {
                    self.pump(sched, conn as usize);
                }
            }
            Ev::FlowStart { conn } => {
                self.conns[conn as usize].started = true;
                self.pump(sched, conn as usize);
            }
            Ev::ProbeEmit { tor } => self.emit_probes(sched, tor as usize),
        }
    }

    fn emit_probes(&mut self, sched: &mut Scheduler<Ev>, tor: usize) {
        let now = sched.now();
        let with_util = self.cfg.lb.scheme == Scheme::Hula;
        let probe = self.switches[tor].as_mut().expect("tor").emit_probe(now, with_util);
        let ups: Vec<Port> = self.fabric.up_ports(tor).collect();
        for p in ups {
            self.send_probe(sched, tor, p, probe.clone());
        }
        sched.schedule(now + self.cfg.probe_interval, Ev::ProbeEmit { tor: tor as u32 });
    }

    fn send_probe(&mut self, sched: &mut Scheduler<Ev>, node: usize, port: Port, probe: ProbeHeader) {
        let bytes = (probe.encoded_len() as u32 + PROBE_ENCAP_BYTES).max(MIN_WIRE_BYTES);
        if self.enqueue(sched, node, port, Packet::Probe(probe), bytes) {
            self.counters.probe_packets += 1;
            self.counters.probe_bytes += u64::from(bytes);
        }
    }

    fn on_probe(&mut self, sched: &mut Scheduler<Ev>, node: usize, ingress: Port, mut probe: ProbeHeader) {
        let now = sched.now();
        let origin = probe.origin_tor.index();
        let kind = self.fabric.kind(node);
        let util = if probe.util.is_some() {
            self.utilization(node, ingress, now)
        } else {
            0.0
        };
        let stale = self.cfg.lb.hula_stale;
        let sw = self.switches[node].as_mut().expect("probes stay on switches");
        if kind == NodeKind::EdgeToR {
            if origin == node {
                sw.counters.own_probe_drops += 1;
                return;
            }
            sw.update_hula(&self.fabric, &mut probe, ingress, util, now, stale);
            sw.counters.probes_consumed += 1;
            if let Some(fd) = sw.flowdyn.as_mut() {
                fd.on_probe_received(&probe, now);
            }
            return;
        }
        if probe.push_hop(sw.id).is_err() {
            // a loop would mean broken replication rules; drop rather than circulate
            sw.counters.own_probe_drops += 1;
            return;
        }
        sw.update_hula(&self.fabric, &mut probe, ingress, util, now, stale);
        let out = self.fabric.replicate_ports(node, origin, ingress);
        let sw = self.switches[node].as_mut().expect("switch");
        sw.counters.probes_replicated += out.len() as u64;
        for p in out {
            self.send_probe(sched, node, p, probe.clone());
        }
    }

    fn on_switch_packet(&mut self, sched: &mut Scheduler<Ev>, node: usize, ingress: Port, mut pkt: DataPacket) {
        let now = sched.now();
        let c = &self.conns[pkt.conn as usize];
        let dst_host = if pkt.is_ack { c.src } else { c.dst };
        let dst_tor = self.fabric.tor_of_host(dst_host);
        let from_host = self.fabric.kind(self.fabric.peer(node, ingress)) == NodeKind::Host;
        let sw = self.switches[node].as_mut().expect("switch");
        if self.cfg.lb.flowdyn {
            if let Some(h) = pkt.piggyback {
                if sw.handle_gap_header(&h, node == dst_tor, now) {
                    pkt.piggyback = None;
                }
            }
            if from_host && node != dst_tor {
                if let Some(fd) = sw.flowdyn.as_mut() {
                    pkt.piggyback = fd.piggyback_gap(SwitchId::from_index(dst_tor), now);
                }
            }
        }
        let Some(port) = sw.forward(&self.fabric, &self.cfg.lb, &pkt.flow, dst_host, now) else {
            self.counters.black_holes += 1;
            return;
        };
        let bytes = pkt.wire_bytes(&self.cfg.tcp);
        self.enqueue(sched, node, port, Packet::Data(pkt), bytes);
    }

    fn host_port(&self, host: usize) -> Port {
        debug_assert_eq!(self.fabric.ports(host).len(), 1);
        0
    }

    fn on_host_packet(&mut self, sched: &mut Scheduler<Ev>, host: usize, pkt: DataPacket) {
        let now = sched.now();
        let ci = pkt.conn as usize;
        let Some(c) = self.conns.get_mut(ci) else {
            self.counters.unknown_acks += 1;
            return;
        };
        debug_assert!(pkt.piggyback.is_none(), "gap header reached a host");
        if !pkt.is_ack {
            debug_assert_eq!(host, c.dst);
            let ack_seq = c.receiver.on_data(pkt.seq, pkt.length, pkt.retransmit);
            let ack = DataPacket {
                flow: c.flow.reversed(),
                conn: pkt.conn,
                seq: 0,
                length: 0,
                is_ack: true,
                ack_seq,
                piggyback: None,
                sent_time: now,
                retransmit: pkt.retransmit,
                echo_time: pkt.sent_time,
            };
            let bytes = ack.wire_bytes(&self.cfg.tcp);
            let port = self.host_port(host);
            if self.enqueue(sched, host, port, Packet::Data(ack), bytes) {
                self.counters.ack_packets += 1;
            }
            return;
        }
        if c.finish.is_some() {
            return;
        }
        let out = c.sender.on_ack(pkt.ack_seq, pkt.echo_time, pkt.retransmit, now);
        if out.completed {
            c.finish = Some(now);
        }
        self.transmit(sched, ci, &out.segments);
        self.arm(sched, ci);
    }

    fn pump(&mut self, sched: &mut Scheduler<Ev>, ci: usize) {
        let now = sched.now();
        let segs = self.conns[ci].sender.poll_send(now);
        self.transmit(sched, ci, &segs);
        self.arm(sched, ci);
    }

    fn transmit(&mut self, sched: &mut Scheduler<Ev>, ci: usize, segs: &[Segment]) {
        let now = sched.now();
        let (flow, src) = (self.conns[ci].flow, self.conns[ci].src);
        let port = self.host_port(src);
        for s in segs {
            let pkt = DataPacket {
                flow,
                conn: ci as u32,
                seq: s.seq,
                length: s.len,
                is_ack: false,
                ack_seq: 0,
                piggyback: None,
                sent_time: now,
                retransmit: s.retransmit,
                echo_time: SimTime::ZERO,
            };
            let bytes = pkt.wire_bytes(&self.cfg.tcp);
            if self.enqueue(sched, src, port, Packet::Data(pkt), bytes) {
                self.counters.data_packets += 1;
            }
        }
    }

    /// Make sure a timer event exists at or before the sender's RTO deadline.
    fn arm(&mut self, sched: &mut Scheduler<Ev>, ci: usize) {
        let c = &mut self.conns[ci];
        let Some(d) = c.sender.rto_deadline() else {
            return;
        };
        if c.timer_at.is_none_or(|t| t > d) {
            c.timer_at = Some(d);
            sched.schedule(d, Ev::Rto { conn: ci as u32, at: d });
        }
    }

    fn on_rto(&mut self, sched: &mut Scheduler<Ev>, ci: usize, at: SimTime) {
        let now = sched.now();
        let c = &mut self.conns[ci];
        if c.timer_at != Some(at) {
            return;
        }
        c.timer_at = None;
        if c.finish.is_some() {
            return;
        }
        let segs = c.sender.on_rto(now);
        self.transmit(sched, ci, &segs);
        self.arm(sched, ci);
    }
}
