//! Emulated programmable switch pipeline.
//!
//! [`Fabric`] is a precomputed routing view of the topology: for every switch
//! and destination ToR it knows either the single downward port or the set of
//! upward candidates a load-balancing scheme may choose from. [`SwitchState`]
//! holds the per-switch registers (flowlet table, gap table, HULA best hops).

pub mod codec;

use std::collections::{BTreeMap, HashMap};
use std::hash::Hasher;

use fnv::FnvHasher;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::flowdyn::{FlowDynTor, GapTable};
use crate::time::SimTime;
use crate::topology::{Adjacency, NetworkGraph, NodeKind};
use crate::transport::FlowId;
use codec::{GapHeader, ProbeHeader, SwitchId};

/// Local port number on a node (index into its adjacency list).
pub type Port = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Ecmp,
    LetFlow,
    Hula,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Ecmp => "ecmp",
            Scheme::LetFlow => "letflow",
            Scheme::Hula => "hula",
        }
    }

    pub fn uses_flowlets(self) -> bool {
        self != Scheme::Ecmp
    }
}

impl std::str::FromStr for Scheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ecmp" => Ok(Scheme::Ecmp),
            "letflow" => Ok(Scheme::LetFlow),
            "hula" => Ok(Scheme::Hula),
            other => Err(format!("unknown scheme `{other}` (ecmp, letflow, hula)")),
        }
    }
}

/// Stable 64-bit key of a 5-tuple.
pub fn flow_key(flow: &FlowId) -> u64 {
    let mut h = FnvHasher::default();
    h.write_u32(flow.src_host.index);
    h.write_u32(flow.dst_host.index);
    h.write_u16(flow.src_port);
    h.write_u16(flow.dst_port);
    h.write_u8(flow.protocol);
    h.finish()
}

fn ecmp_index(key: u64, switch: SwitchId, n: usize) -> usize {
    let mut h = FnvHasher::default();
    h.write_u64(key);
    h.write_u32(switch.get());
    // fold the high bits in; FNV's low bits are weak for small moduli
    let v = h.finish();
    ((v ^ (v >> 29) ^ (v >> 47)) % n as u64) as usize
}

/// Routing view of a built graph. Link state is captured at construction.
#[derive(Debug, Clone)]
pub struct Fabric {
    kinds: Vec<NodeKind>,
    pods: Vec<Option<u32>>,
    ports: Vec<Vec<Adjacency>>,
    enabled: Vec<bool>,
    tors: Vec<usize>,
    tor_slot: Vec<Option<usize>>,
    host_tor: Vec<Option<usize>>,
    host_port: Vec<Option<Port>>,
    down_port: Vec<Vec<Option<Port>>>,
    up_candidates: Vec<Vec<Vec<Port>>>,
    peer_port: Vec<Vec<Port>>,
}

impl Fabric {
    pub fn new(graph: &NetworkGraph) -> Self {
        let n = graph.nodes().len();
        let kinds: Vec<NodeKind> = graph.nodes().iter().map(|x| x.kind).collect();
        let pods = graph.nodes().iter().map(|x| x.pod).collect();
        let ports: Vec<Vec<Adjacency>> = (0..n).map(|i| graph.adjacency(i).to_vec()).collect();
        let enabled: Vec<bool> = graph.links().iter().map(|l| l.enabled).collect();
        let tors = graph.edge_tors();
        let mut tor_slot = vec![None; n];
        for (slot, &t) in tors.iter().enumerate() {
            tor_slot[t] = Some(slot);
        }
        let mut host_tor = vec![None; n];
        let mut host_port = vec![None; n];
        for h in graph.hosts() {
            let tor = graph.tor_of_host(h);
            host_tor[h] = Some(tor);
            host_port[h] = ports[tor].iter().position(|a| a.peer == h);
        }
        let peer_port = (0..n)
            .map(|i| {
                ports[i]
                    .iter()
                    .map(|a| {
                        ports[a.peer]
                            .iter()
                            .position(|b| b.link == a.link)
                            .expect("links are bidirectional")
                    })
                    .collect()
            })
            .collect();

        let tier = |i: usize| kinds[i].tier();
        let nt = tors.len();
        // ToRs reachable going only downward
        let mut reach_down = vec![vec![false; nt]; n];
        let mut order: Vec<usize> = (0..n).filter(|&i| kinds[i] != NodeKind::Host).collect();
        order.sort_by_key(|&i| tier(i));
        for &i in &order {
            if let Some(s) = tor_slot[i] {
                reach_down[i][s] = true;
            }
            for a in &ports[i] {
                if enabled[a.link] && tier(a.peer) + 1 == tier(i) && kinds[a.peer] != NodeKind::Host {
                    for s in 0..nt {
                        if reach_down[a.peer][s] {
                            reach_down[i][s] = true;
                        }
                    }
                }
            }
        }
        // ToRs reachable up-then-down
        let mut reach = reach_down.clone();
        for &i in order.iter().rev() {
            for a in &ports[i] {
                if enabled[a.link] && tier(a.peer) == tier(i) + 1 {
                    for s in 0..nt {
                        if reach[a.peer][s] {
                            reach[i][s] = true;
                        }
                    }
                }
            }
        }
        let mut down_port = vec![vec![None; nt]; n];
        let mut up_candidates = vec![vec![Vec::new(); nt]; n];
        for &i in &order {
            for s in 0..nt {
                if tor_slot[i] == Some(s) {
                    continue;
                }
                let down = ports[i].iter().position(|a| {
                    enabled[a.link]
                        && kinds[a.peer] != NodeKind::Host
                        && tier(a.peer) + 1 == tier(i)
                        && reach_down[a.peer][s]
                });
                if down.is_some() {
                    down_port[i][s] = down;
                    continue;
                }
                up_candidates[i][s] = ports[i]
                    .iter()
                    .enumerate()
                    .filter(|(_, a)| enabled[a.link] && tier(a.peer) == tier(i) + 1 && reach[a.peer][s])
                    .map(|(p, _)| p)
                    .collect();
            }
        }

        Self {
            kinds,
            pods,
            ports,
            enabled,
            tors,
            tor_slot,
            host_tor,
            host_port,
            down_port,
            up_candidates,
            peer_port,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.kinds.len()
    }

    pub fn kind(&self, node: usize) -> NodeKind {
        self.kinds[node]
    }

    pub fn pod(&self, node: usize) -> Option<u32> {
        self.pods[node]
    }

    pub fn ports(&self, node: usize) -> &[Adjacency] {
        &self.ports[node]
    }

    pub fn peer(&self, node: usize, port: Port) -> usize {
        self.ports[node][port].peer
    }

    /// Port number on the peer side of `(node, port)`.
    pub fn peer_port(&self, node: usize, port: Port) -> Port {
        self.peer_port[node][port]
    }

    pub fn port_enabled(&self, node: usize, port: Port) -> bool {
        self.enabled[self.ports[node][port].link]
    }

    pub fn tors(&self) -> &[usize] {
        &self.tors
    }

    pub fn tor_slot(&self, node: usize) -> Option<usize> {
        self.tor_slot[node]
    }

    pub fn tor_of_host(&self, host: usize) -> usize {
        self.host_tor[host].expect("not a host")
    }

    pub fn is_upward(&self, node: usize, port: Port) -> bool {
        self.kinds[self.peer(node, port)].tier() > self.kinds[node].tier()
    }

    pub fn up_ports(&self, node: usize) -> impl Iterator<Item = Port> + '_ {
        (0..self.ports[node].len()).filter(move |&p| self.is_upward(node, p) && self.port_enabled(node, p))
    }

    /// Candidates for reaching `dst_tor` from `node` when no downward port exists.
    pub fn candidates(&self, node: usize, dst_tor: usize) -> &[Port] {
        match self.tor_slot[dst_tor] {
            Some(s) => &self.up_candidates[node][s],
            None => &[],
        }
    }

    /// Next hop toward `dst_host`: `Ok(port)` when the choice is forced, `Err(candidates)` when a
    /// load-balancing decision is needed.
    pub fn route(&self, node: usize, dst_host: usize) -> Result<Port, &[Port]> {
        let dst_tor = self.tor_of_host(dst_host);
        if node == dst_tor {
            return self.host_port[dst_host].ok_or(&[]);
        }
        let s = self.tor_slot[dst_tor].expect("host tor has a slot");
        match self.down_port[node][s] {
            Some(p) => Ok(p),
            None => Err(&self.up_candidates[node][s]),
        }
    }

    /// Ports a probe leaves `node` through, given the port it arrived on.
    pub fn replicate_ports(&self, node: usize, origin_tor: usize, ingress: Port) -> Vec<Port> {
        let origin_pod = self.pods[origin_tor];
        let ports = &self.ports[node];
        let live = |p: &Port| self.enabled[ports[*p].link] && self.kinds[ports[*p].peer] != NodeKind::Host;
        match self.kinds[node] {
            NodeKind::Host | NodeKind::EdgeToR => Vec::new(),
            NodeKind::Aggregate if self.pods[node] == origin_pod => {
                // down to sibling edges, up to every core
                (0..ports.len()).filter(|p| *p != ingress && live(p)).collect()
            }
            NodeKind::Aggregate => (0..ports.len())
                .filter(|&p| live(&p) && !self.is_upward(node, p))
                .collect(),
            NodeKind::Core => (0..ports.len())
                .filter(|&p| live(&p) && self.pods[ports[p].peer] != origin_pod)
                .collect(),
        }
    }
}

/// A probe copy consumed by a ToR.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeDelivery {
    pub tor: usize,
    pub hops: Vec<usize>,
}

/// Follow every replica of one probe from `origin` through the fabric, without
/// timing. Returns the copies consumed by ToRs and the number of copies that
/// came back to the origin (always zero under the replication rules).
pub fn trace_probe_replication(fabric: &Fabric, origin: usize) -> (Vec<ProbeDelivery>, usize) {
    let mut delivered = Vec::new();
    let mut returned = 0;
    let mut frontier: Vec<(usize, Port, Vec<usize>)> = fabric
        .up_ports(origin)
        .map(|p| (fabric.peer(origin, p), fabric.peer_port(origin, p), Vec::new()))
        .collect();
    while let Some((node, ingress, mut hops)) = frontier.pop() {
        if fabric.kind(node) == NodeKind::EdgeToR {
            if node == origin {
                returned += 1;
            } else {
                delivered.push(ProbeDelivery { tor: node, hops });
            }
            continue;
        }
        hops.push(node);
        for p in fabric.replicate_ports(node, origin, ingress) {
            frontier.push((fabric.peer(node, p), fabric.peer_port(node, p), hops.clone()));
        }
    }
    (delivered, returned)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlowletState {
    pub flow_key: u64,
    pub last_seen: SimTime,
    pub next_hop: Port,
    pub dst_tor: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum FlowletTableMode {
    /// One entry per 5-tuple.
    Exact,
    /// Direct-mapped register array; colliding flows overwrite each other.
    Hashed { slots: usize },
}

#[derive(Debug, Clone)]
pub enum FlowletTable {
    Exact(HashMap<u64, FlowletState>),
    Hashed(Vec<Option<FlowletState>>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowletDecision {
    SameFlowlet(Port),
    NewFlowlet,
}

impl FlowletTable {
    pub fn new(mode: FlowletTableMode) -> Self {
        match mode {
            FlowletTableMode::Exact => FlowletTable::Exact(HashMap::new()),
            FlowletTableMode::Hashed { slots } => FlowletTable::Hashed(vec![None; slots.max(1)]),
        }
    }

    fn slot(&mut self, key: u64) -> Option<&mut FlowletState> {
        match self {
            FlowletTable::Exact(m) => m.get_mut(&key),
            FlowletTable::Hashed(v) => {
                let n = v.len();
                v[(key % n as u64) as usize].as_mut().filter(|s| s.flow_key == key)
            }
        }
    }

    pub fn get(&self, key: u64) -> Option<&FlowletState> {
        match self {
            FlowletTable::Exact(m) => m.get(&key),
            FlowletTable::Hashed(v) => v[(key % v.len() as u64) as usize]
                .as_ref()
                .filter(|s| s.flow_key == key),
        }
    }

    /// Same flowlet if the flow was seen within `gap`; refreshes `last_seen` when so.
    pub fn classify(&mut self, key: u64, now: SimTime, gap: SimTime) -> FlowletDecision {
        match self.slot(key) {
            Some(st) if now.saturating_sub(st.last_seen) <= gap => {
                st.last_seen = now;
                FlowletDecision::SameFlowlet(st.next_hop)
            }
            _ => FlowletDecision::NewFlowlet,
        }
    }

    pub fn store(&mut self, state: FlowletState) {
        match self {
            FlowletTable::Exact(m) => {
                m.insert(state.flow_key, state);
            }
            FlowletTable::Hashed(v) => {
                let n = v.len();
                v[(state.flow_key % n as u64) as usize] = Some(state);
            }
        }
    }

    pub fn remove(&mut self, key: u64) {
        match self {
            FlowletTable::Exact(m) => {
                m.remove(&key);
            }
            FlowletTable::Hashed(v) => {
                let n = v.len();
                let slot = &mut v[(key % n as u64) as usize];
                if slot.is_some_and(|s| s.flow_key == key) {
                    *slot = None;
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HulaBestHop {
    pub dst_tor: usize,
    pub best_port: Port,
    pub best_util: f64,
    pub updated: SimTime,
}

/// Load-balancing parameters shared by every switch of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct LbConfig {
    pub scheme: Scheme,
    pub flowdyn: bool,
    pub static_gap: SimTime,
    /// HULA entries older than this are treated as absent.
    pub hula_stale: SimTime,
    /// Freshness window for gaps learned at intermediate switches.
    pub gap_stale: SimTime,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SwitchCounters {
    pub new_flowlets: u64,
    pub same_flowlet: u64,
    pub black_holes: u64,
    pub own_probe_drops: u64,
    pub probes_consumed: u64,
    pub probes_replicated: u64,
    pub gap_headers_seen: u64,
    pub gap_headers_stale: u64,
    pub gap_headers_stripped: u64,
}

#[derive(Debug, Clone)]
pub struct SwitchState {
    pub node: usize,
    pub id: SwitchId,
    pub kind: NodeKind,
    pub flowlets: FlowletTable,
    /// Gap registers of a non-ToR switch. ToRs use `flowdyn.local`.
    pub gaps: GapTable,
    pub hula: BTreeMap<usize, HulaBestHop>,
    /// Present on edge ToRs when FlowDyn is enabled.
    pub flowdyn: Option<FlowDynTor>,
    pub next_probe_seq: u32,
    pub counters: SwitchCounters,
    rng: ChaCha8Rng,
}

impl SwitchState {
    pub fn new(node: usize, kind: NodeKind, mode: FlowletTableMode, seed: u64) -> Self {
        let mut h = FnvHasher::default();
        h.write_u64(seed);
        h.write_u64(node as u64);
        Self {
            node,
            id: SwitchId::from_index(node),
            kind,
            flowlets: FlowletTable::new(mode),
            gaps: GapTable::default(),
            hula: BTreeMap::new(),
            flowdyn: None,
            next_probe_seq: 0,
            counters: SwitchCounters::default(),
            rng: ChaCha8Rng::seed_from_u64(h.finish()),
        }
    }

    /// Next probe originated by this ToR; sequence numbers start at 1.
    pub fn emit_probe(&mut self, now: SimTime, with_util: bool) -> ProbeHeader {
        self.next_probe_seq += 1;
        ProbeHeader::new(self.id, now, self.next_probe_seq, with_util)
    }

    /// Flowlet gap this switch applies toward `dst_tor`.
    pub fn gap_toward(&self, lb: &LbConfig, dst_tor: usize, now: SimTime) -> SimTime {
        if !lb.flowdyn {
            return lb.static_gap;
        }
        let dst = SwitchId::from_index(dst_tor);
        match &self.flowdyn {
            Some(tor) => tor.current_gap(dst, now),
            None => self.gaps.fresh_gap(dst, now, lb.gap_stale).unwrap_or(lb.static_gap),
        }
    }

    pub fn classify_flowlet(&mut self, key: u64, now: SimTime, gap: SimTime) -> FlowletDecision {
        self.flowlets.classify(key, now, gap)
    }

    pub fn pick_next_hop(&mut self, lb: &LbConfig, key: u64, dst_tor: usize, candidates: &[Port], now: SimTime) -> Option<Port> {
        if candidates.is_empty() {
            return None;
        }
        let port = match lb.scheme {
            Scheme::Ecmp => candidates[ecmp_index(key, self.id, candidates.len())],
            Scheme::LetFlow => candidates[self.rng.random_range(0..candidates.len())],
            Scheme::Hula => match self.hula.get(&dst_tor) {
                Some(b) if now.saturating_sub(b.updated) <= lb.hula_stale && candidates.contains(&b.best_port) => b.best_port,
                _ => candidates[ecmp_index(key, self.id, candidates.len())],
            },
        };
        Some(port)
    }

    /// Egress port for a data or ACK packet with 5-tuple `flow` headed to `dst_host`.
    pub fn forward(&mut self, fabric: &Fabric, lb: &LbConfig, flow: &FlowId, dst_host: usize, now: SimTime) -> Option<Port> {
        let candidates = match fabric.route(self.node, dst_host) {
            Ok(p) => return Some(p),
            Err(c) => c,
        };
        let dst_tor = fabric.tor_of_host(dst_host);
        let key = flow_key(flow);
        if candidates.is_empty() {
            self.counters.black_holes += 1;
            return None;
        }
        if !lb.scheme.uses_flowlets() {
            return self.pick_next_hop(lb, key, dst_tor, candidates, now);
        }
        let gap = self.gap_toward(lb, dst_tor, now);
        if let FlowletDecision::SameFlowlet(p) = self.classify_flowlet(key, now, gap) {
            if candidates.contains(&p) {
                self.counters.same_flowlet += 1;
                return Some(p);
            }
        }
        let port = self.pick_next_hop(lb, key, dst_tor, candidates, now)?;
        self.counters.new_flowlets += 1;
        self.flowlets.store(FlowletState {
            flow_key: key,
            last_seen: now,
            next_hop: port,
            dst_tor,
        });
        Some(port)
    }

    /// Fold the ingress link's utilization into the probe and, if the ingress
    /// port is a way back toward the probe's origin, refresh the best hop.
    /// Entries older than `stale` are replaced unconditionally.
    pub fn update_hula(
        &mut self,
        fabric: &Fabric,
        probe: &mut ProbeHeader,
        ingress: Port,
        ingress_util: f64,
        now: SimTime,
        stale: SimTime,
    ) {
        let Some(u) = probe.util.as_mut() else {
            return;
        };
        *u = u.max(ingress_util.clamp(0.0, 1.0));
        let path_util = *u;
        let origin = probe.origin_tor.index();
        if !fabric.candidates(self.node, origin).contains(&ingress) {
            return;
        }
        let replace = match self.hula.get(&origin) {
            None => true,
            Some(b) => path_util < b.best_util || b.best_port == ingress || now.saturating_sub(b.updated) > stale,
        };
        if replace {
            self.hula.insert(
                origin,
                HulaBestHop {
                    dst_tor: origin,
                    best_port: ingress,
                    best_util: path_util,
                    updated: now,
                },
            );
        }
    }

    /// Store a piggybacked gap; returns true if this switch is the last ToR
    /// before the destination host and the header must be stripped.
    pub fn handle_gap_header(&mut self, header: &GapHeader, is_last_tor: bool, now: SimTime) -> bool {
        self.counters.gap_headers_seen += 1;
        let table = match self.flowdyn.as_mut() {
            Some(tor) if is_last_tor => &mut tor.local,
            _ => &mut self.gaps,
        };
        if !table.apply(header, now) {
            self.counters.gap_headers_stale += 1;
        }
        if is_last_tor {
            self.counters.gap_headers_stripped += 1;
        }
        is_last_tor
    }
}

#[cfg(test)]
mod tests;
