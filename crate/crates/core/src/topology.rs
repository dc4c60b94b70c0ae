//! Three-tier fat-tree construction.
//!
//! Node indices are dense: cores first, then aggregates, edge ToRs and hosts.
//! The dense index doubles as the 3-byte switch id carried in probes.

use std::collections::{BTreeSet, HashMap};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::SimTime;

pub const GBPS: u64 = 1_000_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    Host,
    EdgeToR,
    Aggregate,
    Core,
}

impl NodeKind {
    /// Tier in the up-down hierarchy; hosts sit at 0.
    pub fn tier(self) -> u8 {
        match self {
            NodeKind::Host => 0,
            NodeKind::EdgeToR => 1,
            NodeKind::Aggregate => 2,
            NodeKind::Core => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId {
    pub kind: NodeKind,
    /// Unique within `kind`.
    pub index: u32,
    /// Pod of edges, aggregates and hosts. Always `None` for cores.
    pub pod: Option<u32>,
}

impl NodeId {
    pub fn is_switch(&self) -> bool {
        self.kind != NodeKind::Host
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.kind {
            NodeKind::Host => "h",
            NodeKind::EdgeToR => "e",
            NodeKind::Aggregate => "a",
            NodeKind::Core => "c",
        };
        write!(f, "{tag}{}", self.index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    /// (lower tier, upper tier)
    pub endpoints: (NodeId, NodeId),
    pub capacity_bps: u64,
    pub propagation_delay: SimTime,
    pub queue_capacity: u64,
    pub enabled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FatTreeSpec {
    pub num_cores: u32,
    pub pods: u32,
    pub aggs_per_pod: u32,
    pub edges_per_pod: u32,
    pub hosts_per_edge: u32,
    /// Capacity of every switch-to-switch link, bits/s.
    pub core_link_capacity: u64,
    /// Capacity of host-to-edge links, bits/s.
    pub host_link_capacity: u64,
    pub propagation_delay: SimTime,
    /// Drop-tail buffer per port direction, bytes.
    pub queue_capacity: u64,
    pub disabled_cores: BTreeSet<u32>,
}

impl Default for FatTreeSpec {
    fn default() -> Self {
        Self {
            num_cores: 4,
            pods: 4,
            aggs_per_pod: 2,
            edges_per_pod: 2,
            hosts_per_edge: 8,
            core_link_capacity: 40 * GBPS,
            host_link_capacity: 10 * GBPS,
            propagation_delay: SimTime::from_micros(1),
            queue_capacity: 150_000,
            disabled_cores: BTreeSet::new(),
        }
    }
}

impl FatTreeSpec {
    pub fn num_hosts(&self) -> u32 {
        self.pods * self.edges_per_pod * self.hosts_per_edge
    }

    pub fn num_edges(&self) -> u32 {
        self.pods * self.edges_per_pod
    }

    pub fn cores_per_agg(&self) -> u32 {
        self.num_cores / self.aggs_per_pod
    }

    pub fn validate(&self) -> Result<(), TopologyError> {
        let positive = [
            ("num_cores", self.num_cores),
            ("pods", self.pods),
            ("aggs_per_pod", self.aggs_per_pod),
            ("edges_per_pod", self.edges_per_pod),
            ("hosts_per_edge", self.hosts_per_edge),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(TopologyError::Zero(field));
            }
        }
        if self.num_cores % self.aggs_per_pod != 0 {
            return Err(TopologyError::Divisibility {
                cores: self.num_cores,
                aggs: self.aggs_per_pod,
            });
        }
        if self.core_link_capacity == 0 || self.host_link_capacity == 0 {
            return Err(TopologyError::Zero("link capacity"));
        }
        if self.queue_capacity == 0 {
            return Err(TopologyError::Zero("queue_capacity"));
        }
        if let Some(&c) = self.disabled_cores.iter().find(|&&c| c >= self.num_cores) {
            return Err(TopologyError::UnknownCore(c));
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("{0} must be positive")]
    Zero(&'static str),
    #[error("num_cores ({cores}) is not divisible by aggs_per_pod ({aggs})")]
    Divisibility { cores: u32, aggs: u32 },
    #[error("disabled core {0} does not exist")]
    UnknownCore(u32),
}

/// One direction of attachment: `node` reaches `peer` through `link`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Adjacency {
    pub link: usize,
    pub peer: usize,
}

#[derive(Debug, Clone)]
pub struct NetworkGraph {
    pub spec: FatTreeSpec,
    nodes: Vec<NodeId>,
    links: Vec<Link>,
    adjacency: Vec<Vec<Adjacency>>,
    lookup: HashMap<NodeId, usize>,
}

impl NetworkGraph {
    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn node(&self, idx: usize) -> NodeId {
        self.nodes[idx]
    }

    pub fn index_of(&self, id: NodeId) -> Option<usize> {
        self.lookup.get(&id).copied()
    }

    pub fn adjacency(&self, idx: usize) -> &[Adjacency] {
        &self.adjacency[idx]
    }

    pub fn link(&self, idx: usize) -> &Link {
        &self.links[idx]
    }

    pub fn link_mut(&mut self, idx: usize) -> &mut Link {
        &mut self.links[idx]
    }

    pub fn link_between(&self, a: usize, b: usize) -> Option<usize> {
        self.adjacency[a].iter().find(|adj| adj.peer == b).map(|adj| adj.link)
    }

    pub fn of_kind(&self, kind: NodeKind) -> impl Iterator<Item = usize> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter(move |(_, n)| n.kind == kind)
            .map(|(i, _)| i)
    }

    pub fn edge_tors(&self) -> Vec<usize> {
        self.of_kind(NodeKind::EdgeToR).collect()
    }

    pub fn hosts(&self) -> Vec<usize> {
        self.of_kind(NodeKind::Host).collect()
    }

    pub fn host(&self, index: u32) -> usize {
        let pod = index / (self.spec.edges_per_pod * self.spec.hosts_per_edge);
        self.index_of(NodeId {
            kind: NodeKind::Host,
            index,
            pod: Some(pod),
        })
        .expect("host index out of range")
    }

    /// Edge ToR a host hangs off.
    pub fn tor_of_host(&self, host: usize) -> usize {
        debug_assert_eq!(self.nodes[host].kind, NodeKind::Host);
        self.adjacency[host][0].peer
    }

    /// Dense node index of core `c`.
    pub fn core(&self, c: u32) -> usize {
        c as usize
    }

    pub fn set_link_delay(&mut self, a: usize, b: usize, delay: SimTime) {
        let l = self.link_between(a, b).expect("no such link");
        self.links[l].propagation_delay = delay;
    }

    /// Disable every link incident to `node`, modelling a switch failure.
    pub fn disable_node(&mut self, node: usize) {
        let links: Vec<usize> = self.adjacency[node].iter().map(|a| a.link).collect();
        for l in links {
            self.links[l].enabled = false;
        }
    }

    /// Capacity from one pod into the core layer over enabled links. For the
    /// default tree this is the 160 Gbps figure commonly quoted as bisection.
    pub fn pod_uplink_capacity(&self, pod: u32) -> u64 {
        self.links
            .iter()
            .filter(|l| {
                l.enabled
                    && l.endpoints.1.kind == NodeKind::Core
                    && l.endpoints.0.pod == Some(pod)
            })
            .map(|l| l.capacity_bps)
            .sum()
    }

    /// One line per link: `lower upper capacity_bps delay_ns queue_bytes enabled`.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        for l in &self.links {
            let _ = writeln!(
                out,
                "{} {} {} {} {} {}",
                l.endpoints.0,
                l.endpoints.1,
                l.capacity_bps,
                l.propagation_delay.as_nanos(),
                l.queue_capacity,
                if l.enabled { "up" } else { "down" }
            );
        }
        out
    }

    fn add_node(&mut self, id: NodeId) -> usize {
        let idx = self.nodes.len();
        self.nodes.push(id);
        self.adjacency.push(Vec::new());
        self.lookup.insert(id, idx);
        idx
    }

    fn add_link(&mut self, lower: usize, upper: usize, capacity_bps: u64) {
        let idx = self.links.len();
        self.links.push(Link {
            endpoints: (self.nodes[lower], self.nodes[upper]),
            capacity_bps,
            propagation_delay: self.spec.propagation_delay,
            queue_capacity: self.spec.queue_capacity,
            enabled: true,
        });
        self.adjacency[lower].push(Adjacency {
            link: idx,
            peer: upper,
        });
        self.adjacency[upper].push(Adjacency {
            link: idx,
            peer: lower,
        });
    }
}

pub fn build_fat_tree(spec: &FatTreeSpec) -> Result<NetworkGraph, TopologyError> {
    spec.validate()?;
    let mut g = NetworkGraph {
        spec: spec.clone(),
        nodes: Vec::new(),
        links: Vec::new(),
        adjacency: Vec::new(),
        lookup: HashMap::new(),
    };

    let cores: Vec<usize> = (0..spec.num_cores)
        .map(|c| {
            g.add_node(NodeId {
                kind: NodeKind::Core,
                index: c,
                pod: None,
            })
        })
        .collect();
    let mut aggs = Vec::new();
    for pod in 0..spec.pods {
        for a in 0..spec.aggs_per_pod {
            aggs.push(g.add_node(NodeId {
                kind: NodeKind::Aggregate,
                index: pod * spec.aggs_per_pod + a,
                pod: Some(pod),
            }));
        }
    }
    let mut edges = Vec::new();
    for pod in 0..spec.pods {
        for e in 0..spec.edges_per_pod {
            edges.push(g.add_node(NodeId {
                kind: NodeKind::EdgeToR,
                index: pod * spec.edges_per_pod + e,
                pod: Some(pod),
            }));
        }
    }
    let mut hosts = Vec::new();
    for h in 0..spec.num_hosts() {
        let edge = h / spec.hosts_per_edge;
        hosts.push(g.add_node(NodeId {
            kind: NodeKind::Host,
            index: h,
            pod: Some(edge / spec.edges_per_pod),
        }));
    }

    // Block wiring: aggregate `a` of every pod reaches cores
    // a*k .. (a+1)*k - 1 where k = num_cores / aggs_per_pod.
    let k = spec.cores_per_agg();
    for pod in 0..spec.pods {
        for a in 0..spec.aggs_per_pod {
            let agg = aggs[(pod * spec.aggs_per_pod + a) as usize];
            for c in a * k..(a + 1) * k {
                g.add_link(agg, cores[c as usize], spec.core_link_capacity);
            }
        }
    }
    for pod in 0..spec.pods {
        for e in 0..spec.edges_per_pod {
            let edge = edges[(pod * spec.edges_per_pod + e) as usize];
            for a in 0..spec.aggs_per_pod {
                g.add_link(edge, aggs[(pod * spec.aggs_per_pod + a) as usize], spec.core_link_capacity);
            }
        }
    }
    for (h, &host) in hosts.iter().enumerate() {
        let edge = edges[h / spec.hosts_per_edge as usize];
        g.add_link(host, edge, spec.host_link_capacity);
    }

    for &c in &spec.disabled_cores {
        g.disable_node(cores[c as usize]);
    }
    Ok(g)
}

/// Every loop-free up-down path between two edge ToRs over enabled links, as the
/// ordered list of intermediate switches. Brute-force depth-first enumeration.
pub fn disjoint_paths(graph: &NetworkGraph, src: usize, dst: usize) -> Vec<Vec<usize>> {
    if src == dst {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    let mut stack = vec![src];
    walk(graph, dst, &mut stack, true, &mut out);
    out
}

fn walk(graph: &NetworkGraph, dst: usize, stack: &mut Vec<usize>, going_up: bool, out: &mut Vec<Vec<usize>>) {
    let here = *stack.last().expect("non-empty");
    let tier = graph.node(here).kind.tier();
    for adj in graph.adjacency(here) {
        if !graph.link(adj.link).enabled || stack.contains(&adj.peer) {
            continue;
        }
        let next = graph.node(adj.peer);
        if next.kind == NodeKind::Host {
            continue;
        }
        let up = next.kind.tier() > tier;
        if up && !going_up {
            continue; // valley
        }
        if adj.peer == dst {
            out.push(stack[1..].to_vec());
            continue;
        }
        if next.kind == NodeKind::EdgeToR {
            continue; // edges never transit
        }
        stack.push(adj.peer);
        walk(graph, dst, stack, up, out);
        stack.pop();
    }
}
