use std::collections::BTreeMap;

use super::*;
use crate::flowdyn::FlowDynConfig;
use crate::topology::{build_fat_tree, disjoint_paths, FatTreeSpec, NodeId};
use crate::transport::TCP_PROTOCOL;

fn us(n: u64) -> SimTime {
    SimTime::from_micros(n)
}

fn default_fabric() -> (NetworkGraph, Fabric) {
    let g = build_fat_tree(&FatTreeSpec::default()).unwrap();
    let f = Fabric::new(&g);
    (g, f)
}

/// Two pods, one aggregate each, two cores: two paths between the ToRs.
fn two_path() -> (NetworkGraph, Fabric) {
    let spec = FatTreeSpec {
        num_cores: 2,
        pods: 2,
        aggs_per_pod: 1,
        edges_per_pod: 1,
        hosts_per_edge: 1,
        ..Default::default()
    };
    let g = build_fat_tree(&spec).unwrap();
    let f = Fabric::new(&g);
    (g, f)
}

fn flow(g: &NetworkGraph, src: u32, dst: u32, sport: u16) -> FlowId {
    FlowId {
        src_host: g.node(g.host(src)),
        dst_host: g.node(g.host(dst)),
        src_port: sport,
        dst_port: 80,
        protocol: TCP_PROTOCOL,
    }
}

fn lb(scheme: Scheme, gap: SimTime) -> LbConfig {
    LbConfig {
        scheme,
        flowdyn: false,
        static_gap: gap,
        hula_stale: us(1000),
        gap_stale: us(1000),
    }
}

#[test]
fn replication_matches_path_oracle() {
    let (g, f) = default_fabric();
    for &origin in f.tors() {
        let (copies, returned) = trace_probe_replication(&f, origin);
        assert_eq!(returned, 0);
        let mut per_tor: BTreeMap<usize, Vec<Vec<usize>>> = BTreeMap::new();
        for c in copies {
            let mut seen = c.hops.clone();
            seen.sort();
            seen.dedup();
            assert_eq!(seen.len(), c.hops.len(), "hop list repeats a switch");
            per_tor.entry(c.tor).or_default().push(c.hops);
        }
        for &tor in f.tors() {
            if tor == origin {
                assert!(!per_tor.contains_key(&tor));
                continue;
            }
            let mut got = per_tor.remove(&tor).unwrap_or_default();
            let mut want = disjoint_paths(&g, origin, tor);
            got.sort();
            want.sort();
            assert_eq!(got, want);
            let same_pod = g.node(tor).pod == g.node(origin).pod;
            assert_eq!(got.len(), if same_pod { 2 } else { 4 });
        }
    }
}

#[test]
fn replication_with_failed_core() {
    let spec = FatTreeSpec {
        disabled_cores: [0].into(),
        ..Default::default()
    };
    let g = build_fat_tree(&spec).unwrap();
    let f = Fabric::new(&g);
    for &origin in f.tors() {
        let (copies, _) = trace_probe_replication(&f, origin);
        for &tor in f.tors().iter().filter(|&&t| t != origin) {
            let n = copies.iter().filter(|c| c.tor == tor).count();
            assert_eq!(n, disjoint_paths(&g, origin, tor).len());
        }
    }
}

#[test]
fn foreign_pod_aggregate_only_sends_down() {
    let (g, f) = default_fabric();
    let origin = f.tors()[0];
    let foreign_agg = g.of_kind(NodeKind::Aggregate).find(|&a| g.node(a).pod == Some(3)).unwrap();
    let from_core = (0..f.ports(foreign_agg).len()).find(|&p| f.is_upward(foreign_agg, p)).unwrap();
    let out = f.replicate_ports(foreign_agg, origin, from_core);
    assert_eq!(out.len(), 2);
    assert!(out.iter().all(|&p| !f.is_upward(foreign_agg, p)));
}

#[test]
fn core_skips_origin_pod() {
    let (g, f) = default_fabric();
    let origin = f.tors()[0];
    let core = g.core(0);
    let out = f.replicate_ports(core, origin, 0);
    assert_eq!(out.len(), 3);
    assert!(out.iter().all(|&p| g.node(f.peer(core, p)).pod != Some(0)));
}

#[test]
fn routing_is_downward_when_possible() {
    let (g, f) = default_fabric();
    let h0 = g.host(0);
    let h9 = g.host(9);
    let tor0 = g.tor_of_host(h0);
    // own host: forced
    assert!(f.route(tor0, h0).is_ok());
    // other ToR: two aggregate candidates
    assert_eq!(f.route(tor0, h9).unwrap_err().len(), 2);
    // inter-pod from an aggregate: two core candidates
    let agg = f.peer(tor0, f.up_ports(tor0).next().unwrap());
    assert_eq!(f.route(agg, g.host(40)).unwrap_err().len(), 2);
    // cores always route down
    assert!(f.route(g.core(1), g.host(40)).is_ok());
}

#[test]
fn flowlet_gap_examples() {
    let mut t = FlowletTable::new(FlowletTableMode::Exact);
    let t0 = SimTime::from_millis(10);
    assert_eq!(t.classify(7, t0, SimTime::from_millis(4)), FlowletDecision::NewFlowlet);
    t.store(FlowletState {
        flow_key: 7,
        last_seen: t0,
        next_hop: 1,
        dst_tor: 0,
    });
    let t1 = t0 + us(2100);
    assert_eq!(t.classify(7, t1, SimTime::from_millis(4)), FlowletDecision::SameFlowlet(1));
    // refreshed at t1; the next 2.1 ms gap under a 2 ms timeout starts a new flowlet
    assert_eq!(t.classify(7, t1 + us(2100), SimTime::from_millis(2)), FlowletDecision::NewFlowlet);
}

#[test]
fn hashed_table_collisions_overwrite() {
    let mut t = FlowletTable::new(FlowletTableMode::Hashed { slots: 4 });
    let st = |key, hop| FlowletState {
        flow_key: key,
        last_seen: us(0),
        next_hop: hop,
        dst_tor: 0,
    };
    t.store(st(1, 0));
    t.store(st(5, 1)); // same slot as 1
    assert_eq!(t.classify(1, us(1), SimTime::MAX), FlowletDecision::NewFlowlet);
    assert_eq!(t.classify(5, us(1), SimTime::MAX), FlowletDecision::SameFlowlet(1));
    t.remove(5);
    assert!(t.get(5).is_none());
}

#[test]
fn ecmp_is_deterministic_per_flow_and_switch() {
    let (g, f) = default_fabric();
    let tor0 = g.tor_of_host(g.host(0));
    let cfg = lb(Scheme::Ecmp, us(800));
    let mut sw = SwitchState::new(tor0, NodeKind::EdgeToR, FlowletTableMode::Exact, 1);
    let fl = flow(&g, 0, 40, 1000);
    let first = sw.forward(&f, &cfg, &fl, g.host(40), us(0)).unwrap();
    for i in 1..50 {
        assert_eq!(sw.forward(&f, &cfg, &fl, g.host(40), us(i * 1000)), Some(first));
    }
    // different flows spread over both uplinks
    let ports: std::collections::BTreeSet<_> = (0..64)
        .map(|p| sw.forward(&f, &cfg, &flow(&g, 0, 40, p), g.host(40), us(0)).unwrap())
        .collect();
    assert_eq!(ports.len(), 2);
}

#[test]
fn letflow_is_reproducible_under_seed() {
    let (g, f) = default_fabric();
    let tor0 = g.tor_of_host(g.host(0));
    let cfg = lb(Scheme::LetFlow, SimTime::ZERO);
    let seq = |seed| {
        let mut sw = SwitchState::new(tor0, NodeKind::EdgeToR, FlowletTableMode::Exact, seed);
        let fl = flow(&g, 0, 40, 1000);
        (0..200)
            .map(|i| sw.forward(&f, &cfg, &fl, g.host(40), us(i * 10)).unwrap())
            .collect::<Vec<_>>()
    };
    assert_eq!(seq(3), seq(3));
    assert_ne!(seq(3), seq(4));
    // gap 0: every packet is its own flowlet, so both ports appear
    let s = seq(3);
    assert!(s.contains(&s[0]) && s.iter().any(|&p| p != s[0]));
}

#[test]
fn infinite_gap_pins_flow_to_one_port() {
    let (g, f) = default_fabric();
    for scheme in [Scheme::Ecmp, Scheme::LetFlow, Scheme::Hula] {
        let cfg = lb(scheme, SimTime::MAX);
        let tor0 = g.tor_of_host(g.host(0));
        let mut sw = SwitchState::new(tor0, NodeKind::EdgeToR, FlowletTableMode::Exact, 9);
        let fl = flow(&g, 0, 40, 1000);
        let first = sw.forward(&f, &cfg, &fl, g.host(40), us(0)).unwrap();
        for i in 1..100 {
            assert_eq!(sw.forward(&f, &cfg, &fl, g.host(40), SimTime::from_millis(i)), Some(first));
        }
    }
}

#[test]
fn flowlet_stickiness_between_decisions() {
    let (g, f) = default_fabric();
    let tor0 = g.tor_of_host(g.host(0));
    let cfg = lb(Scheme::LetFlow, us(100));
    let mut sw = SwitchState::new(tor0, NodeKind::EdgeToR, FlowletTableMode::Exact, 5);
    let fl = flow(&g, 0, 40, 1000);
    let key = flow_key(&fl);
    let mut t = us(0);
    let mut current = None;
    for i in 0..500u64 {
        // mostly tight spacing, occasionally a long pause
        t += if i % 37 == 0 { us(150) } else { us(3) };
        let new = matches!(sw.flowlets.clone().classify(key, t, us(100)), FlowletDecision::NewFlowlet);
        let p = sw.forward(&f, &cfg, &fl, g.host(40), t).unwrap();
        if !new {
            assert_eq!(Some(p), current);
        }
        current = Some(p);
    }
}

fn hula_probe(origin: usize, util: f64) -> ProbeHeader {
    let mut p = ProbeHeader::new(SwitchId::from_index(origin), us(0), 1, true);
    p.util = Some(util);
    p
}

#[test]
fn hula_prefers_less_utilized_path() {
    let (g, f) = two_path();
    let agg = g.of_kind(NodeKind::Aggregate).next().unwrap();
    let far_tor = f.tors()[1];
    assert_eq!(f.candidates(agg, far_tor), &[0, 1]);
    for order in [[(0, 0.9), (1, 0.2)], [(1, 0.2), (0, 0.9)]] {
        let mut sw = SwitchState::new(agg, NodeKind::Aggregate, FlowletTableMode::Exact, 1);
        for (port, util) in order {
            sw.update_hula(&f, &mut hula_probe(far_tor, util), port, 0.0, us(10), us(1000));
        }
        assert_eq!(sw.hula[&far_tor].best_port, 1);
        let cfg = lb(Scheme::Hula, us(800));
        let host = g.host(1);
        assert_eq!(sw.forward(&f, &cfg, &flow(&g, 0, 1, 5), host, us(20)), Some(1));
    }
}

#[test]
fn hula_probe_accumulates_max_utilization() {
    let (g, f) = two_path();
    let agg = g.of_kind(NodeKind::Aggregate).next().unwrap();
    let mut sw = SwitchState::new(agg, NodeKind::Aggregate, FlowletTableMode::Exact, 1);
    let mut p = hula_probe(f.tors()[1], 0.3);
    sw.update_hula(&f, &mut p, 0, 0.7, us(0), us(1000));
    assert_eq!(p.util, Some(0.7));
    sw.update_hula(&f, &mut p, 0, 0.1, us(0), us(1000));
    assert_eq!(p.util, Some(0.7));
}

#[test]
fn hula_flips_away_from_congested_path() {
    let (g, f) = two_path();
    let agg = g.of_kind(NodeKind::Aggregate).next().unwrap();
    let far = f.tors()[1];
    let mut sw = SwitchState::new(agg, NodeKind::Aggregate, FlowletTableMode::Exact, 1);
    // idle: both zero, first ingress wins
    sw.update_hula(&f, &mut hula_probe(far, 0.0), 1, 0.0, us(0), us(1000));
    sw.update_hula(&f, &mut hula_probe(far, 0.0), 0, 0.0, us(0), us(1000));
    assert_eq!(sw.hula[&far].best_port, 1);
    // path through port 1 saturates; the next probe round moves traffic
    sw.update_hula(&f, &mut hula_probe(far, 0.0), 1, 1.0, us(100), us(1000));
    sw.update_hula(&f, &mut hula_probe(far, 0.0), 0, 0.0, us(100), us(1000));
    assert_eq!(sw.hula[&far].best_port, 0);
}

#[test]
fn hula_stale_entry_is_absent() {
    let (g, f) = two_path();
    let agg = g.of_kind(NodeKind::Aggregate).next().unwrap();
    let far = f.tors()[1];
    let cfg = lb(Scheme::Hula, us(800));
    let mut sw = SwitchState::new(agg, NodeKind::Aggregate, FlowletTableMode::Exact, 1);
    sw.update_hula(&f, &mut hula_probe(far, 0.0), 1, 0.0, us(0), cfg.hula_stale);
    let fl = flow(&g, 0, 1, 77);
    let ecmp = candidates_ecmp(&f, &sw, &fl, agg, far);
    assert_eq!(sw.pick_next_hop(&cfg, flow_key(&fl), far, &[0, 1], us(1000)), Some(1));
    assert_eq!(sw.pick_next_hop(&cfg, flow_key(&fl), far, &[0, 1], us(1001)), Some(ecmp));
    // a worse probe on the other port replaces a stale entry
    sw.update_hula(&f, &mut hula_probe(far, 0.9), 0, 0.0, us(2000), cfg.hula_stale);
    assert_eq!(sw.hula[&far].best_port, 0);
}

fn candidates_ecmp(f: &Fabric, sw: &SwitchState, fl: &FlowId, node: usize, far: usize) -> Port {
    let c = f.candidates(node, far);
    c[ecmp_index(flow_key(fl), sw.id, c.len())]
}

#[test]
fn hula_ignores_probes_from_below() {
    let (g, f) = two_path();
    let agg = g.of_kind(NodeKind::Aggregate).next().unwrap();
    let own_tor = f.tors()[0];
    let mut sw = SwitchState::new(agg, NodeKind::Aggregate, FlowletTableMode::Exact, 1);
    sw.update_hula(&f, &mut hula_probe(own_tor, 0.0), 2, 0.0, us(0), us(1000));
    assert!(sw.hula.is_empty());
}

#[test]
fn gap_header_sequence_rules_and_strip() {
    let (g, _) = two_path();
    let agg = g.of_kind(NodeKind::Aggregate).next().unwrap();
    let target = SwitchId::from_index(5);
    let mut sw = SwitchState::new(agg, NodeKind::Aggregate, FlowletTableMode::Exact, 1);
    assert!(!sw.handle_gap_header(&GapHeader::new(target, us(300), 5).unwrap(), false, us(1)));
    sw.handle_gap_header(&GapHeader::new(target, us(200), 7).unwrap(), false, us(2));
    assert_eq!(sw.gaps.get(target).unwrap().gap, us(200));
    sw.handle_gap_header(&GapHeader::new(target, us(900), 5).unwrap(), false, us(3));
    assert_eq!(sw.gaps.get(target).unwrap().gap, us(200));
    assert_eq!(sw.counters.gap_headers_stale, 1);

    let tor = f_tor(&g);
    let mut edge = SwitchState::new(tor, NodeKind::EdgeToR, FlowletTableMode::Exact, 1);
    edge.flowdyn = Some(FlowDynTor::new(edge.id, FlowDynConfig::default()));
    assert!(edge.handle_gap_header(&GapHeader::new(target, us(200), 1).unwrap(), true, us(4)));
    assert_eq!(edge.flowdyn.as_ref().unwrap().local.get(target).unwrap().gap, us(200));
}

fn f_tor(g: &NetworkGraph) -> usize {
    g.index_of(NodeId {
        kind: NodeKind::EdgeToR,
        index: 0,
        pod: Some(0),
    })
    .unwrap()
}

#[test]
fn intermediate_gap_used_while_fresh() {
    let (g, _) = two_path();
    let agg = g.of_kind(NodeKind::Aggregate).next().unwrap();
    let far = 5;
    let mut cfg = lb(Scheme::LetFlow, us(800));
    cfg.flowdyn = true;
    let mut sw = SwitchState::new(agg, NodeKind::Aggregate, FlowletTableMode::Exact, 1);
    assert_eq!(sw.gap_toward(&cfg, far, us(0)), us(800));
    sw.handle_gap_header(&GapHeader::new(SwitchId::from_index(far), us(200), 1).unwrap(), false, us(10));
    assert_eq!(sw.gap_toward(&cfg, far, us(500)), us(200));
    assert_eq!(sw.gap_toward(&cfg, far, us(1011)), us(800));
}

#[test]
fn emitted_probe_sequence() {
    let mut sw = SwitchState::new(4, NodeKind::EdgeToR, FlowletTableMode::Exact, 1);
    let p = sw.emit_probe(us(0), false);
    assert_eq!((p.seq, p.hops.len(), p.encoded_len()), (1, 0, 9));
    let seqs: Vec<u32> = (1..10).map(|i| sw.emit_probe(us(i * 100), false).seq).collect();
    assert_eq!(seqs, (2..=10).collect::<Vec<_>>());
}

#[test]
fn empty_candidates_black_hole() {
    let mut sw = SwitchState::new(0, NodeKind::Aggregate, FlowletTableMode::Exact, 1);
    let cfg = lb(Scheme::Ecmp, us(1));
    assert_eq!(sw.pick_next_hop(&cfg, 1, 0, &[], us(0)), None);
}
