//! Run configuration, single runs and parameter sweeps.

mod config;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::Serialize;

pub use config::{ConfigError, OutputPaths, RunConfig, WorkloadKind, PRESETS};

use crate::dataplane::{Scheme, SwitchCounters};
use crate::flowdyn::FlowDynConfig;
use crate::metrics::{aggregate, coefficient_of_variation, csv_table, utilization_matrix, CsvRow, SummaryStats};
use crate::sim::{NetCounters, SimConfig, Simulator};
use crate::time::SimTime;
use crate::topology::{build_fat_tree, NetworkGraph, NodeKind};
use crate::workload::{generate_arrivals, read_flow_list, write_flow_list, FlowArrival, LoadSpec, SizeCdf};

#[derive(Debug, Clone, Serialize)]
pub struct PortUtilization {
    pub node: String,
    pub peer: String,
    pub max_gbps: f64,
}

/// Everything a run reports; serialized as the run's JSON document.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub summary: SummaryStats,
    pub network: NetCounters,
    pub switches: SwitchCounters,
    pub events: u64,
    pub flows_generated: usize,
    /// Max per-window rate of every switch-to-switch port after warm-up.
    pub utilization: Vec<PortUtilization>,
    /// Coefficient of variation of the aggregate-to-core port maxima.
    pub core_util_cv: Option<f64>,
}

impl RunReport {
    pub fn csv_row(&self) -> CsvRow {
        let c = &self.config;
        CsvRow {
            scheme: c.scheme.name().to_string(),
            flowdyn: c.flowdyn,
            load: c.load,
            workload: c.workload.name().to_string(),
            topology: c.topology_label().to_string(),
            seed: c.seed,
            mean_fct: self.summary.overall.mean,
            mice_fct: self.summary.mice.mean,
            elephant_fct: self.summary.elephant.mean,
            reorders: self.summary.reorder_events,
            retx: self.summary.retransmissions,
        }
    }
}

pub fn sim_config(cfg: &RunConfig) -> SimConfig {
    let mut s = SimConfig::new(cfg.scheme, cfg.flowdyn, cfg.seed);
    let probe = SimTime::from_micros(cfg.probe_interval_us);
    let stale = SimTime::from_micros(cfg.staleness_us);
    // 0 sprays per packet; huge values pin every flow to one path
    s.lb.static_gap = SimTime::from_nanos(cfg.static_gap_us.saturating_mul(1000));
    s.lb.hula_stale = SimTime::from_nanos(10 * probe.as_nanos());
    s.lb.gap_stale = stale;
    s.flowdyn = FlowDynConfig {
        step: cfg.step(),
        fallback_gap: s.lb.static_gap,
        staleness_window: stale,
        piggyback: cfg.piggyback,
    };
    s.tcp = cfg.tcp.clone();
    s.probe_interval = probe;
    s.flowlet_table = cfg.flowlet_table;
    s.sample_from = SimTime::from_millis(cfg.warmup_ms);
    s
}

pub fn load_cdf(cfg: &RunConfig) -> Result<SizeCdf> {
    if let Some(p) = &cfg.cdf_file {
        return SizeCdf::load(p).with_context(|| format!("cdf_file {}", p.display()));
    }
    Ok(match cfg.workload {
        WorkloadKind::DataMining => SizeCdf::data_mining(),
        _ => SizeCdf::web_search(),
    })
}

pub fn flows_for(cfg: &RunConfig, graph: &NetworkGraph) -> Result<Vec<FlowArrival>> {
    let duration = SimTime::from_millis(cfg.duration_ms);
    if cfg.workload == WorkloadKind::Replay {
        let path = cfg.replay_file.as_ref().context("replay_file")?;
        let f = File::open(path).with_context(|| format!("replay_file {}", path.display()))?;
        let mut flows = read_flow_list(f)?;
        flows.retain(|f| f.start < duration);
        return Ok(flows);
    }
    let cdf = load_cdf(cfg)?;
    let spec = LoadSpec::for_load(cfg.load, cfg.topology.pods, cfg.seed)?;
    Ok(generate_arrivals(&spec, &cdf, graph, duration)?)
}

/// Build, simulate and summarize one configuration. Writes no files.
pub fn simulate(cfg: &RunConfig) -> Result<RunReport> {
    cfg.validate()?;
    let graph = build_fat_tree(&cfg.topology)?;
    let flows = flows_for(cfg, &graph)?;
    let mut sim = Simulator::new(&graph, sim_config(cfg));
    if let Some(path) = &cfg.output.trace {
        let f = File::create(path).with_context(|| format!("trace file {}", path.display()))?;
        sim.set_trace(Box::new(BufWriter::new(f)));
    }
    let warmup = SimTime::from_millis(cfg.warmup_ms);
    let mut measured = Vec::new();
    for f in &flows {
        let id = sim.add_flow(f.src, f.dst, f.bytes, f.start);
        if f.start >= warmup {
            measured.push(id);
        }
    }
    sim.run_until(SimTime::from_millis(cfg.duration_ms + cfg.drain_ms));

    let records: Vec<_> = measured.iter().map(|&i| sim.record(i)).collect();
    let network = sim.counters();
    let summary = aggregate(&records, network.probe_bytes);
    let window = SimTime::from_micros(cfg.probe_interval_us);
    let matrix = utilization_matrix(sim.port_samples(), window);
    let mut utilization = Vec::new();
    let mut core_ports = Vec::new();
    for node in 0..graph.nodes().len() {
        let kind = graph.node(node).kind;
        if kind == NodeKind::Host {
            continue;
        }
        for (p, adj) in graph.adjacency(node).iter().enumerate() {
            let peer = graph.node(adj.peer);
            if peer.kind == NodeKind::Host {
                continue;
            }
            let gbps = matrix.get(&(node, p)).copied().unwrap_or(0.0);
            if kind == NodeKind::Aggregate && peer.kind == NodeKind::Core && graph.link(adj.link).enabled {
                core_ports.push(gbps);
            }
            utilization.push(PortUtilization {
                node: graph.node(node).to_string(),
                peer: peer.to_string(),
                max_gbps: gbps,
            });
        }
    }
    Ok(RunReport {
        config: cfg.clone(),
        summary,
        network,
        switches: sim.switch_counters(),
        events: sim.events_processed(),
        flows_generated: flows.len(),
        utilization,
        core_util_cv: coefficient_of_variation(&core_ports),
    })
}

/// `simulate` plus the JSON, CSV and flow-list files named in `cfg.output`.
pub fn run(cfg: &RunConfig) -> Result<RunReport> {
    let report = simulate(cfg)?;
    let out = &cfg.output;
    if let Some(p) = &out.json {
        let f = File::create(p).with_context(|| format!("json output {}", p.display()))?;
        serde_json::to_writer_pretty(BufWriter::new(f), &report)?;
    }
    if let Some(p) = &out.csv {
        std::fs::write(p, csv_table(&[report.csv_row()])).with_context(|| format!("csv output {}", p.display()))?;
    }
    if let Some(p) = &out.flow_list {
        let graph = build_fat_tree(&cfg.topology)?;
        let flows = flows_for(cfg, &graph)?;
        write_flow_list(&flows, BufWriter::new(File::create(p)?))?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub base: RunConfig,
    pub loads: Vec<f64>,
    pub schemes: Vec<Scheme>,
    pub flowdyn: Vec<bool>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedMean {
    pub scheme: String,
    pub flowdyn: bool,
    pub load: f64,
    pub runs: usize,
    pub mean_fct: Option<f64>,
    pub std_fct: Option<f64>,
}

/// FCT(static) / FCT(FlowDyn) for one scheme and load, from seed means.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ratio {
    pub scheme: String,
    pub load: f64,
    pub static_fct: Option<f64>,
    pub flowdyn_fct: Option<f64>,
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct SweepResult {
    pub rows: Vec<CsvRow>,
    pub failures: Vec<(RunConfig, String)>,
    pub means: Vec<SeedMean>,
    pub ratios: Vec<Ratio>,
}

impl SweepSpec {
    pub fn configs(&self) -> Vec<RunConfig> {
        let mut out = Vec::new();
        for &load in &self.loads {
            for &scheme in &self.schemes {
                for &flowdyn in &self.flowdyn {
                    for &seed in &self.seeds {
                        out.push(RunConfig {
                            load,
                            scheme,
                            flowdyn,
                            seed,
                            output: OutputPaths::default(),
                            ..self.base.clone()
                        });
                    }
                }
            }
        }
        out
    }
}

fn load_key(load: f64) -> u64 {
    (load * 1e6).round() as u64
}

pub fn sweep(spec: &SweepSpec) -> SweepResult {
    let configs = spec.configs();
    let outcomes: Vec<(RunConfig, Result<CsvRow, String>)> = configs
        .into_par_iter()
        .map(|c| {
            let r = simulate(&c).map(|r| r.csv_row()).map_err(|e| format!("{e:#}"));
            (c, r)
        })
        .collect();
    let mut res = SweepResult::default();
    for (c, r) in outcomes {
        match r {
            Ok(row) => res.rows.push(row),
            Err(e) => res.failures.push((c, e)),
        }
    }
    res.rows.sort_by(|a, b| {
        (&a.scheme, a.flowdyn, load_key(a.load), a.seed).cmp(&(&b.scheme, b.flowdyn, load_key(b.load), b.seed))
    });

    let mut groups: BTreeMap<(String, u64, bool), Vec<f64>> = BTreeMap::new();
    let mut counts: BTreeMap<(String, u64, bool), usize> = BTreeMap::new();
    for r in &res.rows {
        let key = (r.scheme.clone(), load_key(r.load), r.flowdyn);
        *counts.entry(key.clone()).or_default() += 1;
        let v = groups.entry(key).or_default();
        if let Some(m) = r.mean_fct {
            v.push(m);
        }
    }
    for ((scheme, load, flowdyn), v) in &groups {
        let (mean, std) = if v.is_empty() {
            (None, None)
        } else {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64;
            (Some(m), Some(var.sqrt()))
        };
        res.means.push(SeedMean {
            scheme: scheme.clone(),
            flowdyn: *flowdyn,
            load: *load as f64 / 1e6,
            runs: counts[&(scheme.clone(), *load, *flowdyn)],
            mean_fct: mean,
            std_fct: std,
        });
    }
    let lookup = |scheme: &str, load: f64, fd: bool| {
        res.means
            .iter()
            .find(|m| m.scheme == scheme && load_key(m.load) == load_key(load) && m.flowdyn == fd)
            .and_then(|m| m.mean_fct)
    };
    let mut ratios = Vec::new();
    for m in res.means.iter().filter(|m| !m.flowdyn) {
        if !res.means.iter().any(|o| o.flowdyn && o.scheme == m.scheme && load_key(o.load) == load_key(m.load)) {
            continue;
        }
        let s = lookup(&m.scheme, m.load, false);
        let f = lookup(&m.scheme, m.load, true);
        ratios.push(Ratio {
            scheme: m.scheme.clone(),
            load: m.load,
            static_fct: s,
            flowdyn_fct: f,
            ratio: s.zip(f).filter(|(_, f)| *f > 0.0).map(|(s, f)| s / f),
        });
    }
    res.ratios = ratios;
    res
}

impl SweepResult {
    pub fn rows_csv(&self) -> String {
        csv_table(&self.rows)
    }

    pub fn ratios_csv(&self) -> String {
        let mut out = String::from("scheme,load,static_fct,flowdyn_fct,ratio\n");
        let f = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.9}"));
        for r in &self.ratios {
            out.push_str(&format!("{},{:.2},{},{},{}\n", r.scheme, r.load, f(r.static_fct), f(r.flowdyn_fct), f(r.ratio)));
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("runs.csv"), self.rows_csv())?;
        std::fs::write(dir.join("ratios.csv"), self.ratios_csv())?;
        std::fs::write(dir.join("means.json"), serde_json::to_string_pretty(&self.means)?)?;
        Ok(())
    }
}
