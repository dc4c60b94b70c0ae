use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use flowdyn::dataplane::Scheme;
use flowdyn::harness::{self, RunConfig, SweepSpec, WorkloadKind};
use flowdyn::sim::Simulator;
use flowdyn::time::SimTime;
use flowdyn::topology::build_fat_tree;

#[derive(Parser)]
#[command(name = "flowdyn", version, about = "Fat-tree flowlet load-balancing simulator with dynamic flowlet gaps")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate one configuration and write JSON/CSV results.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        json: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Write one line per simulator event to this file.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Export the generated flows for replay.
        #[arg(long)]
        flow_list: Option<PathBuf>,
        /// Print the effective configuration as TOML and exit.
        #[arg(long)]
        dump_config: bool,
    },
    /// Cartesian sweep over loads, schemes, FlowDyn on/off and seeds.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")]
        loads: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "ecmp,letflow,hula")]
        schemes: Vec<Scheme>,
        #[arg(long, value_enum, default_value_t = FlowDynMode::Both)]
        modes: FlowDynMode,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
        seeds: Vec<u64>,
        /// Directory for runs.csv, ratios.csv and means.json.
        #[arg(long, default_value = "sweep-out")]
        out: PathBuf,
    },
    /// Print the topology as an edge list.
    Topology {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Run until a time and print one ToR's FlowDyn tables.
    Tables {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Node index of the ToR.
        #[arg(long)]
        tor: usize,
        #[arg(long, default_value_t = 10)]
        at_ms: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FlowDynMode {
    On,
    Off,
    Both,
}

#[derive(Args)]
struct ConfigArgs {
    /// Start from a named preset.
    #[arg(long)]
    preset: Option<String>,
    /// Start from a TOML file (applied after the preset).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scheme: Option<Scheme>,
    #[arg(long)]
    flowdyn: Option<bool>,
    #[arg(long)]
    workload: Option<String>,
    #[arg(long)]
    load: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    duration_ms: Option<u64>,
    #[arg(long)]
    warmup_ms: Option<u64>,
    #[arg(long)]
    drain_ms: Option<u64>,
    #[arg(long)]
    static_gap_us: Option<u64>,
    #[arg(long)]
    probe_interval_us: Option<u64>,
    #[arg(long)]
    step_unit_us: Option<u64>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    cdf_file: Option<PathBuf>,
    #[arg(long)]
    replay_file: Option<PathBuf>,
    /// Disable a core switch (repeatable).
    #[arg(long)]
    disable_core: Vec<u32>,
}

impl ConfigArgs {
    fn build(&self) -> Result<RunConfig> {
        let mut c = match (&self.preset, &self.config) {
            (_, Some(path)) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                RunConfig::from_toml(&text)?
            }
            (Some(p), None) => RunConfig::preset(p)?,
            (None, None) => RunConfig::default(),
        };
        if let (Some(_), Some(_)) = (&self.preset, &self.config) {
            bail!("--preset and --config are mutually exclusive");
        }
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f.clone() { c.$f = v.into(); } )* };
        }
        set!(scheme, flowdyn, load, seed, duration_ms, warmup_ms, drain_ms, static_gap_us, probe_interval_us, step_unit_us, threshold);
        if let Some(w) = &self.workload {
            c.workload = match w.as_str() {
                "web-search" => WorkloadKind::WebSearch,
                "data-mining" => WorkloadKind::DataMining,
                "replay" => WorkloadKind::Replay,
                other => bail!("workload: unknown `{other}` (web-search, data-mining, replay)"),
            };
        }
        if self.cdf_file.is_some() {
            c.cdf_file = self.cdf_file.clone();
        }
        if self.replay_file.is_some() {
            c.replay_file = self.replay_file.clone();
        }
        c.topology.disabled_cores.extend(self.disable_core.iter().copied());
        c.validate()?;
        Ok(c)
    }
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Run {
            cfg,
            json,
            csv,
            trace,
            flow_list,
            dump_config,
        } => {
            let mut c = cfg.build()?;
            c.output.json = json.or(c.output.json);
            c.output.csv = csv.or(c.output.csv);
            c.output.trace = trace.or(c.output.trace);
            c.output.flow_list = flow_list.or(c.output.flow_list);
            if dump_config {
                print!("{}", c.to_toml());
                return Ok(());
            }
            let report = harness::run(&c)?;
            let row = report.csv_row();
            println!("{}", flowdyn::metrics::CSV_HEADER);
            println!("{}", row.to_line());
            eprintln!(
                "flows {} completed {} incomplete {} events {}",
                report.summary.flows, report.summary.completed, report.summary.incomplete, report.events
            );
        }
        Cmd::Sweep {
            cfg,
            loads,
            schemes,
            modes,
            seeds,
            out,
        } => {
            let flowdyn = match modes {
                FlowDynMode::On => vec![true],
                FlowDynMode::Off => vec![false],
                FlowDynMode::Both => vec![false, true],
            };
            if loads.is_empty() || schemes.is_empty() || seeds.is_empty() {
                bail!("sweep lists must be non-empty");
            }
            let res = harness::sweep(&SweepSpec {
                base: cfg.build()?,
                loads,
                schemes,
                flowdyn,
                seeds,
            });
            res.write(&out)?;
            print!("{}", res.ratios_csv());
            for (c, e) in &res.failures {
                eprintln!("run failed ({} flowdyn={} load={} seed={}): {e}", c.scheme.name(), c.flowdyn, c.load, c.seed);
            }
        }
        Cmd::Topology { cfg } => {
            let c = cfg.build()?;
            print!("{}", build_fat_tree(&c.topology)?.to_edge_list());
        }
        Cmd::Tables { cfg, tor, at_ms } => {
            let mut c = cfg.build()?;
            c.flowdyn = true;
            c.duration_ms = c.duration_ms.max(at_ms + 1);
            let graph = build_fat_tree(&c.topology)?;
            let mut sim = Simulator::new(&graph, harness::sim_config(&c));
            for f in harness::flows_for(&c, &graph)? {
                sim.add_flow(f.src, f.dst, f.bytes, f.start);
            }
            let at = SimTime::from_millis(at_ms);
            sim.run_until(at);
            let fd = sim
                .switch(tor)
                .and_then(|s| s.flowdyn.as_ref())
                .with_context(|| format!("node {tor} is not an edge ToR"))?;
            print!("{}", fd.dump(at));
        }
    }
    Ok(())
}
