use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataplane::{FlowletTableMode, Scheme};
use crate::flowdyn::{PiggybackMode, StepFunction};
use crate::time::SimTime;
use crate::topology::FatTreeSpec;
use crate::transport::TcpConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{field}: {msg}")]
    Invalid { field: &'static str, msg: String },
    #[error("unknown preset `{0}` (known: {known})", known = PRESETS.join(", "))]
    UnknownPreset(String),
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
}

fn invalid(field: &'static str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field, msg: msg.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WorkloadKind {
    WebSearch,
    DataMining,
    /// Flows read from `replay_file`.
    Replay,
}

impl WorkloadKind {
    pub fn name(self) -> &'static str {
        match self {
            WorkloadKind::WebSearch => "web-search",
            WorkloadKind::DataMining => "data-mining",
            WorkloadKind::Replay => "replay",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputPaths {
    pub json: Option<PathBuf>,
    pub csv: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub flow_list: Option<PathBuf>,
}

/// Everything one simulation run needs. Times are in microseconds unless
/// the field name says otherwise; the topology's own fields are in nanoseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub topology: FatTreeSpec,
    pub scheme: Scheme,
    pub flowdyn: bool,
    pub static_gap_us: u64,
    pub probe_interval_us: u64,
    pub step_unit_us: u64,
    pub threshold: f64,
    pub staleness_us: u64,
    pub piggyback: PiggybackMode,
    pub workload: WorkloadKind,
    /// Overrides the bundled CDF of `workload`.
    pub cdf_file: Option<PathBuf>,
    pub replay_file: Option<PathBuf>,
    pub load: f64,
    pub duration_ms: u64,
    pub warmup_ms: u64,
    /// Extra time after the last arrival for flows in flight to finish.
    pub drain_ms: u64,
    pub seed: u64,
    pub tcp: TcpConfig,
    pub flowlet_table: FlowletTableMode,
    pub output: OutputPaths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            topology: FatTreeSpec::default(),
            scheme: Scheme::LetFlow,
            flowdyn: true,
            static_gap_us: 800,
            probe_interval_us: 100,
            step_unit_us: 100,
            threshold: 0.70,
            staleness_us: 1000,
            piggyback: PiggybackMode::Every,
            workload: WorkloadKind::WebSearch,
            cdf_file: None,
            replay_file: None,
            load: 0.5,
            duration_ms: 200,
            warmup_ms: 20,
            drain_ms: 0,
            seed: 1,
            tcp: TcpConfig::default(),
            flowlet_table: FlowletTableMode::Exact,
            output: OutputPaths::default(),
        }
    }
}

pub const PRESETS: &[&str] = &["symmetric-websearch-50", "symmetric-datamining-10", "asymmetric"];

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        let base = Self::default();
        match name {
            "symmetric-websearch-50" => Ok(base),
            "symmetric-datamining-10" => Ok(Self {
                scheme: Scheme::Hula,
                workload: WorkloadKind::DataMining,
                load: 0.1,
                ..base
            }),
            "asymmetric" => Ok(Self {
                topology: FatTreeSpec {
                    disabled_cores: [0].into(),
                    ..FatTreeSpec::default()
                },
                load: 0.9,
                ..base
            }),
            other => Err(ConfigError::UnknownPreset(other.to_string())),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn topology_label(&self) -> &'static str {
        if self.topology.disabled_cores.is_empty() {
            "symmetric"
        } else {
            "asymmetric"
        }
    }

    pub fn step(&self) -> StepFunction {
        StepFunction {
            step_unit: SimTime::from_micros(self.step_unit_us),
            threshold: self.threshold,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.topology.validate().map_err(|e| invalid("topology", e.to_string()))?;
        if !(self.load > 0.0 && self.load <= 1.0) {
            return Err(invalid("load", format!("{} is outside (0, 1]", self.load)));
        }
        if self.probe_interval_us == 0 {
            return Err(invalid("probe_interval_us", "must be positive"));
        }
        if self.staleness_us == 0 {
            return Err(invalid("staleness_us", "must be positive"));
        }
        if self.step_unit_us == 0 {
            return Err(invalid("step_unit_us", "must be positive"));
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(invalid("threshold", format!("{} is outside (0, 1]", self.threshold)));
        }
        if self.duration_ms == 0 || self.warmup_ms >= self.duration_ms {
            return Err(invalid(
                "duration_ms",
                format!("{} must exceed warmup_ms {}", self.duration_ms, self.warmup_ms),
            ));
        }
        if self.workload == WorkloadKind::Replay && self.replay_file.is_none() {
            return Err(invalid("replay_file", "required when workload = \"replay\""));
        }
        if self.tcp.mss == 0 {
            return Err(invalid("tcp.mss", "must be positive"));
        }
        if let FlowletTableMode::Hashed { slots: 0 } = self.flowlet_table {
            return Err(invalid("flowlet_table.slots", "must be positive"));
        }
        Ok(())
    }
}
