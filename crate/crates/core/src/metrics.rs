//! Flow completion statistics, port utilization, and result files.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::time::SimTime;
use crate::transport::{FlowId, SizeClass};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowRecord {
    pub flow: FlowId,
    pub size: u64,
    pub start: SimTime,
    pub finish: Option<SimTime>,
    pub retransmissions: u64,
    pub reorder_events: u64,
    pub completed: bool,
    /// Bytes the receiver handed to its application.
    pub delivered: u64,
}

impl FlowRecord {
    pub fn fct(&self) -> Option<SimTime> {
        self.finish.filter(|_| self.completed).map(|f| f - self.start)
    }
}

/// Busy time of one directed port within one sampling window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PortSample {
    pub node: usize,
    pub port: usize,
    pub window_start: SimTime,
    pub bytes_sent: u64,
}

/// FCT statistics in seconds. All three are `None` when no flow completed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FctStats {
    pub count: usize,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub p99: Option<f64>,
}

impl FctStats {
    pub fn from_secs(mut v: Vec<f64>) -> Self {
        if v.is_empty() {
            return Self::default();
        }
        v.sort_by(f64::total_cmp);
        let n = v.len();
        Self {
            count: n,
            mean: Some(v.iter().sum::<f64>() / n as f64),
            median: Some(nearest_rank(&v, 0.5)),
            p99: Some(nearest_rank(&v, 0.99)),
        }
    }
}

/// Nearest-rank percentile of sorted data.
fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let rank = (p * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub overall: FctStats,
    pub mice: FctStats,
    pub elephant: FctStats,
    pub flows: usize,
    pub completed: usize,
    pub incomplete: usize,
    pub reorder_events: u64,
    pub retransmissions: u64,
    pub delivered_bytes: u64,
    pub probe_bytes: u64,
}

pub fn aggregate(records: &[FlowRecord], probe_bytes: u64) -> SummaryStats {
    let mut all = Vec::new();
    let mut mice = Vec::new();
    let mut elephants = Vec::new();
    let mut s = SummaryStats {
        flows: records.len(),
        probe_bytes,
        ..Default::default()
    };
    for r in records {
        s.reorder_events += r.reorder_events;
        s.retransmissions += r.retransmissions;
        s.delivered_bytes += r.delivered;
        let Some(fct) = r.fct() else {
            s.incomplete += 1;
            continue;
        };
        s.completed += 1;
        let secs = fct.as_secs_f64();
        all.push(secs);
        match SizeClass::of(r.size) {
            SizeClass::Mice => mice.push(secs),
            SizeClass::Elephant => elephants.push(secs),
            SizeClass::Medium => {}
        }
    }
    s.overall = FctStats::from_secs(all);
    s.mice = FctStats::from_secs(mice);
    s.elephant = FctStats::from_secs(elephants);
    s
}

/// Highest per-window rate of every port, in Gbps.
pub fn utilization_matrix(samples: &[PortSample], window: SimTime) -> BTreeMap<(usize, usize), f64> {
    let mut out: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let secs = window.as_secs_f64();
    for s in samples {
        let gbps = s.bytes_sent as f64 * 8.0 / secs / 1e9;
        let e = out.entry((s.node, s.port)).or_insert(0.0);
        *e = e.max(gbps);
    }
    out
}

/// Standard deviation over mean; `None` for an empty set or a zero mean.
pub fn coefficient_of_variation(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return None;
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some(var.sqrt() / mean)
}

/// One line of the cross-run results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub scheme: String,
    pub flowdyn: bool,
    pub load: f64,
    pub workload: String,
    pub topology: String,
    pub seed: u64,
    pub mean_fct: Option<f64>,
    pub mice_fct: Option<f64>,
    pub elephant_fct: Option<f64>,
    pub reorders: u64,
    pub retx: u64,
}

pub const CSV_HEADER: &str = "scheme,flowdyn,load,workload,topology,seed,mean_fct,mice_fct,elephant_fct,reorders,retx";

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.9}"))
}

impl CsvRow {
    /// Fixed-precision rendering so equal runs give equal bytes.
    pub fn to_line(&self) -> String {
        format!(
            "{},{},{:.2},{},{},{},{},{},{},{},{}",
            self.scheme,
            self.flowdyn,
            self.load,
            self.workload,
            self.topology,
            self.seed,
            fmt_opt(self.mean_fct),
            fmt_opt(self.mice_fct),
            fmt_opt(self.elephant_fct),
            self.reorders,
            self.retx
        )
    }
}

pub fn csv_table(rows: &[CsvRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_line());
        out.push('\n');
    }
    out
}
