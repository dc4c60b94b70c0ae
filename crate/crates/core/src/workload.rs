//! Flow-size distributions and Poisson client/server traffic.

use std::hash::Hasher;
use std::path::Path;

use fnv::FnvHasher;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::SimTime;
use crate::topology::{NetworkGraph, NodeKind};

pub const WEB_SEARCH_CSV: &str = include_str!("../data/web_search.csv");
pub const DATA_MINING_CSV: &str = include_str!("../data/data_mining.csv");

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("line {line}: {msg}")]
    Row { line: u64, msg: String },
    #[error("cdf needs at least two points")]
    TooFewPoints,
    #[error("last cumulative probability is {0}, expected 1.0")]
    NotNormalized(f64),
    #[error("load fraction {0} outside (0, 1]")]
    Load(f64),
    #[error("no {0} hosts in the topology")]
    NoHosts(&'static str),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Piecewise-linear empirical CDF. A first point with probability `p0 > 0`
/// is a point mass at the smallest size.
#[derive(Debug, Clone, PartialEq)]
pub struct SizeCdf {
    points: Vec<(u64, f64)>,
}

impl SizeCdf {
    pub fn new(points: Vec<(u64, f64)>) -> Result<Self, WorkloadError> {
        if points.len() < 2 {
            return Err(WorkloadError::TooFewPoints);
        }
        for (i, w) in points.windows(2).enumerate() {
            let line = i as u64 + 2;
            if w[1].0 <= w[0].0 {
                return Err(WorkloadError::Row {
                    line,
                    msg: format!("size {} not above {}", w[1].0, w[0].0),
                });
            }
            if w[1].1 <= w[0].1 {
                return Err(WorkloadError::Row {
                    line,
                    msg: format!("probability {} not above {}", w[1].1, w[0].1),
                });
            }
        }
        let (_, first) = points[0];
        if !(0.0..=1.0).contains(&first) {
            return Err(WorkloadError::Row {
                line: 1,
                msg: format!("probability {first} outside [0, 1]"),
            });
        }
        let last = points[points.len() - 1].1;
        if (last - 1.0).abs() > 1e-9 {
            return Err(WorkloadError::NotNormalized(last));
        }
        Ok(Self { points })
    }

    /// Parse `size_bytes,cum_prob` rows. `#` comments and a header row are allowed.
    /// Errors name the line in the input.
    pub fn parse(text: &str) -> Result<Self, WorkloadError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut points: Vec<(u64, f64)> = Vec::new();
        for rec in reader.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            if rec.get(0) == Some("size_bytes") {
                continue;
            }
            let bad = |msg: String| WorkloadError::Row { line, msg };
            if rec.len() != 2 {
                return Err(bad(format!("expected 2 fields, got {}", rec.len())));
            }
            let size: u64 = rec[0].parse().map_err(|e| bad(format!("size: {e}")))?;
            let prob: f64 = rec[1].parse().map_err(|e| bad(format!("cum_prob: {e}")))?;
            if let Some(&(ps, pp)) = points.last() {
                if size <= ps || prob <= pp {
                    return Err(bad(format!("row ({size}, {prob}) does not increase on ({ps}, {pp})")));
                }
            }
            points.push((size, prob));
        }
        Self::new(points)
    }

    pub fn load(path: &Path) -> Result<Self, WorkloadError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn web_search() -> Self {
        Self::parse(WEB_SEARCH_CSV).expect("bundled cdf is valid")
    }

    pub fn data_mining() -> Self {
        Self::parse(DATA_MINING_CSV).expect("bundled cdf is valid")
    }

    pub fn points(&self) -> &[(u64, f64)] {
        &self.points
    }

    pub fn min_size(&self) -> u64 {
        self.points[0].0
    }

    pub fn max_size(&self) -> u64 {
        self.points[self.points.len() - 1].0
    }

    /// Expectation of the interpolated distribution.
    pub fn mean(&self) -> f64 {
        let (s0, p0) = self.points[0];
        let mut m = s0 as f64 * p0;
        for w in self.points.windows(2) {
            let ((a, pa), (b, pb)) = (w[0], w[1]);
            m += (pb - pa) * (a as f64 + b as f64) / 2.0;
        }
        m
    }

    /// Cumulative probability at `size`.
    pub fn cdf(&self, size: f64) -> f64 {
        let (s0, p0) = self.points[0];
        if size < s0 as f64 {
            return 0.0;
        }
        for w in self.points.windows(2) {
            let ((a, pa), (b, pb)) = (w[0], w[1]);
            if size <= b as f64 {
                return pa + (pb - pa) * (size - a as f64) / (b - a) as f64;
            }
        }
        let _ = p0;
        1.0
    }

    /// Inverse transform of a uniform draw `u` in [0, 1].
    pub fn quantile(&self, u: f64) -> u64 {
        let (s0, p0) = self.points[0];
        if u <= p0 {
            return s0;
        }
        for w in self.points.windows(2) {
            let ((a, pa), (b, pb)) = (w[0], w[1]);
            if u <= pb {
                let x = a as f64 + (b - a) as f64 * (u - pa) / (pb - pa);
                return (x.round() as u64).clamp(a, b);
            }
        }
        self.max_size()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        self.quantile(rng.random::<f64>())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadSpec {
    pub load_fraction: f64,
    pub connections_per_client: u32,
    pub client_pods: Vec<u32>,
    pub server_pods: Vec<u32>,
    pub seed: u64,
}

impl LoadSpec {
    /// Clients in the first half of the pods, servers in the second half;
    /// one parallel connection per 10 % of load.
    pub fn for_load(load_fraction: f64, pods: u32, seed: u64) -> Result<Self, WorkloadError> {
        if !(load_fraction > 0.0 && load_fraction <= 1.0) {
            return Err(WorkloadError::Load(load_fraction));
        }
        let half = pods / 2;
        Ok(Self {
            load_fraction,
            connections_per_client: ((load_fraction * 10.0).round() as u32).max(1),
            client_pods: (0..half.max(1)).collect(),
            server_pods: (half..pods).collect(),
            seed,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowArrival {
    pub start: SimTime,
    /// Dense node indices.
    pub src: usize,
    pub dst: usize,
    pub bytes: u64,
}

fn hosts_in(graph: &NetworkGraph, pods: &[u32]) -> Vec<usize> {
    graph
        .of_kind(NodeKind::Host)
        .filter(|&h| graph.node(h).pod.is_some_and(|p| pods.contains(&p)))
        .collect()
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut h = FnvHasher::default();
    h.write_u64(seed);
    h.write_u64(stream);
    ChaCha8Rng::seed_from_u64(h.finish())
}

/// Number of concurrent Poisson generators a load spec implies.
pub fn generator_count(spec: &LoadSpec, graph: &NetworkGraph) -> usize {
    hosts_in(graph, &spec.client_pods).len() * spec.connections_per_client as usize
}

/// Poisson flow arrivals over `[0, duration)`, sorted by start time.
pub fn generate_arrivals(
    spec: &LoadSpec,
    cdf: &SizeCdf,
    graph: &NetworkGraph,
    duration: SimTime,
) -> Result<Vec<FlowArrival>, WorkloadError> {
    let clients = hosts_in(graph, &spec.client_pods);
    let servers = hosts_in(graph, &spec.server_pods);
    if clients.is_empty() {
        return Err(WorkloadError::NoHosts("client"));
    }
    if servers.is_empty() {
        return Err(WorkloadError::NoHosts("server"));
    }
    let conns = spec.connections_per_client.max(1);
    let rate_per_gen_bps = spec.load_fraction * graph.spec.host_link_capacity as f64 / f64::from(conns);
    let flows_per_sec = rate_per_gen_bps / (cdf.mean() * 8.0);
    let gap = Exp::new(flows_per_sec).map_err(|_| WorkloadError::Load(spec.load_fraction))?;

    let mut out = Vec::new();
    for (ci, &client) in clients.iter().enumerate() {
        for c in 0..conns {
            let mut rng = stream_rng(spec.seed, (ci as u64) << 16 | u64::from(c));
            let mut t = gap.sample(&mut rng);
            while t < duration.as_secs_f64() {
                let dst = servers[rng.random_range(0..servers.len())];
                out.push(FlowArrival {
                    start: SimTime::from_secs_f64(t),
                    src: client,
                    dst,
                    bytes: cdf.sample(&mut rng),
                });
                t += gap.sample(&mut rng);
            }
        }
    }
    out.sort_by_key(|f| (f.start, f.src, f.dst));
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct FlowRow {
    start_time: f64,
    src: usize,
    dst: usize,
    bytes: u64,
}

/// CSV with columns `start_time,src,dst,bytes` (seconds, node indices).
pub fn write_flow_list<W: std::io::Write>(flows: &[FlowArrival], w: W) -> Result<(), WorkloadError> {
    let mut wr = csv::Writer::from_writer(w);
    for f in flows {
        wr.serialize(FlowRow {
            start_time: f.start.as_secs_f64(),
            src: f.src,
            dst: f.dst,
            bytes: f.bytes,
        })?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_flow_list<R: std::io::Read>(r: R) -> Result<Vec<FlowArrival>, WorkloadError> {
    let mut rd = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for row in rd.deserialize() {
        let row: FlowRow = row?;
        out.push(FlowArrival {
            start: SimTime::from_secs_f64(row.start_time),
            src: row.src,
            dst: row.dst,
            bytes: row.bytes,
        });
    }
    out.sort_by_key(|f| (f.start, f.src, f.dst));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{build_fat_tree, FatTreeSpec};

    #[test]
    fn two_point_cdf() {
        let cdf = SizeCdf::parse("1000,0.5\n10000,1.0\n").unwrap();
        assert_eq!(cdf.quantile(0.0), 1000);
        assert_eq!(cdf.quantile(1.0), 10000);
        assert_eq!(cdf.quantile(0.75), 5500);
    }

    #[test]
    fn unsorted_rows_name_the_line() {
        let err = SizeCdf::parse("# header comment\nsize_bytes,cum_prob\n1000,0.2\n500,0.6\n2000,1.0\n").unwrap_err();
        assert!(err.to_string().starts_with("line 4:"), "{err}");
        let err = SizeCdf::parse("1000,0.5\n2000,0.4\n").unwrap_err();
        assert!(err.to_string().starts_with("line 2:"), "{err}");
        assert!(matches!(SizeCdf::parse("1000,1.0\n"), Err(WorkloadError::TooFewPoints)));
        assert!(matches!(SizeCdf::parse("1,0.2\n2,0.9\n"), Err(WorkloadError::NotNormalized(_))));
    }

    #[test]
    fn bundled_means() {
        // frozen from an independent trapezoid evaluation of the CSV files
        assert!((SizeCdf::web_search().mean() - 1_665_830.8).abs() < 1.0);
        assert!((SizeCdf::data_mining().mean() - 7_470_236.0).abs() < 1.0);
    }

    #[test]
    fn sample_stays_in_range() {
        let cdf = SizeCdf::web_search();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let s = cdf.sample(&mut rng);
            assert!((cdf.min_size()..=cdf.max_size()).contains(&s));
        }
    }

    #[test]
    fn load_spec_connection_counts() {
        for (load, conns) in [(0.1, 1), (0.5, 5), (0.9, 9)] {
            assert_eq!(LoadSpec::for_load(load, 4, 1).unwrap().connections_per_client, conns);
        }
        assert!(LoadSpec::for_load(0.0, 4, 1).is_err());
        let g = build_fat_tree(&FatTreeSpec::default()).unwrap();
        assert_eq!(generator_count(&LoadSpec::for_load(0.1, 4, 1).unwrap(), &g), 32);
        assert_eq!(generator_count(&LoadSpec::for_load(0.9, 4, 1).unwrap(), &g), 288);
    }

    #[test]
    fn arrivals_are_inter_pod_and_deterministic() {
        let g = build_fat_tree(&FatTreeSpec::default()).unwrap();
        let spec = LoadSpec::for_load(0.5, 4, 7).unwrap();
        let cdf = SizeCdf::web_search();
        let a = generate_arrivals(&spec, &cdf, &g, SimTime::from_millis(50)).unwrap();
        let b = generate_arrivals(&spec, &cdf, &g, SimTime::from_millis(50)).unwrap();
        assert_eq!(a, b);
        assert!(!a.is_empty());
        for f in &a {
            assert!(g.node(f.src).pod.unwrap() < 2);
            assert!(g.node(f.dst).pod.unwrap() >= 2);
        }
        let c = generate_arrivals(&LoadSpec { seed: 8, ..spec }, &cdf, &g, SimTime::from_millis(50)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn flow_list_round_trip() {
        let flows = vec![FlowArrival {
            start: SimTime::from_micros(1500),
            src: 3,
            dst: 70,
            bytes: 12345,
        }];
        let mut buf = Vec::new();
        write_flow_list(&flows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("start_time,src,dst,bytes\n0.0015,3,70,12345"));
        assert_eq!(read_flow_list(buf.as_slice()).unwrap(), flows);
    }
}
