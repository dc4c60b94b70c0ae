//! Dynamic flowlet-gap computation at ToR switches.
//!
//! A ToR receiving probes from a remote origin keeps the fastest and slowest
//! observed path in two register tables, derives the one-way-delay spread
//! between them, rounds it up through a step function, and piggybacks the
//! result back toward the origin. The origin (and switches on the way) keep the
//! received values in a gap table.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::hash::Hasher;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataplane::codec::{GapHeader, ProbeHeader, SwitchId};
use crate::time::SimTime;

/// Bytes per row of a remote (min/max) delay table.
pub const REMOTE_ENTRY_BYTES: u64 = 13;
/// Bytes per row of the local gap table.
pub const LOCAL_ENTRY_BYTES: u64 = 10;

#[derive(Debug, Error, PartialEq)]
pub enum StepError {
    #[error("step unit must be positive")]
    ZeroStep,
    #[error("threshold {0} outside (0, 1]")]
    Threshold(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepFunction {
    pub step_unit: SimTime,
    /// Fraction of a step at which the gap moves to the next step.
    pub threshold: f64,
}

impl Default for StepFunction {
    fn default() -> Self {
        Self {
            step_unit: SimTime::from_micros(100),
            threshold: 0.70,
        }
    }
}

impl StepFunction {
    pub fn new(step_unit: SimTime, threshold: f64) -> Result<Self, StepError> {
        let f = Self {
            step_unit,
            threshold,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<(), StepError> {
        if self.step_unit == SimTime::ZERO {
            return Err(StepError::ZeroStep);
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(StepError::Threshold(self.threshold));
        }
        Ok(())
    }

    fn threshold_ppm(&self) -> u128 {
        (self.threshold * 1e6).round() as u128
    }
}

/// `S * (floor(delta / (t * S)) + 1)`, evaluated in exact integer arithmetic
/// with the threshold resolved to parts per million.
pub fn quantize_gap(delta: SimTime, f: &StepFunction) -> SimTime {
    let step = f.step_unit.as_nanos() as u128;
    let steps = (delta.as_nanos() as u128 * 1_000_000) / (f.threshold_ppm() * step) + 1;
    SimTime::from_nanos(u64::try_from(steps * step).unwrap_or(u64::MAX))
}

/// Stable 64-bit FNV-1a hash of a probe's origin and ordered hop list.
pub fn path_hash(origin: SwitchId, hops: &[SwitchId]) -> u64 {
    let mut h = FnvHasher::default();
    h.write_u32(origin.get());
    for hop in hops {
        h.write_u32(hop.get());
    }
    h.finish()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PathDelayEntry {
    pub origin_tor: SwitchId,
    pub owd: SimTime,
    pub path_hash: u64,
    pub arrival_time: SimTime,
    pub probe_seq: u32,
}

#[derive(Debug, Clone, Default)]
pub struct RemoteTables {
    pub min_remote: BTreeMap<SwitchId, PathDelayEntry>,
    pub max_remote: BTreeMap<SwitchId, PathDelayEntry>,
}

impl RemoteTables {
    /// Apply one probe observation.
    pub fn observe(&mut self, entry: PathDelayEntry) {
        let origin = entry.origin_tor;
        let replace_min = match self.min_remote.get(&origin) {
            None => true,
            Some(cur) => cur.path_hash == entry.path_hash || entry.owd < cur.owd,
        };
        if replace_min {
            self.min_remote.insert(origin, entry);
        }
        let replace_max = match self.max_remote.get(&origin) {
            None => true,
            Some(cur) => cur.path_hash == entry.path_hash || entry.owd > cur.owd,
        };
        if replace_max {
            self.max_remote.insert(origin, entry);
        }
        let inverted = match (self.min_remote.get(&origin), self.max_remote.get(&origin)) {
            (Some(lo), Some(hi)) => lo.owd > hi.owd,
            _ => false,
        };
        if inverted {
            let lo = self.min_remote.remove(&origin).expect("present");
            let hi = self.max_remote.insert(origin, lo).expect("present");
            self.min_remote.insert(origin, hi);
        }
    }

    /// `max.owd - min.owd`, or `None` when either table lacks the origin.
    pub fn compute_delta(&self, origin: SwitchId) -> Option<SimTime> {
        let lo = self.min_remote.get(&origin)?;
        let hi = self.max_remote.get(&origin)?;
        Some(hi.owd.saturating_sub(lo.owd))
    }

    fn fresh_pair(&self, origin: SwitchId, now: SimTime, window: SimTime) -> Option<(&PathDelayEntry, &PathDelayEntry)> {
        let lo = self.min_remote.get(&origin)?;
        let hi = self.max_remote.get(&origin)?;
        let fresh = |e: &PathDelayEntry| now.saturating_sub(e.arrival_time) <= window;
        (fresh(lo) && fresh(hi)).then_some((lo, hi))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LocalGapEntry {
    pub dst_tor: SwitchId,
    pub gap: SimTime,
    pub probe_seq: u32,
    /// When the entry was last written; drives the staleness fallback.
    pub updated: SimTime,
}

/// Gap values learned from piggybacked headers, keyed by the ToR they apply toward.
/// Used both as a ToR's local table and as an intermediate switch's gap register.
#[derive(Debug, Clone, Default)]
pub struct GapTable {
    entries: BTreeMap<SwitchId, LocalGapEntry>,
}

impl GapTable {
    /// Store `header` unless an entry from a newer probe batch is present.
    /// Returns whether the table changed.
    pub fn apply(&mut self, header: &GapHeader, now: SimTime) -> bool {
        if let Some(cur) = self.entries.get(&header.target_tor) {
            if header.probe_seq < cur.probe_seq {
                return false;
            }
        }
        self.entries.insert(
            header.target_tor,
            LocalGapEntry {
                dst_tor: header.target_tor,
                gap: header.gap,
                probe_seq: header.probe_seq,
                updated: now,
            },
        );
        true
    }

    pub fn get(&self, dst: SwitchId) -> Option<&LocalGapEntry> {
        self.entries.get(&dst)
    }

    /// Install a gap directly, bypassing sequence checks.
    pub fn install(&mut self, dst: SwitchId, gap: SimTime, probe_seq: u32, now: SimTime) {
        self.entries.insert(
            dst,
            LocalGapEntry {
                dst_tor: dst,
                gap,
                probe_seq,
                updated: now,
            },
        );
    }

    /// The stored gap if it was refreshed within `window`.
    pub fn fresh_gap(&self, dst: SwitchId, now: SimTime, window: SimTime) -> Option<SimTime> {
        self.entries
            .get(&dst)
            .filter(|e| now.saturating_sub(e.updated) <= window)
            .map(|e| e.gap)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &LocalGapEntry> {
        self.entries.values()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PiggybackMode {
    /// Attach to every departing packet toward the destination.
    Every,
    /// Attach only when the value changed or the last copy is half a staleness window old.
    OnChange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowDynConfig {
    pub step: StepFunction,
    pub fallback_gap: SimTime,
    pub staleness_window: SimTime,
    pub piggyback: PiggybackMode,
}

impl Default for FlowDynConfig {
    fn default() -> Self {
        Self {
            step: StepFunction::default(),
            fallback_gap: SimTime::from_micros(800),
            staleness_window: SimTime::from_millis(1),
            piggyback: PiggybackMode::Every,
        }
    }
}

/// FlowDyn registers of one ToR.
#[derive(Debug, Clone)]
pub struct FlowDynTor {
    pub id: SwitchId,
    pub cfg: FlowDynConfig,
    pub remote: RemoteTables,
    pub local: GapTable,
    last_sent: BTreeMap<SwitchId, (SimTime, u32, SimTime)>,
    pub probes_received: u64,
    pub headers_attached: u64,
}

impl FlowDynTor {
    pub fn new(id: SwitchId, cfg: FlowDynConfig) -> Self {
        Self {
            id,
            cfg,
            remote: RemoteTables::default(),
            local: GapTable::default(),
            last_sent: BTreeMap::new(),
            probes_received: 0,
            headers_attached: 0,
        }
    }

    pub fn on_probe_received(&mut self, probe: &ProbeHeader, now: SimTime) {
        assert_ne!(probe.origin_tor, self.id, "ToR received its own probe");
        assert!(now >= probe.timestamp, "negative one-way delay");
        self.probes_received += 1;
        self.remote.observe(PathDelayEntry {
            origin_tor: probe.origin_tor,
            owd: now - probe.timestamp,
            path_hash: path_hash(probe.origin_tor, &probe.hops),
            arrival_time: now,
            probe_seq: probe.seq,
        });
    }

    pub fn compute_delta(&self, origin: SwitchId) -> Option<SimTime> {
        self.remote.compute_delta(origin)
    }

    /// Gap measured here for traffic arriving from `origin`, with the probe
    /// sequence it derives from. `None` if the tables are missing or stale.
    pub fn measured_gap(&self, origin: SwitchId, now: SimTime) -> Option<(SimTime, u32)> {
        let (lo, hi) = self.remote.fresh_pair(origin, now, self.cfg.staleness_window)?;
        let delta = hi.owd.saturating_sub(lo.owd);
        Some((quantize_gap(delta, &self.cfg.step), lo.probe_seq.max(hi.probe_seq)))
    }

    /// Flowlet gap this ToR applies to its own traffic toward `dst_tor`.
    pub fn current_gap(&self, dst_tor: SwitchId, now: SimTime) -> SimTime {
        self.local
            .fresh_gap(dst_tor, now, self.cfg.staleness_window)
            .unwrap_or(self.cfg.fallback_gap)
    }

    /// Header to attach to a packet leaving toward `dst_tor`.
    pub fn piggyback_gap(&mut self, dst_tor: SwitchId, now: SimTime) -> Option<GapHeader> {
        let (gap, seq) = self.measured_gap(dst_tor, now)?;
        if self.cfg.piggyback == PiggybackMode::OnChange {
            if let Some(&(g, s, at)) = self.last_sent.get(&dst_tor) {
                let recent = now.saturating_sub(at) < SimTime::from_nanos(self.cfg.staleness_window.as_nanos() / 2);
                if g == gap && s == seq && recent {
                    return None;
                }
            }
            self.last_sent.insert(dst_tor, (gap, seq, now));
        }
        let header = GapHeader::new(self.id, gap, seq).ok()?;
        self.headers_attached += 1;
        Some(header)
    }

    /// Aligned text dump of the three tables.
    pub fn dump(&self, now: SimTime) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "tor {} at {}", self.id.get(), now);
        for (name, table) in [("min_remote", &self.remote.min_remote), ("max_remote", &self.remote.max_remote)] {
            let _ = writeln!(out, "{name}:");
            let _ = writeln!(out, "  {:>8} {:>12} {:>18} {:>14} {:>8}", "origin", "owd_ns", "path_hash", "arrival_ns", "seq");
            for e in table.values() {
                let _ = writeln!(
                    out,
                    "  {:>8} {:>12} {:>18x} {:>14} {:>8}",
                    e.origin_tor.get(),
                    e.owd.as_nanos(),
                    e.path_hash,
                    e.arrival_time.as_nanos(),
                    e.probe_seq
                );
            }
        }
        let _ = writeln!(out, "local:");
        let _ = writeln!(out, "  {:>8} {:>12} {:>8} {:>14}", "dst", "gap_ns", "seq", "updated_ns");
        for e in self.local.iter() {
            let _ = writeln!(
                out,
                "  {:>8} {:>12} {:>8} {:>14}",
                e.dst_tor.get(),
                e.gap.as_nanos(),
                e.probe_seq,
                e.updated.as_nanos()
            );
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MemoryFootprint {
    pub remote_table_bytes: u64,
    pub local_table_bytes: u64,
}

pub fn memory_footprint(num_tors: u64) -> MemoryFootprint {
    assert!(num_tors >= 1);
    MemoryFootprint {
        remote_table_bytes: REMOTE_ENTRY_BYTES * num_tors,
        local_table_bytes: LOCAL_ENTRY_BYTES * num_tors,
    }
}
