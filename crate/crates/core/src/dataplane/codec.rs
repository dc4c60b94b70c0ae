//! Wire layouts for the probe header and the piggybacked gap header.
//!
//! Probe header, big-endian:
//!
//! ```text
//! origin_tor  3 B
//! timestamp   6 B   send time in ns, truncated to 48 bits
//! hops        3 B each, in traversal order
//! util        1 B   optional, utilization * 255
//! ```
//!
//! The probe sequence number travels in the outer encapsulation (it is not part
//! of the per-hop byte budget), so `decode` takes it as an argument. The hop
//! count is implied by the header length.
//!
//! Gap header, big-endian: `target_tor 3 B | gap_us 2 B | probe_seq 4 B`.

use thiserror::Error;

use crate::time::SimTime;

pub const SWITCH_ID_BYTES: usize = 3;
pub const TIMESTAMP_BYTES: usize = 6;
pub const PROBE_BASE_BYTES: usize = SWITCH_ID_BYTES + TIMESTAMP_BYTES;
pub const GAP_HEADER_BYTES: usize = 9;

const MAX_SWITCH_ID: u32 = (1 << 24) - 1;
const TIMESTAMP_MASK: u64 = (1 << 48) - 1;

/// 3-byte switch identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SwitchId(u32);

impl SwitchId {
    pub fn new(id: u32) -> Result<Self, CodecError> {
        if id > MAX_SWITCH_ID {
            return Err(CodecError::SwitchIdRange(id));
        }
        Ok(SwitchId(id))
    }

    /// For dense node indices known to fit.
    pub fn from_index(idx: usize) -> Self {
        Self::new(idx as u32).expect("node index exceeds 24 bits")
    }

    pub fn get(self) -> u32 {
        self.0
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    fn put(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.0.to_be_bytes()[1..]);
    }

    fn read(b: &[u8]) -> Self {
        SwitchId(u32::from_be_bytes([0, b[0], b[1], b[2]]))
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CodecError {
    #[error("switch id {0} does not fit in 3 bytes")]
    SwitchIdRange(u32),
    #[error("probe header length {0} is not 9 + 3k (+1 with util)")]
    ProbeLength(usize),
    #[error("gap header must be {GAP_HEADER_BYTES} bytes, got {0}")]
    GapLength(usize),
    #[error("gap of {0} us does not fit the 2-byte field")]
    GapRange(u64),
    #[error("gap must be positive")]
    ZeroGap,
    #[error("switch {0} appears twice in the hop list")]
    HopLoop(u32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeHeader {
    pub origin_tor: SwitchId,
    /// Send time; only the low 48 bits of the nanosecond count are carried.
    pub timestamp: SimTime,
    pub seq: u32,
    pub hops: Vec<SwitchId>,
    /// Maximum path utilization in [0, 1], present in HULA mode.
    pub util: Option<f64>,
}

impl ProbeHeader {
    pub fn new(origin_tor: SwitchId, timestamp: SimTime, seq: u32, with_util: bool) -> Self {
        Self {
            origin_tor,
            timestamp,
            seq,
            hops: Vec::new(),
            util: with_util.then_some(0.0),
        }
    }

    pub fn encoded_len(&self) -> usize {
        PROBE_BASE_BYTES + SWITCH_ID_BYTES * self.hops.len() + usize::from(self.util.is_some())
    }

    pub fn push_hop(&mut self, id: SwitchId) -> Result<(), CodecError> {
        if self.hops.contains(&id) || id == self.origin_tor {
            return Err(CodecError::HopLoop(id.get()));
        }
        self.hops.push(id);
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.origin_tor.put(&mut out);
        let ts = self.timestamp.as_nanos() & TIMESTAMP_MASK;
        out.extend_from_slice(&ts.to_be_bytes()[2..]);
        for h in &self.hops {
            h.put(&mut out);
        }
        if let Some(u) = self.util {
            out.push(quantize_util(u));
        }
        out
    }

    pub fn decode(bytes: &[u8], seq: u32, with_util: bool) -> Result<Self, CodecError> {
        let body = bytes.len().checked_sub(usize::from(with_util));
        let hop_bytes = match body.and_then(|b| b.checked_sub(PROBE_BASE_BYTES)) {
            Some(h) if h % SWITCH_ID_BYTES == 0 => h,
            _ => return Err(CodecError::ProbeLength(bytes.len())),
        };
        let origin_tor = SwitchId::read(&bytes[0..3]);
        let mut ts = [0u8; 8];
        ts[2..].copy_from_slice(&bytes[3..9]);
        let mut hops = Vec::with_capacity(hop_bytes / SWITCH_ID_BYTES);
        for chunk in bytes[9..9 + hop_bytes].chunks_exact(SWITCH_ID_BYTES) {
            let id = SwitchId::read(chunk);
            if hops.contains(&id) {
                return Err(CodecError::HopLoop(id.get()));
            }
            hops.push(id);
        }
        let util = with_util.then(|| f64::from(bytes[bytes.len() - 1]) / 255.0);
        Ok(Self {
            origin_tor,
            timestamp: SimTime::from_nanos(u64::from_be_bytes(ts)),
            seq,
            hops,
            util,
        })
    }
}

/// Utilization byte: round(u * 255), clamped to [0, 1].
pub fn quantize_util(u: f64) -> u8 {
    (u.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GapHeader {
    /// The ToR that measured the gap; it applies to traffic headed toward it.
    pub target_tor: SwitchId,
    pub gap: SimTime,
    pub probe_seq: u32,
}

impl GapHeader {
    /// Gaps are carried in whole microseconds (rounded up) in 2 bytes.
    pub fn new(target_tor: SwitchId, gap: SimTime, probe_seq: u32) -> Result<Self, CodecError> {
        let us = gap.as_nanos().div_ceil(1_000);
        if us == 0 {
            return Err(CodecError::ZeroGap);
        }
        if us > u64::from(u16::MAX) {
            return Err(CodecError::GapRange(us));
        }
        Ok(Self {
            target_tor,
            gap: SimTime::from_micros(us),
            probe_seq,
        })
    }

    pub fn encode(&self) -> [u8; GAP_HEADER_BYTES] {
        let mut out = Vec::with_capacity(GAP_HEADER_BYTES);
        self.target_tor.put(&mut out);
        out.extend_from_slice(&((self.gap.as_nanos() / 1_000) as u16).to_be_bytes());
        out.extend_from_slice(&self.probe_seq.to_be_bytes());
        out.try_into().expect("fixed layout")
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        if bytes.len() != GAP_HEADER_BYTES {
            return Err(CodecError::GapLength(bytes.len()));
        }
        let gap_us = u16::from_be_bytes([bytes[3], bytes[4]]);
        if gap_us == 0 {
            return Err(CodecError::ZeroGap);
        }
        Ok(Self {
            target_tor: SwitchId::read(&bytes[0..3]),
            gap: SimTime::from_micros(u64::from(gap_us)),
            probe_seq: u32::from_be_bytes([bytes[5], bytes[6], bytes[7], bytes[8]]),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn id(n: u32) -> SwitchId {
        SwitchId::new(n).unwrap()
    }

    #[test]
    fn empty_probe_is_nine_bytes() {
        let p = ProbeHeader::new(id(4), SimTime::from_micros(100), 1, false);
        assert_eq!(p.encode().len(), 9);
        assert_eq!(p.encoded_len(), 9);
    }

    #[test]
    fn three_hop_probe_sizes() {
        let mut p = ProbeHeader::new(id(4), SimTime::from_micros(100), 1, false);
        for h in [10, 20, 30] {
            p.push_hop(id(h)).unwrap();
        }
        assert_eq!(p.encode().len(), 18);
        p.util = Some(0.5);
        assert_eq!(p.encode().len(), 19);
    }

    #[test]
    fn repeated_hop_is_rejected() {
        let mut p = ProbeHeader::new(id(1), SimTime::ZERO, 1, false);
        p.push_hop(id(2)).unwrap();
        assert_eq!(p.push_hop(id(2)), Err(CodecError::HopLoop(2)));
        assert_eq!(p.push_hop(id(1)), Err(CodecError::HopLoop(1)));
    }

    #[test]
    fn bad_lengths() {
        assert_eq!(ProbeHeader::decode(&[0; 8], 1, false), Err(CodecError::ProbeLength(8)));
        assert_eq!(ProbeHeader::decode(&[0; 10], 1, false), Err(CodecError::ProbeLength(10)));
        assert!(ProbeHeader::decode(&[0; 10], 1, true).is_ok());
        assert_eq!(GapHeader::decode(&[0; 8]), Err(CodecError::GapLength(8)));
        assert_eq!(SwitchId::new(1 << 24), Err(CodecError::SwitchIdRange(1 << 24)));
    }

    #[test]
    fn gap_field_limits() {
        assert_eq!(GapHeader::new(id(1), SimTime::ZERO, 1), Err(CodecError::ZeroGap));
        assert_eq!(
            GapHeader::new(id(1), SimTime::from_micros(65_536), 1),
            Err(CodecError::GapRange(65_536))
        );
        let h = GapHeader::new(id(1), SimTime::from_nanos(100_001), 1).unwrap();
        assert_eq!(h.gap, SimTime::from_micros(101));
    }

    #[test]
    fn golden_vectors() {
        let hex = |s: &str| -> Vec<u8> {
            (0..s.len())
                .step_by(2)
                .map(|i| u8::from_str_radix(&s[i..i + 2], 16).unwrap())
                .collect()
        };
        let fixtures = include_str!("../../tests/fixtures/headers.hex");
        for line in fixtures.lines().filter(|l| !l.starts_with('#') && !l.is_empty()) {
            let mut parts = line.split_whitespace();
            let kind = parts.next().unwrap();
            let bytes = hex(parts.next().unwrap());
            match kind {
                "probe" => {
                    let p = ProbeHeader::decode(&bytes, 7, false).unwrap();
                    assert_eq!(p.encode(), bytes);
                    assert_eq!(p.origin_tor, id(0x000010));
                    assert_eq!(p.timestamp, SimTime::from_nanos(0x0000_0001_0203));
                    assert_eq!(p.hops, vec![id(4), id(0), id(6)]);
                }
                "probe_util" => {
                    let p = ProbeHeader::decode(&bytes, 7, true).unwrap();
                    assert_eq!(p.encode(), bytes);
                    assert_eq!(p.util, Some(1.0));
                }
                "gap" => {
                    let g = GapHeader::decode(&bytes).unwrap();
                    assert_eq!(g.encode().to_vec(), bytes);
                    assert_eq!(g.target_tor, id(0x000013));
                    assert_eq!(g.gap, SimTime::from_micros(200));
                    assert_eq!(g.probe_seq, 42);
                }
                other => panic!("unknown fixture kind {other}"),
            }
        }
    }

    proptest! {
        #[test]
        fn probe_round_trip(
            origin in 0u32..(1 << 24),
            ts in 0u64..(1 << 48),
            seq: u32,
            hops in proptest::collection::btree_set(0u32..(1 << 24), 0..6),
            util in proptest::option::of(0u8..=255),
        ) {
            prop_assume!(!hops.contains(&origin));
            let p = ProbeHeader {
                origin_tor: id(origin),
                timestamp: SimTime::from_nanos(ts),
                seq,
                hops: hops.into_iter().map(id).collect(),
                util: util.map(|u| f64::from(u) / 255.0),
            };
            let bytes = p.encode();
            prop_assert_eq!(bytes.len(), p.encoded_len());
            let back = ProbeHeader::decode(&bytes, seq, p.util.is_some()).unwrap();
            prop_assert_eq!(back, p);
        }

        #[test]
        fn gap_round_trip(target in 0u32..(1 << 24), gap_us in 1u64..=65_535, seq: u32) {
            let g = GapHeader::new(id(target), SimTime::from_micros(gap_us), seq).unwrap();
            prop_assert_eq!(GapHeader::decode(&g.encode()).unwrap(), g);
        }
    }
}
