//! Simplified Reno-style TCP endpoints.
//!
//! The sender and receiver are plain state machines: they return the segments
//! to put on the wire and leave timers and delivery to the simulator. No
//! handshake, SACK, window scaling or delayed ACKs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataplane::codec::GapHeader;
use crate::time::SimTime;
use crate::topology::NodeId;

pub const TCP_PROTOCOL: u8 = 6;
/// Smallest frame on the wire, headers included.
pub const MIN_WIRE_BYTES: u32 = 64;
pub const MICE_LIMIT_BYTES: u64 = 100_000;
pub const ELEPHANT_LIMIT_BYTES: u64 = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FlowId {
    pub src_host: NodeId,
    pub dst_host: NodeId,
    pub src_port: u16,
    pub dst_port: u16,
    pub protocol: u8,
}

impl FlowId {
    /// The 5-tuple of the reverse (ACK) direction.
    pub fn reversed(&self) -> FlowId {
        FlowId {
            src_host: self.dst_host,
            dst_host: self.src_host,
            src_port: self.dst_port,
            dst_port: self.src_port,
            protocol: self.protocol,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeClass {
    Mice,
    Medium,
    Elephant,
}

impl SizeClass {
    pub fn of(bytes: u64) -> SizeClass {
        if bytes < MICE_LIMIT_BYTES {
            SizeClass::Mice
        } else if bytes > ELEPHANT_LIMIT_BYTES {
            SizeClass::Elephant
        } else {
            SizeClass::Medium
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TcpConfig {
    pub mss: u32,
    /// IP + TCP header bytes added to every segment.
    pub header_bytes: u32,
    pub init_cwnd_segments: u32,
    pub min_rto: SimTime,
    pub max_rto: SimTime,
    /// Receiver-advertised window, bytes. Without window scaling it cannot exceed 65535.
    pub receive_window: u64,
}

impl Default for TcpConfig {
    fn default() -> Self {
        Self {
            mss: 1460,
            header_bytes: 40,
            init_cwnd_segments: 10,
            min_rto: SimTime::from_millis(1),
            max_rto: SimTime::from_millis(64),
            receive_window: 65_535,
        }
    }
}

impl TcpConfig {
    pub fn mtu(&self) -> u32 {
        self.mss + self.header_bytes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataPacket {
    pub flow: FlowId,
    /// Simulator-internal connection index.
    pub conn: u32,
    pub seq: u64,
    pub length: u32,
    pub is_ack: bool,
    pub ack_seq: u64,
    pub piggyback: Option<GapHeader>,
    pub sent_time: SimTime,
    /// Data: this is a retransmission. ACK: it echoes one.
    pub retransmit: bool,
    /// ACK only: `sent_time` of the data segment that triggered it.
    pub echo_time: SimTime,
}

impl DataPacket {
    pub fn wire_bytes(&self, cfg: &TcpConfig) -> u32 {
        let gap = if self.piggyback.is_some() {
            crate::dataplane::codec::GAP_HEADER_BYTES as u32
        } else {
            0
        };
        (self.length + cfg.header_bytes + gap).max(MIN_WIRE_BYTES)
    }
}

/// A segment the sender wants transmitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub seq: u64,
    pub len: u32,
    pub retransmit: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TcpState {
    pub cwnd: u64,
    pub ssthresh: u64,
    pub next_seq: u64,
    pub highest_acked: u64,
    pub dup_ack_count: u32,
    pub rto: SimTime,
    pub srtt: Option<SimTime>,
    pub rttvar: SimTime,
    pub bytes_remaining: u64,
}

#[derive(Debug, Clone)]
pub struct TcpSender {
    cfg: TcpConfig,
    size: u64,
    /// Bytes the application has handed over so far.
    app_limit: u64,
    state: TcpState,
    high_water: u64,
    recover: Option<u64>,
    pub retransmissions: u64,
    rto_deadline: Option<SimTime>,
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct AckOutcome {
    pub segments: Vec<Segment>,
    pub completed: bool,
    pub fast_retransmit: bool,
}

impl TcpSender {
    pub fn new(size: u64, cfg: TcpConfig) -> Self {
        assert!(size > 0, "empty flow");
        let mss = u64::from(cfg.mss);
        let state = TcpState {
            cwnd: mss * u64::from(cfg.init_cwnd_segments.max(1)),
            ssthresh: u64::MAX / 2,
            next_seq: 0,
            highest_acked: 0,
            dup_ack_count: 0,
            rto: cfg.min_rto,
            srtt: None,
            rttvar: SimTime::ZERO,
            bytes_remaining: size,
        };
        Self {
            cfg,
            size,
            app_limit: size,
            state,
            high_water: 0,
            recover: None,
            retransmissions: 0,
            rto_deadline: None,
        }
    }

    /// A sender whose application releases bytes over time via [`release`](Self::release).
    pub fn app_limited(size: u64, cfg: TcpConfig) -> Self {
        let mut s = Self::new(size, cfg);
        s.app_limit = 0;
        s
    }

    pub fn release(&mut self, bytes: u64) {
        self.app_limit = (self.app_limit + bytes).min(self.size);
    }

    pub fn state(&self) -> &TcpState {
        &self.state
    }

    pub fn size(&self) -> u64 {
        self.size
    }

    pub fn is_complete(&self) -> bool {
        self.state.highest_acked >= self.size
    }

    pub fn rto_deadline(&self) -> Option<SimTime> {
        self.rto_deadline
    }

    fn mss(&self) -> u64 {
        u64::from(self.cfg.mss)
    }

    fn clamp_cwnd(&mut self) {
        let mss = self.mss();
        self.state.cwnd = self.state.cwnd.min(self.cfg.receive_window).max(mss);
    }

    fn arm_timer(&mut self, now: SimTime) {
        self.rto_deadline = if self.state.highest_acked < self.state.next_seq {
            Some(now + self.state.rto)
        } else {
            None
        };
    }

    fn segment_at(&self, seq: u64) -> Segment {
        Segment {
            seq,
            len: (self.size - seq).min(self.mss()) as u32,
            retransmit: seq < self.high_water,
        }
    }

    /// Segments the window currently allows.
    pub fn poll_send(&mut self, now: SimTime) -> Vec<Segment> {
        let mut out = Vec::new();
        loop {
            let st = &self.state;
            if st.next_seq >= self.app_limit {
                break;
            }
            let in_flight = st.next_seq - st.highest_acked;
            if in_flight > 0 && in_flight + 1 > st.cwnd {
                break;
            }
            let mut seg = self.segment_at(st.next_seq);
            seg.len = seg.len.min((self.app_limit - st.next_seq) as u32);
            if in_flight > 0 && in_flight + u64::from(seg.len) > st.cwnd {
                break;
            }
            if seg.retransmit {
                self.retransmissions += 1;
            }
            self.state.next_seq += u64::from(seg.len);
            self.high_water = self.high_water.max(self.state.next_seq);
            out.push(seg);
        }
        if !out.is_empty() && self.rto_deadline.is_none() {
            self.arm_timer(now);
        }
        out
    }

    fn sample_rtt(&mut self, rtt: SimTime) {
        // RFC 6298
        match self.state.srtt {
            None => {
                self.state.srtt = Some(rtt);
                self.state.rttvar = SimTime::from_nanos(rtt.as_nanos() / 2);
            }
            Some(srtt) => {
                let diff = srtt.as_nanos().abs_diff(rtt.as_nanos());
                self.state.rttvar = SimTime::from_nanos((3 * self.state.rttvar.as_nanos() + diff) / 4);
                self.state.srtt = Some(SimTime::from_nanos((7 * srtt.as_nanos() + rtt.as_nanos()) / 8));
            }
        }
        let srtt = self.state.srtt.expect("set");
        let rto = srtt + SimTime::from_nanos(4 * self.state.rttvar.as_nanos());
        self.state.rto = rto.max(self.cfg.min_rto).min(self.cfg.max_rto);
    }

    pub fn on_ack(&mut self, ack_seq: u64, echo_time: SimTime, echo_retransmit: bool, now: SimTime) -> AckOutcome {
        let mut out = AckOutcome::default();
        let mss = self.mss();
        if ack_seq > self.state.highest_acked {
            let acked = ack_seq - self.state.highest_acked;
            self.state.highest_acked = ack_seq;
            // after an RTO rewind, a cumulative ACK may cover bytes not yet resent
            self.state.next_seq = self.state.next_seq.max(ack_seq);
            self.state.bytes_remaining = self.size.saturating_sub(ack_seq);
            self.state.dup_ack_count = 0;
            if !echo_retransmit {
                self.sample_rtt(now.saturating_sub(echo_time));
            }
            match self.recover {
                Some(recover) if ack_seq < recover => {
                    // partial ACK: resend the next hole, deflate
                    let seg = self.segment_at(ack_seq);
                    self.retransmissions += 1;
                    out.segments.push(Segment {
                        retransmit: true,
                        ..seg
                    });
                    self.state.cwnd = self.state.cwnd.saturating_sub(acked) + mss;
                }
                Some(_) => {
                    self.recover = None;
                    self.state.cwnd = self.state.ssthresh;
                }
                None if self.state.cwnd < self.state.ssthresh => {
                    self.state.cwnd += mss;
                }
                None => {
                    self.state.cwnd += (mss * mss / self.state.cwnd).max(1);
                }
            }
            self.clamp_cwnd();
            self.rto_deadline = None;
            self.arm_timer(now);
        } else if ack_seq == self.state.highest_acked && self.state.next_seq > ack_seq {
            self.state.dup_ack_count += 1;
            if self.recover.is_some() {
                self.state.cwnd += mss;
                self.clamp_cwnd();
            } else if self.state.dup_ack_count == 3 {
                self.state.ssthresh = (self.state.cwnd / 2).max(2 * mss);
                self.state.cwnd = self.state.ssthresh + 3 * mss;
                self.clamp_cwnd();
                self.recover = Some(self.state.next_seq);
                let seg = self.segment_at(ack_seq);
                self.retransmissions += 1;
                out.segments.push(Segment {
                    retransmit: true,
                    ..seg
                });
                out.fast_retransmit = true;
                self.rto_deadline = None;
                self.arm_timer(now);
            }
        }
        out.completed = self.is_complete();
        if out.completed {
            self.rto_deadline = None;
        } else {
            out.segments.extend(self.poll_send(now));
        }
        out
    }

    /// Retransmission timeout. Returns segments to send, or nothing if the
    /// deadline moved or the flow finished.
    pub fn on_rto(&mut self, now: SimTime) -> Vec<Segment> {
        match self.rto_deadline {
            Some(d) if d <= now && !self.is_complete() => {}
            _ => return Vec::new(),
        }
        let mss = self.mss();
        self.state.ssthresh = (self.state.cwnd / 2).max(2 * mss);
        self.state.cwnd = mss;
        self.state.dup_ack_count = 0;
        self.recover = None;
        self.state.next_seq = self.state.highest_acked;
        self.state.rto = (self.state.rto + self.state.rto).min(self.cfg.max_rto);
        self.rto_deadline = None;
        self.poll_send(now)
    }
}

/// Receiving endpoint: cumulative ACKs, out-of-order buffering, reorder counting.
#[derive(Debug, Clone, Default)]
pub struct TcpReceiver {
    expected: u64,
    out_of_order: BTreeMap<u64, u64>,
    highest_seen: u64,
    pub reorder_events: u64,
    pub duplicate_bytes: u64,
}

impl TcpReceiver {
    /// Bytes delivered in order to the application.
    pub fn delivered(&self) -> u64 {
        self.expected
    }

    /// Returns the cumulative ACK to send.
    ///
    /// A reorder event is a first-transmission segment that arrives after a
    /// segment with a higher sequence number; holes left by losses and later
    /// filled by retransmissions do not count.
    pub fn on_data(&mut self, seq: u64, len: u32, retransmit: bool) -> u64 {
        let end = seq + u64::from(len);
        if !retransmit && seq < self.highest_seen {
            self.reorder_events += 1;
        }
        self.highest_seen = self.highest_seen.max(end);
        if end <= self.expected {
            self.duplicate_bytes += u64::from(len);
        } else if seq <= self.expected {
            self.expected = end;
            while let Some((&s, &e)) = self.out_of_order.first_key_value() {
                if s > self.expected {
                    break;
                }
                self.out_of_order.pop_first();
                self.expected = self.expected.max(e);
            }
        } else {
            let slot = self.out_of_order.entry(seq).or_insert(end);
            *slot = (*slot).max(end);
        }
        self.expected
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MSS: u64 = 1460;

    fn t(us: u64) -> SimTime {
        SimTime::from_micros(us)
    }

    /// Lossless in-order loopback: every segment delivered and ACKed one RTT later.
    fn run_lossless(size: u64) -> (TcpSender, TcpReceiver) {
        let mut tx = TcpSender::new(size, TcpConfig::default());
        let mut rx = TcpReceiver::default();
        let mut now = t(0);
        let mut inflight: Vec<Segment> = tx.poll_send(now);
        while !tx.is_complete() {
            now += t(10);
            let batch = std::mem::take(&mut inflight);
            for seg in batch {
                let ack = rx.on_data(seg.seq, seg.len, seg.retransmit);
                inflight.extend(tx.on_ack(ack, now - t(10), false, now).segments);
            }
        }
        (tx, rx)
    }

    #[test]
    fn one_segment_flow() {
        let mut tx = TcpSender::new(MSS, TcpConfig::default());
        let segs = tx.poll_send(t(0));
        assert_eq!(segs, vec![Segment { seq: 0, len: 1460, retransmit: false }]);
        let out = tx.on_ack(MSS, t(0), false, t(20));
        assert!(out.completed && out.segments.is_empty());
        assert_eq!(tx.rto_deadline(), None);
    }

    #[test]
    fn lossless_transfer_conserves_bytes() {
        let (tx, rx) = run_lossless(1_000_003);
        assert_eq!(rx.delivered(), 1_000_003);
        assert_eq!(tx.retransmissions, 0);
        assert_eq!(rx.reorder_events, 0);
        assert_eq!(rx.duplicate_bytes, 0);
    }

    #[test]
    fn initial_window_and_slow_start() {
        let mut tx = TcpSender::new(100 * MSS, TcpConfig::default());
        assert_eq!(tx.poll_send(t(0)).len(), 10);
        let out = tx.on_ack(MSS, t(0), false, t(20));
        // cwnd 11 MSS, one acked: two new segments
        assert_eq!(tx.state().cwnd, 11 * MSS);
        assert_eq!(out.segments.len(), 2);
    }

    #[test]
    fn congestion_avoidance_growth() {
        let mut tx = TcpSender::new(1000 * MSS, TcpConfig::default());
        tx.poll_send(t(0));
        tx.state.ssthresh = 10 * MSS;
        tx.on_ack(MSS, t(0), false, t(20));
        assert_eq!(tx.state().cwnd, 10 * MSS + MSS / 10);
    }

    #[test]
    fn three_dup_acks_fast_retransmit() {
        let mut tx = TcpSender::new(100 * MSS, TcpConfig::default());
        tx.poll_send(t(0));
        let cwnd = tx.state().cwnd;
        tx.on_ack(MSS, t(0), false, t(20));
        let cwnd = cwnd + MSS;
        assert!(!tx.on_ack(MSS, t(0), false, t(21)).fast_retransmit);
        assert!(!tx.on_ack(MSS, t(0), false, t(22)).fast_retransmit);
        let out = tx.on_ack(MSS, t(0), false, t(23));
        assert!(out.fast_retransmit);
        assert_eq!(out.segments[0], Segment { seq: MSS, len: 1460, retransmit: true });
        assert_eq!(tx.state().ssthresh, cwnd / 2);
        assert_eq!(tx.retransmissions, 1);
    }

    #[test]
    fn rto_collapses_window() {
        let mut tx = TcpSender::new(100 * MSS, TcpConfig::default());
        tx.poll_send(t(0));
        let deadline = tx.rto_deadline().unwrap();
        assert_eq!(deadline, SimTime::from_millis(1));
        assert!(tx.on_rto(t(500)).is_empty());
        let segs = tx.on_rto(deadline);
        assert_eq!(segs, vec![Segment { seq: 0, len: 1460, retransmit: true }]);
        assert_eq!(tx.state().cwnd, MSS);
        assert_eq!(tx.state().rto, SimTime::from_millis(2));
    }

    #[test]
    fn receiver_counts_reordering_not_loss_recovery() {
        let mut rx = TcpReceiver::default();
        assert_eq!(rx.on_data(0, 100, false), 100);
        // 100..200 lost; 200..300 arrives
        assert_eq!(rx.on_data(200, 100, false), 100);
        // retransmission fills the hole: not a reorder event
        assert_eq!(rx.on_data(100, 100, true), 300);
        assert_eq!(rx.reorder_events, 0);
        // a first transmission overtaken by a later one is
        assert_eq!(rx.on_data(400, 100, false), 300);
        assert_eq!(rx.on_data(300, 100, false), 500);
        assert_eq!(rx.reorder_events, 1);
    }

    #[test]
    fn swapped_pair_versus_deep_swap() {
        // swap distance 1: one reorder event, two duplicate ACKs at most, no fast retransmit
        let deliver = |order: &[u64]| {
            let mut tx = TcpSender::new(20 * MSS, TcpConfig::default());
            let mut rx = TcpReceiver::default();
            let segs = tx.poll_send(t(0));
            let mut fast = false;
            for &i in order {
                let s = segs[i as usize];
                let ack = rx.on_data(s.seq, s.len, s.retransmit);
                fast |= tx.on_ack(ack, t(0), false, t(10)).fast_retransmit;
            }
            (rx.reorder_events, fast)
        };
        assert_eq!(deliver(&[0, 2, 1, 3, 4, 5]), (1, false));
        // segment 1 overtaken by three later segments: spurious fast retransmit
        assert_eq!(deliver(&[0, 2, 3, 4, 1, 5]), (1, true));
    }

    #[test]
    fn app_limited_sender_waits_for_data() {
        let mut tx = TcpSender::app_limited(10 * MSS, TcpConfig::default());
        assert!(tx.poll_send(t(0)).is_empty());
        tx.release(2 * MSS);
        assert_eq!(tx.poll_send(t(0)).len(), 2);
        tx.release(MSS / 2);
        let segs = tx.poll_send(t(1));
        assert_eq!(segs, vec![Segment { seq: 2 * MSS, len: 730, retransmit: false }]);
    }

    #[test]
    fn receive_window_caps_cwnd() {
        let cfg = TcpConfig {
            receive_window: 4 * MSS,
            init_cwnd_segments: 10,
            ..Default::default()
        };
        let mut tx = TcpSender::new(100 * MSS, cfg);
        tx.poll_send(t(0));
        tx.on_ack(MSS, t(0), false, t(1));
        assert_eq!(tx.state().cwnd, 4 * MSS);
    }

    #[test]
    fn size_classes() {
        assert_eq!(SizeClass::of(99_999), SizeClass::Mice);
        assert_eq!(SizeClass::of(100_000), SizeClass::Medium);
        assert_eq!(SizeClass::of(10_000_000), SizeClass::Medium);
        assert_eq!(SizeClass::of(10_000_001), SizeClass::Elephant);
    }
}
