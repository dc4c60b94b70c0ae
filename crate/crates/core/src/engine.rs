//! Deterministic discrete-event scheduler.
//!
//! Events are ordered by `(time, sequence)`; the sequence number is assigned at
//! scheduling time, so events scheduled for the same instant fire in FIFO order.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use crate::time::SimTime;

/// Handle returned by [`Scheduler::schedule`], usable for cancellation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EventHandle(u64);

#[derive(Debug, Clone)]
pub struct Event<E> {
    pub time: SimTime,
    pub sequence: u64,
    pub payload: E,
}

struct Queued<E>(Event<E>);

impl<E> PartialEq for Queued<E> {
    fn eq(&self, other: &Self) -> bool {
        self.0.time == other.0.time && self.0.sequence == other.0.sequence
    }
}

impl<E> Eq for Queued<E> {}

impl<E> PartialOrd for Queued<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Queued<E> {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .0
            .time
            .cmp(&self.0.time)
            .then_with(|| other.0.sequence.cmp(&self.0.sequence))
    }
}

pub struct Scheduler<E> {
    now: SimTime,
    next_sequence: u64,
    heap: BinaryHeap<Queued<E>>,
    cancelled: HashSet<u64>,
    processed: u64,
    #[cfg(debug_assertions)]
    last_fired: (SimTime, u64),
}

impl<E> Default for Scheduler<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> Scheduler<E> {
    pub fn new() -> Self {
        Self {
            now: SimTime::ZERO,
            next_sequence: 0,
            heap: BinaryHeap::new(),
            cancelled: HashSet::new(),
            processed: 0,
            #[cfg(debug_assertions)]
            last_fired: (SimTime::ZERO, 0),
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Total events handled over the scheduler's lifetime.
    pub fn processed(&self) -> u64 {
        self.processed
    }

    pub fn pending(&self) -> usize {
        self.heap.len() - self.cancelled.len()
    }

    /// Enqueue `payload` at absolute time `time`.
    ///
    /// Panics if `time` lies in the past: that is a logic error in the caller.
    pub fn schedule(&mut self, time: SimTime, payload: E) -> EventHandle {
        assert!(
            time >= self.now,
            "event scheduled in the past: {time} < now {}",
            self.now
        );
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        self.heap.push(Queued(Event {
            time,
            sequence,
            payload,
        }));
        EventHandle(sequence)
    }

    pub fn schedule_in(&mut self, delay: SimTime, payload: E) -> EventHandle {
        self.schedule(self.now + delay, payload)
    }

    /// Cancelling an event that already fired is a no-op.
    pub fn cancel(&mut self, handle: EventHandle) {
        if handle.0 < self.next_sequence && self.heap.iter().any(|q| q.0.sequence == handle.0) {
            self.cancelled.insert(handle.0);
        }
    }

    fn pop_due(&mut self, t_end: SimTime) -> Option<Event<E>> {
        loop {
            match self.heap.peek() {
                Some(q) if q.0.time <= t_end => {}
                _ => return None,
            }
            let Queued(ev) = self.heap.pop().expect("peeked");
            if self.cancelled.remove(&ev.sequence) {
                continue;
            }
            return Some(ev);
        }
    }

    /// Process every event with `time <= t_end`, in `(time, sequence)` order, then
    /// advance the clock to `t_end`. Returns the number of events handled.
    pub fn run_until<F>(&mut self, t_end: SimTime, mut handler: F) -> u64
    where
        F: FnMut(&mut Self, Event<E>),
    {
        assert!(t_end >= self.now, "run_until into the past");
        let mut count = 0;
        while let Some(ev) = self.pop_due(t_end) {
            #[cfg(debug_assertions)]
            {
                debug_assert!(
                    (ev.time, ev.sequence) >= self.last_fired,
                    "event out of order"
                );
                self.last_fired = (ev.time, ev.sequence);
            }
            self.now = ev.time;
            count += 1;
            self.processed += 1;
            handler(self, ev);
        }
        self.now = t_end;
        count
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_queue_advances_clock() {
        let mut s: Scheduler<()> = Scheduler::new();
        assert_eq!(s.run_until(SimTime::from_millis(1), |_, _| {}), 0);
        assert_eq!(s.now(), SimTime::from_millis(1));
    }

    #[test]
    fn event_at_now_fires_before_later_ones() {
        let mut s = Scheduler::new();
        s.schedule(SimTime::from_micros(5), "later");
        s.schedule(SimTime::ZERO, "now");
        let mut order = Vec::new();
        s.run_until(SimTime::from_micros(10), |_, ev| order.push(ev.payload));
        assert_eq!(order, ["now", "later"]);
    }

    #[test]
    fn ties_fire_in_scheduling_order() {
        let mut s = Scheduler::new();
        for i in 0..100 {
            s.schedule(SimTime::from_micros(3), i);
        }
        let mut order = Vec::new();
        s.run_until(SimTime::from_micros(3), |_, ev| order.push(ev.payload));
        assert_eq!(order, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn cancelled_event_never_fires() {
        let mut s = Scheduler::new();
        let h = s.schedule(SimTime::from_micros(1), 1);
        s.schedule(SimTime::from_micros(2), 2);
        s.cancel(h);
        let mut fired = Vec::new();
        let n = s.run_until(SimTime::from_micros(10), |_, ev| fired.push(ev.payload));
        assert_eq!(fired, [2]);
        assert_eq!(n, 1);
    }

    #[test]
    fn counts_independent_events() {
        let mut s = Scheduler::new();
        for i in 0..37u64 {
            s.schedule(SimTime::from_nanos(i * 13 % 7), ());
        }
        assert_eq!(s.run_until(SimTime::from_micros(1), |_, _| {}), 37);
    }

    #[test]
    fn periodic_timer_fires_ten_times_in_a_millisecond() {
        // first firing one interval after start; the 10th lands exactly on t_end
        let interval = SimTime::from_micros(100);
        let mut s = Scheduler::new();
        s.schedule(interval, ());
        let mut firings = 0;
        s.run_until(SimTime::from_millis(1), |s, _| {
            firings += 1;
            s.schedule_in(interval, ());
        });
        assert_eq!(firings, 10);
    }

    #[test]
    #[should_panic(expected = "in the past")]
    fn scheduling_in_the_past_panics() {
        let mut s = Scheduler::new();
        s.run_until(SimTime::from_micros(10), |_, _: Event<()>| {});
        s.schedule(SimTime::from_micros(5), ());
    }

    #[test]
    fn events_beyond_horizon_stay_queued() {
        let mut s = Scheduler::new();
        s.schedule(SimTime::from_micros(20), ());
        assert_eq!(s.run_until(SimTime::from_micros(10), |_, _| {}), 0);
        assert_eq!(s.pending(), 1);
        assert_eq!(s.run_until(SimTime::from_micros(20), |_, _| {}), 1);
    }
}
