//! Deterministic discrete-event scheduler with seeded pseudo-randomness.
//!
//! The engine is the time base for the whole simulator: an integer-microsecond
//! clock, an event queue ordered by `(time_us, sequence)`, and counter-based
//! random streams that can be split per node without perturbing each other.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashSet};

use thiserror::Error;

/// Simulation clock in integer microseconds since simulation start.
///
/// Monotonically non-decreasing; never advanced past the next pending event.
#[derive(Debug, Clone, Copy, Default)]
pub struct SimClock {
    now_us: u64,
}

impl SimClock {
    pub fn now_us(&self) -> u64 {
        self.now_us
    }

    fn advance_to(&mut self, t: u64) {
        debug_assert!(t >= self.now_us, "clock moved backwards");
        self.now_us = t;
    }
}

/// Handle returned by [`Engine::schedule`]; allows cancellation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EventHandle(u64);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("cannot schedule event at {requested_us} us: clock already at {now_us} us")]
    TimeInPast { requested_us: u64, now_us: u64 },
}

#[derive(Debug)]
struct Entry<E> {
    time_us: u64,
    seq: u64,
    event: E,
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        self.time_us == other.time_us && self.seq == other.seq
    }
}
impl<E> Eq for Entry<E> {}
impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl<E> Ord for Entry<E> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.time_us, self.seq).cmp(&(other.time_us, other.seq))
    }
}

/// Pending events, popped in `(time_us, sequence)` order.
///
/// The sequence number breaks ties deterministically in insertion order.
#[derive(Debug, Default)]
pub struct EventQueue<E> {
    heap: BinaryHeap<Reverse<Entry<E>>>,
    next_seq: u64,
    /// Sequence numbers scheduled but neither fired nor cancelled.
    live: HashSet<u64>,
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
            next_seq: 0,
            live: HashSet::new(),
        }
    }

    fn push(&mut self, time_us: u64, event: E) -> EventHandle {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.live.insert(seq);
        self.heap.push(Reverse(Entry {
            time_us,
            seq,
            event,
        }));
        EventHandle(seq)
    }

    fn cancel(&mut self, seq: u64) -> bool {
        // Cancelled entries stay in the heap and get skimmed off lazily.
        self.live.remove(&seq)
    }

    fn peek_time(&mut self) -> Option<u64> {
        while let Some(Reverse(entry)) = self.heap.peek() {
            if !self.live.contains(&entry.seq) {
                self.heap.pop();
                continue;
            }
            return Some(entry.time_us);
        }
        None
    }

    fn pop(&mut self) -> Option<(u64, E)> {
        // Cancelled entries were already skimmed off by peek_time.
        self.heap.pop().map(|Reverse(e)| {
            self.live.remove(&e.seq);
            (e.time_us, e.event)
        })
    }

    pub fn len(&self) -> usize {
        self.live.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Discrete-event engine: owns the clock and the queue.
///
/// Event payloads are opaque to the engine; the caller supplies a handler to
/// [`Engine::run_until`] and drives all domain logic from it.
#[derive(Debug)]
pub struct Engine<E> {
    clock: SimClock,
    queue: EventQueue<E>,
    processed: u64,
}

impl<E> Default for Engine<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> Engine<E> {
    pub fn new() -> Self {
        Engine {
            clock: SimClock::default(),
            queue: EventQueue::new(),
            processed: 0,
        }
    }

    pub fn now_us(&self) -> u64 {
        self.clock.now_us()
    }

    /// Number of events processed so far.
    pub fn processed(&self) -> u64 {
        self.processed
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    /// Enqueue `event` at absolute time `time_us`.
    ///
    /// Scheduling in the past is rejected: it signals a logic bug in the
    /// caller, not a recoverable condition.
    pub fn schedule(&mut self, time_us: u64, event: E) -> Result<EventHandle, ScheduleError> {
        if time_us < self.clock.now_us() {
            return Err(ScheduleError::TimeInPast {
                requested_us: time_us,
                now_us: self.clock.now_us(),
            });
        }
        Ok(self.queue.push(time_us, event))
    }

    /// Cancel a previously scheduled event. Returns false if it already fired
    /// or was cancelled before.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        self.queue.cancel(handle.0)
    }

    /// Process every event with `time <= end_us` in order, then advance the
    /// clock to `end_us`. The handler may schedule further events.
    pub fn run_until<F>(&mut self, end_us: u64, mut handler: F) -> u64
    where
        F: FnMut(&mut Engine<E>, u64, E),
    {
        assert!(
            end_us >= self.clock.now_us(),
            "run_until({end_us}) with clock at {}",
            self.clock.now_us()
        );
        loop {
            match self.queue.peek_time() {
                Some(t) if t <= end_us => {
                    let (t, event) = self.queue.pop().expect("peeked entry vanished");
                    self.clock.advance_to(t);
                    self.processed += 1;
                    handler(self, t, event);
                }
                _ => break,
            }
        }
        self.clock.advance_to(end_us);
        self.clock.now_us()
    }
}

/// Golden-ratio increment used by the SplitMix64 mixer.
const PHI: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn hash_label(label: &str) -> u64 {
    // FNV-1a, stable across platforms.
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01B3);
    }
    h
}

/// Counter-based pseudo-random stream (SplitMix64).
///
/// Draw `n` is a pure function of `(seed, label, index, n)`, so streams derived
/// for different nodes are independent by construction: adding a node never
/// perturbs another node's draw sequence. The generator is fixed and
/// documented; the same seed yields the identical sequence on every platform.
#[derive(Debug, Clone)]
pub struct RngStream {
    state: u64,
}

impl RngStream {
    /// Derive the substream identified by `(label, index)` from a 64-bit seed.
    pub fn derive(seed: u64, label: &str, index: u64) -> Self {
        let key = mix64(seed ^ hash_label(label)).wrapping_add(mix64(index.wrapping_mul(PHI)));
        RngStream { state: key }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(PHI);
        mix64(self.state)
    }

    /// Uniform integer in `[lo, hi]` (inclusive). Rejects `lo > hi`.
    pub fn uniform_int(&mut self, lo: u64, hi: u64) -> u64 {
        assert!(lo <= hi, "uniform_int: lo {lo} > hi {hi}");
        let span = hi - lo + 1; // hi == u64::MAX && lo == 0 never occurs here
        let x = self.next_u64();
        lo + ((u128::from(x) * u128::from(span)) >> 64) as u64
    }

    /// Bernoulli draw with success probability `p` in `[0, 1]`.
    pub fn bernoulli(&mut self, p: f64) -> bool {
        debug_assert!((0.0..=1.0).contains(&p));
        let threshold = (p * 18_446_744_073_709_551_616.0) as u128;
        u128::from(self.next_u64()) < threshold
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Standard normal draw (Box-Muller).
    pub fn normal(&mut self) -> f64 {
        let u1 = loop {
            let u = self.uniform_f64();
            if u > 0.0 {
                break u;
            }
        };
        let u2 = self.uniform_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_at_now_pops_first() {
        let mut eng: Engine<&str> = Engine::new();
        eng.schedule(0, "start").unwrap();
        let mut fired = Vec::new();
        eng.run_until(10, |_, t, e| fired.push((t, e)));
        assert_eq!(fired, vec![(0, "start")]);
    }

    #[test]
    fn tie_break_is_insertion_order() {
        let mut eng: Engine<&str> = Engine::new();
        eng.schedule(100, "A").unwrap();
        eng.schedule(100, "B").unwrap();
        let mut fired = Vec::new();
        eng.run_until(100, |_, _, e| fired.push(e));
        assert_eq!(fired, vec!["A", "B"]);
    }

    #[test]
    fn schedule_in_past_is_rejected() {
        let mut eng: Engine<()> = Engine::new();
        eng.schedule(60, ()).unwrap();
        eng.run_until(60, |_, _, _| {});
        assert_eq!(
            eng.schedule(50, ()),
            Err(ScheduleError::TimeInPast {
                requested_us: 50,
                now_us: 60
            })
        );
    }

    #[test]
    fn run_until_empty_queue_advances_clock() {
        let mut eng: Engine<()> = Engine::new();
        assert_eq!(eng.run_until(1000, |_, _, _| {}), 1000);
        assert_eq!(eng.now_us(), 1000);
    }

    #[test]
    fn run_until_now_is_noop() {
        let mut eng: Engine<()> = Engine::new();
        eng.run_until(500, |_, _, _| {});
        assert_eq!(eng.run_until(500, |_, _, _| {}), 500);
    }

    #[test]
    fn self_rescheduling_event_fires_on_schedule() {
        let mut eng: Engine<&str> = Engine::new();
        eng.schedule(500, "tick").unwrap();
        let mut fired = Vec::new();
        eng.run_until(2000, |eng, t, e| {
            fired.push(t);
            eng.schedule(t + 500, e).unwrap();
        });
        assert_eq!(fired, vec![500, 1000, 1500, 2000]);
        assert_eq!(eng.now_us(), 2000);
    }

    #[test]
    fn cancelled_events_do_not_fire() {
        let mut eng: Engine<&str> = Engine::new();
        let h = eng.schedule(10, "a").unwrap();
        eng.schedule(20, "b").unwrap();
        assert_eq!(eng.pending(), 2);
        assert!(eng.cancel(h));
        assert!(!eng.cancel(h));
        assert_eq!(eng.pending(), 1);
        let mut fired = Vec::new();
        eng.run_until(30, |_, _, e| fired.push(e));
        assert_eq!(fired, vec!["b"]);
    }

    #[test]
    fn cancelling_a_fired_event_is_a_noop() {
        let mut eng: Engine<&str> = Engine::new();
        let h = eng.schedule(10, "a").unwrap();
        eng.run_until(10, |_, _, _| {});
        assert!(!eng.cancel(h));
        assert_eq!(eng.pending(), 0);
    }

    #[test]
    fn uniform_degenerate_range() {
        let mut s = RngStream::derive(1, "t", 0);
        for _ in 0..100 {
            assert_eq!(s.uniform_int(5, 5), 5);
        }
    }

    #[test]
    fn uniform_mean_matches_law_of_large_numbers() {
        let mut s = RngStream::derive(0xDEADBEEF, "backoff", 3);
        let n = 1_000_000u64;
        let sum: u64 = (0..n).map(|_| s.uniform_int(0, 15)).sum();
        let mean = sum as f64 / n as f64;
        assert!((mean - 7.5).abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn same_seed_same_sequence() {
        let mut a = RngStream::derive(42, "loss", 7);
        let mut b = RngStream::derive(42, "loss", 7);
        for _ in 0..1000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn substreams_are_independent_of_index_count() {
        // Draws from stream 0 are the same whether or not stream 1 exists.
        let mut only = RngStream::derive(9, "node", 0);
        let expected: Vec<u64> = (0..64).map(|_| only.next_u64()).collect();
        let mut s0 = RngStream::derive(9, "node", 0);
        let mut s1 = RngStream::derive(9, "node", 1);
        let mut interleaved = Vec::new();
        for _ in 0..64 {
            interleaved.push(s0.next_u64());
            let _ = s1.next_u64();
        }
        assert_eq!(interleaved, expected);
    }

    #[test]
    fn bernoulli_extremes() {
        let mut s = RngStream::derive(5, "loss", 0);
        assert!((0..1000).all(|_| !s.bernoulli(0.0)));
        assert!((0..1000).all(|_| s.bernoulli(1.0)));
    }
}
