//! Discrete-event core: a virtual clock, an event queue ordered by
//! `(time, insertion sequence)`, and named, seeded random streams.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::ops::{Add, Sub};

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

const NANOS_PER_SEC: u64 = 1_000_000_000;

/// Simulated time in integer nanoseconds since the start of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_nanos(ns: u64) -> Self {
        SimTime(ns)
    }

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us * 1_000)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1_000_000)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime(s * NANOS_PER_SEC)
    }

    /// Rounds to the nearest nanosecond. Negative and NaN inputs clamp to zero.
    pub fn from_secs_f64(s: f64) -> Self {
        if s.is_nan() || s <= 0.0 {
            return SimTime::ZERO;
        }
        let ns = (s * NANOS_PER_SEC as f64).round();
        if ns >= u64::MAX as f64 {
            SimTime::MAX
        } else {
            SimTime(ns as u64)
        }
    }

    pub const fn as_nanos(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / NANOS_PER_SEC as f64
    }

    pub fn saturating_sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(rhs.0))
    }

    pub fn checked_sub(self, rhs: SimTime) -> Option<SimTime> {
        self.0.checked_sub(rhs.0).map(SimTime)
    }

    pub fn mul(self, k: u64) -> SimTime {
        SimTime(self.0.saturating_mul(k))
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_add(rhs.0))
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

/// Seconds with exactly nine decimals, the trace representation.
impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:09}", self.0 / NANOS_PER_SEC, self.0 % NANOS_PER_SEC)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error("event scheduled at {at} but the clock is already at {now}")]
    PastEvent { at: SimTime, now: SimTime },
    #[error("empty draw range [{lo}, {hi})")]
    EmptyRange { lo: f64, hi: f64 },
}

/// One unit of scheduled work.
#[derive(Debug, Clone)]
pub struct Event<E> {
    pub at: SimTime,
    pub seq: u64,
    pub payload: E,
}

struct Queued<E>(Event<E>);

impl<E> PartialEq for Queued<E> {
    fn eq(&self, other: &Self) -> bool {
        (self.0.at, self.0.seq) == (other.0.at, other.0.seq)
    }
}

impl<E> Eq for Queued<E> {}

impl<E> PartialOrd for Queued<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// Reversed so the std max-heap pops the earliest (at, seq) first.
impl<E> Ord for Queued<E> {
    fn cmp(&self, other: &Self) -> Ordering {
        (other.0.at, other.0.seq).cmp(&(self.0.at, self.0.seq))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSummary {
    pub dispatched: u64,
    pub final_clock: SimTime,
}

/// Single-threaded event scheduler. One instance belongs to one run.
pub struct Engine<E> {
    now: SimTime,
    next_seq: u64,
    dispatched: u64,
    queue: BinaryHeap<Queued<E>>,
}

impl<E> Default for Engine<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> Engine<E> {
    pub fn new() -> Self {
        Engine {
            now: SimTime::ZERO,
            next_seq: 0,
            dispatched: 0,
            queue: BinaryHeap::new(),
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn dispatched(&self) -> u64 {
        self.dispatched
    }

    /// Enqueues `payload` at absolute time `at`, returning its sequence number.
    pub fn schedule(&mut self, at: SimTime, payload: E) -> Result<u64, EngineError> {
        if at < self.now {
            return Err(EngineError::PastEvent { at, now: self.now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Queued(Event { at, seq, payload }));
        Ok(seq)
    }

    pub fn schedule_in(&mut self, delay: SimTime, payload: E) -> u64 {
        let at = self.now + delay;
        // Cannot be in the past: `now + delay >= now`.
        self.schedule(at, payload).expect("relative schedule")
    }

    /// Pops the next event if it is due at or before `end`, advancing the clock.
    pub fn pop_due(&mut self, end: SimTime) -> Option<Event<E>> {
        match self.queue.peek() {
            Some(q) if q.0.at <= end => {
                let Queued(ev) = self.queue.pop().expect("peeked");
                self.now = ev.at;
                self.dispatched += 1;
                Some(ev)
            }
            _ => None,
        }
    }

    /// Dispatches every event with `at <= end` in `(at, seq)` order, then
    /// parks the clock at `end`. Later events stay queued.
    pub fn run_until<F>(&mut self, end: SimTime, mut handler: F) -> RunSummary
    where
        F: FnMut(&mut Engine<E>, Event<E>),
    {
        let before = self.dispatched;
        while let Some(ev) = self.pop_due(end) {
            handler(self, ev);
        }
        if end > self.now {
            self.now = end;
        }
        RunSummary {
            dispatched: self.dispatched - before,
            final_clock: self.now,
        }
    }
}

/// Purpose tag of a random stream. Each concern draws from its own stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamLabel {
    Mobility,
    Traffic,
    MacJitter,
    Protocol,
}

impl StreamLabel {
    fn stream_id(self) -> u64 {
        match self {
            StreamLabel::Mobility => 1,
            StreamLabel::Traffic => 2,
            StreamLabel::MacJitter => 3,
            StreamLabel::Protocol => 4,
        }
    }
}

/// Seeded random stream.
///
/// The generator is ChaCha8 keyed by `seed` (expanded with the rand_core
/// `seed_from_u64` PCG32 expander) with the ChaCha stream id set from the
/// label. Floats use the top 53 bits of each 64-bit output. Golden traces
/// depend on this exact construction.
#[derive(Clone)]
pub struct RandomStream {
    seed: u64,
    label: StreamLabel,
    rng: ChaCha8Rng,
    draws: u64,
}

impl fmt::Debug for RandomStream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RandomStream")
            .field("seed", &self.seed)
            .field("label", &self.label)
            .field("draws", &self.draws)
            .finish()
    }
}

impl RandomStream {
    pub fn new(seed: u64, label: StreamLabel) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(label.stream_id());
        RandomStream {
            seed,
            label,
            rng,
            draws: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn label(&self) -> StreamLabel {
        self.label
    }

    pub fn draws(&self) -> u64 {
        self.draws
    }

    pub fn next_u64(&mut self) -> u64 {
        self.draws += 1;
        self.rng.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn next_unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn draw_uniform(&mut self, lo: f64, hi: f64) -> Result<f64, EngineError> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(EngineError::EmptyRange { lo, hi });
        }
        let v = lo + (hi - lo) * self.next_unit();
        // Rounding can land exactly on `hi` for tiny ranges.
        Ok(if v >= hi { lo.max(prev_float(hi)) } else { v.max(lo) })
    }

    /// Uniform in `[lo, hi]`, allowing a degenerate range.
    pub fn draw_closed(&mut self, lo: f64, hi: f64) -> f64 {
        if lo == hi {
            lo
        } else {
            lo + (hi - lo) * self.next_unit()
        }
    }

    /// Uniform integer in `[0, n)` by rejection. `n` must be positive.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % n;
            }
        }
    }

    /// Uniform duration in `[lo, hi]` nanoseconds.
    pub fn draw_time(&mut self, lo: SimTime, hi: SimTime) -> SimTime {
        if hi <= lo {
            return lo;
        }
        let span = hi.as_nanos() - lo.as_nanos() + 1;
        SimTime::from_nanos(lo.as_nanos() + self.below(span))
    }
}

fn prev_float(x: f64) -> f64 {
    if x > 0.0 {
        f64::from_bits(x.to_bits() - 1)
    } else if x < 0.0 {
        f64::from_bits(x.to_bits() + 1)
    } else {
        -f64::from_bits(1)
    }
}
