//! Discrete-event engine: integer-nanosecond clock, a totally ordered event
//! queue and seeded random streams.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::ops::{Add, AddAssign, Sub};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Simulation time in nanoseconds since the start of the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimTime(pub u64);

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

    pub const fn as_nanos(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 * 1e-9
    }

    pub fn saturating_sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(rhs.0))
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.checked_add(rhs.0).expect("virtual clock overflow"))
    }
}

impl AddAssign for SimTime {
    fn add_assign(&mut self, rhs: SimTime) {
        *self = *self + rhs;
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ns", self.0)
    }
}

/// Time to serialize `bytes` onto a link of `bps` bits per second, rounded up
/// to the next nanosecond.
pub fn serialization_time(bytes: u64, bps: u64) -> SimTime {
    let bits = bytes as u128 * 8 * 1_000_000_000;
    SimTime(bits.div_ceil(bps as u128) as u64)
}

/// Handle returned by [`EventQueue::schedule`]; it is the insertion sequence number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EventHandle(pub u64);

struct Entry<E> {
    at: SimTime,
    seq: u64,
    payload: E,
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        self.at == other.at && self.seq == other.seq
    }
}

impl<E> Eq for Entry<E> {}

impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Entry<E> {
    // BinaryHeap is a max-heap; invert so the earliest (at, seq) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.at.cmp(&self.at).then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Event queue with a virtual clock. Events with equal timestamps are
/// dispatched in insertion order.
pub struct EventQueue<E> {
    heap: BinaryHeap<Entry<E>>,
    now: SimTime,
    next_seq: u64,
    dispatched: u64,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        Self {
            heap: BinaryHeap::new(),
            now: SimTime::ZERO,
            next_seq: 0,
            dispatched: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn dispatched(&self) -> u64 {
        self.dispatched
    }

    /// Schedules `payload` at absolute time `at`.
    ///
    /// Panics if `at` lies in the past: that is a model bug and the run
    /// cannot be trusted past that point.
    pub fn schedule(&mut self, at: SimTime, payload: E) -> EventHandle {
        assert!(
            at >= self.now,
            "event scheduled in the past: at={at} now={}",
            self.now
        );
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Entry { at, seq, payload });
        EventHandle(seq)
    }

    pub fn schedule_in(&mut self, delay: SimTime, payload: E) -> EventHandle {
        self.schedule(self.now + delay, payload)
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|e| e.at)
    }

    /// Pops the next event if it fires at or before `deadline`, advancing the clock.
    pub fn pop_until(&mut self, deadline: SimTime) -> Option<(SimTime, E)> {
        if self.heap.peek()?.at > deadline {
            return None;
        }
        let e = self.heap.pop()?;
        debug_assert!(e.at >= self.now);
        self.now = e.at;
        self.dispatched += 1;
        Some((e.at, e.payload))
    }

    /// Dispatches every event with `fire_at <= deadline` through `handler` and
    /// returns the final clock: `deadline` if events remain beyond it,
    /// otherwise the time of the last dispatched event.
    pub fn run_until<F>(&mut self, deadline: SimTime, mut handler: F) -> SimTime
    where
        F: FnMut(&mut Self, SimTime, E),
    {
        while let Some((at, ev)) = self.pop_until(deadline) {
            handler(self, at, ev);
        }
        if !self.heap.is_empty() {
            self.now = self.now.max(deadline);
        }
        self.now
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Avalanche mix of a 64-bit value; used for stream keys and flow hashing.
pub fn mix64(x: u64) -> u64 {
    splitmix64(x)
}

/// Purpose tags for [`derive_rng`]; keep them stable so seeds stay meaningful.
pub mod purpose {
    pub const SHUFFLE: u64 = 1;
    pub const SPRAY: u64 = 2;
    pub const RED: u64 = 3;
    pub const AR_TIE: u64 = 4;
    pub const TRAFFIC: u64 = 5;
    pub const IMPAIRMENT: u64 = 6;
    pub const ENTROPY_ADVANCE: u64 = 7;
}

/// A deterministic random stream identified by `(global_seed, entity_id, purpose)`.
///
/// Backed by ChaCha8: the global seed selects the key, the entity and purpose
/// select the stream, so distinct lineages never share keystream.
#[derive(Clone, Debug)]
pub struct RngStream {
    inner: ChaCha8Rng,
    lineage: (u64, u64, u64),
}

impl RngStream {
    pub fn new(global_seed: u64, entity_id: u64, purpose: u64) -> Self {
        let mut key = [0u8; 32];
        let mut s = global_seed;
        for chunk in key.chunks_mut(8) {
            s = splitmix64(s);
            chunk.copy_from_slice(&s.to_le_bytes());
        }
        let mut inner = ChaCha8Rng::from_seed(key);
        inner.set_stream(splitmix64(entity_id ^ splitmix64(purpose.wrapping_mul(0x2545_f491_4f6c_dd1d))));
        Self {
            inner,
            lineage: (global_seed, entity_id, purpose),
        }
    }

    pub fn lineage(&self) -> (u64, u64, u64) {
        self.lineage
    }

    /// Uniform integer in `0..n` (n > 0), unbiased.
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.inner.next_u64();
            if v < zone {
                return v % n;
            }
        }
    }

    /// Uniform float in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.inner.try_fill_bytes(dest)
    }
}

/// Derives the random stream for an entity under a fixed global seed.
pub fn derive_rng(global_seed: u64, entity_id: u64, purpose: u64) -> RngStream {
    RngStream::new(global_seed, entity_id, purpose)
}
