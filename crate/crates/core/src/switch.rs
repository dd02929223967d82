//! Output-queued switch ports: per-class FIFOs, trimming on enqueue, RED ECN
//! marking on dequeue, and SP / weighted deficit round-robin class scheduling.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::packet::{Packet, PacketKind, TrafficClass, CONTROL_BYTES};
use crate::sim::{RngStream, SimTime};

pub const CLASSES: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case", deny_unknown_fields)]
#[derive(Default)]
pub enum SchedulerPolicy {
    /// One shared FIFO for all classes.
    #[default]
    Fifo,
    /// Classes served strictly in the given order, highest priority first.
    StrictPriority {
        #[serde(default = "ecmp_first")]
        order: Vec<TrafficClass>,
    },
    /// Byte-weighted deficit round-robin.
    Wrr { sprayed: f64, ecmp: f64 },
}

fn ecmp_first() -> Vec<TrafficClass> {
    vec![TrafficClass::Ecmp, TrafficClass::Sprayed]
}


impl SchedulerPolicy {
    pub fn strict_ecmp_first() -> Self {
        SchedulerPolicy::StrictPriority { order: ecmp_first() }
    }

    /// WRR with `ecmp` share of the bytes and the rest to sprayed traffic.
    pub fn wrr_ecmp(ecmp: f64) -> Self {
        SchedulerPolicy::Wrr {
            sprayed: 1.0 - ecmp,
            ecmp,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self {
            SchedulerPolicy::Fifo => Ok(()),
            SchedulerPolicy::StrictPriority { order } => {
                let mut seen = [false; CLASSES];
                for c in order {
                    if seen[c.index()] {
                        return Err(format!("class {} listed twice", c.as_str()));
                    }
                    seen[c.index()] = true;
                }
                if seen.iter().all(|&s| s) {
                    Ok(())
                } else {
                    Err("priority order must list every class".into())
                }
            }
            SchedulerPolicy::Wrr { sprayed, ecmp } => {
                if *sprayed > 0.0 && *ecmp > 0.0 && sprayed.is_finite() && ecmp.is_finite() {
                    Ok(())
                } else {
                    Err("WRR weights must be positive".into())
                }
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            SchedulerPolicy::Fifo => "fifo".into(),
            SchedulerPolicy::StrictPriority { .. } => "sp".into(),
            SchedulerPolicy::Wrr { sprayed, ecmp } => {
                format!("wrr{:.0}", 100.0 * ecmp / (ecmp + sprayed))
            }
        }
    }
}

/// Byte thresholds shared by every port of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueueThresholds {
    pub kmin: u64,
    pub kmax: u64,
    pub trim: u64,
    pub control_cap: u64,
    /// DRR quantum for a weight of 1.0.
    pub quantum: u64,
}

impl QueueThresholds {
    /// RED marking probability at depth `q` bytes.
    pub fn mark_probability(&self, q: u64) -> f64 {
        if q <= self.kmin {
            0.0
        } else if q >= self.kmax {
            1.0
        } else {
            (q - self.kmin) as f64 / (self.kmax - self.kmin) as f64
        }
    }
}

/// One traffic class: headers (ACK, NACK, trimmed DATA) ride a lane that is
/// served ahead of the payload FIFO, so feedback never waits behind data.
#[derive(Debug, Clone, Default)]
pub struct ClassQueue {
    headers: VecDeque<Packet>,
    pkts: VecDeque<Packet>,
    bytes: u64,
}

impl ClassQueue {
    pub fn len(&self) -> usize {
        self.headers.len() + self.pkts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.headers.is_empty() && self.pkts.is_empty()
    }

    pub fn bytes(&self) -> u64 {
        self.bytes
    }

    fn head_size(&self) -> Option<u64> {
        self.headers.front().or(self.pkts.front()).map(|p| p.size as u64)
    }

    fn push(&mut self, pkt: Packet) {
        self.bytes += pkt.size as u64;
        if pkt.is_control() {
            self.headers.push_back(pkt);
        } else {
            self.pkts.push_back(pkt);
        }
    }

    fn pop(&mut self) -> Option<Packet> {
        let pkt = self.headers.pop_front().or_else(|| self.pkts.pop_front())?;
        self.bytes -= pkt.size as u64;
        Some(pkt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnqueueOutcome {
    Queued,
    Trimmed,
    Dropped,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PortStats {
    pub max_pkts: usize,
    pub max_bytes: u64,
    /// Integral of queued packets over time, packet-nanoseconds.
    pub area_pkts: u128,
    pub last_change: SimTime,
    pub trimmed: u64,
    pub dropped: u64,
    pub marked: u64,
    pub tx_bytes: [u64; CLASSES],
    pub tx_pkts: u64,
}

#[derive(Debug, Clone, Default)]
struct Drr {
    current: usize,
    deficit: [i64; CLASSES],
    fresh: bool,
}

/// One output port of a switch (or a host NIC).
#[derive(Debug, Clone, Default)]
pub struct EgressPort {
    queues: [ClassQueue; CLASSES],
    pub busy: bool,
    drr: Drr,
    pub stats: PortStats,
}

impl EgressPort {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn depth_pkts(&self) -> usize {
        self.queues.iter().map(ClassQueue::len).sum()
    }

    pub fn depth_bytes(&self) -> u64 {
        self.queues.iter().map(ClassQueue::bytes).sum()
    }

    pub fn class_queue(&self, c: usize) -> &ClassQueue {
        &self.queues[c]
    }

    pub fn is_empty(&self) -> bool {
        self.queues.iter().all(ClassQueue::is_empty)
    }

    fn queue_index(policy: &SchedulerPolicy, class: TrafficClass) -> usize {
        match policy {
            SchedulerPolicy::Fifo => 0,
            _ => class.index(),
        }
    }

    fn account(&mut self, now: SimTime) {
        let depth = self.depth_pkts() as u128;
        let dt = now.as_nanos().saturating_sub(self.stats.last_change.as_nanos()) as u128;
        self.stats.area_pkts += depth * dt;
        self.stats.last_change = now;
    }

    /// Enqueues with trimming above the trim threshold. Headers and control
    /// packets are never trimmed; they drop only above the control cap.
    pub fn enqueue(&mut self, mut pkt: Packet, now: SimTime, th: &QueueThresholds, policy: &SchedulerPolicy) -> EnqueueOutcome {
        self.account(now);
        let qi = Self::queue_index(policy, pkt.class);
        let q = &mut self.queues[qi];
        let mut outcome = EnqueueOutcome::Queued;
        if pkt.is_control() {
            if q.bytes + pkt.size as u64 > th.control_cap {
                self.stats.dropped += 1;
                return EnqueueOutcome::Dropped;
            }
        } else if q.bytes + pkt.size as u64 > th.trim {
            pkt.trim();
            self.stats.trimmed += 1;
            outcome = EnqueueOutcome::Trimmed;
            if q.bytes + CONTROL_BYTES as u64 > th.control_cap {
                self.stats.dropped += 1;
                return EnqueueOutcome::Dropped;
            }
        }
        q.push(pkt);
        let (p, b) = (self.depth_pkts(), self.depth_bytes());
        self.stats.max_pkts = self.stats.max_pkts.max(p);
        self.stats.max_bytes = self.stats.max_bytes.max(b);
        outcome
    }

    /// Picks the class queue to serve next under `policy`.
    pub fn schedule_class(&mut self, policy: &SchedulerPolicy, th: &QueueThresholds) -> Option<usize> {
        match policy {
            SchedulerPolicy::Fifo => (!self.queues[0].is_empty()).then_some(0),
            SchedulerPolicy::StrictPriority { order } => {
                order.iter().map(|c| c.index()).find(|&c| !self.queues[c].is_empty())
            }
            SchedulerPolicy::Wrr { sprayed, ecmp } => {
                if self.is_empty() {
                    return None;
                }
                let weights = [*sprayed, *ecmp];
                let quantum = |c: usize| ((weights[c] * th.quantum as f64).round() as i64).max(1);
                let d = &mut self.drr;
                loop {
                    let c = d.current;
                    match self.queues[c].head_size() {
                        None => {
                            d.deficit[c] = 0;
                        }
                        Some(size) => {
                            if d.fresh {
                                d.deficit[c] += quantum(c);
                                d.fresh = false;
                            }
                            if d.deficit[c] >= size as i64 {
                                d.deficit[c] -= size as i64;
                                return Some(c);
                            }
                        }
                    }
                    d.current = (c + 1) % CLASSES;
                    d.fresh = true;
                }
            }
        }
    }

    /// Removes the next packet per `policy`, applying RED marking to DATA
    /// against the instantaneous depth of its class queue.
    pub fn dequeue(
        &mut self,
        now: SimTime,
        th: &QueueThresholds,
        policy: &SchedulerPolicy,
        rng: &mut RngStream,
    ) -> Option<Packet> {
        let c = self.schedule_class(policy, th)?;
        self.account(now);
        let q = &mut self.queues[c];
        let depth = q.bytes;
        let mut pkt = q.pop()?;
        if pkt.kind == PacketKind::Data && !pkt.ecn {
            let p = th.mark_probability(depth);
            if p >= 1.0 || (p > 0.0 && rng.unit() < p) {
                pkt.ecn = true;
                self.stats.marked += 1;
            }
        }
        self.stats.tx_bytes[pkt.class.index()] += pkt.size as u64;
        self.stats.tx_pkts += 1;
        Some(pkt)
    }

    /// Event-exact time-average of queued packets over `[0, now]`.
    pub fn time_average_pkts(&self, now: SimTime) -> f64 {
        if now.as_nanos() == 0 {
            return 0.0;
        }
        let dt = now.as_nanos().saturating_sub(self.stats.last_change.as_nanos()) as u128;
        let area = self.stats.area_pkts + self.depth_pkts() as u128 * dt;
        area as f64 / now.as_nanos() as f64
    }
}

/// Adaptive-routing choice: the candidate port with the fewest queued
/// packets, ties broken uniformly at random.
pub fn least_occupied(ports: &[EgressPort], candidates: &[u16], rng: &mut RngStream) -> Option<u16> {
    let best = candidates.iter().map(|&p| ports[p as usize].depth_pkts()).min()?;
    let ties: Vec<u16> = candidates
        .iter()
        .copied()
        .filter(|&p| ports[p as usize].depth_pkts() == best)
        .collect();
    Some(ties[rng.below(ties.len() as u64) as usize])
}
