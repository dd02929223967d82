//! Per-packet path selection policies behind one interface.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::entropy::{ev_from_index, MpEv};
use crate::packet::{Packet, PacketKind};
use crate::sim::{mix64, RngStream};
use crate::transport::{prime_select, PathState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BalancerKind {
    #[serde(rename = "PRIME")]
    Prime,
    #[serde(rename = "CO_PRIME")]
    CoPrime,
    #[serde(rename = "REPS")]
    Reps,
    #[serde(rename = "RPS")]
    Rps,
    #[serde(rename = "ECMP")]
    Ecmp,
    /// Hosts stamp random entropy; switches pick the shortest uplink queue.
    #[serde(rename = "AR")]
    Ar,
}

impl BalancerKind {
    pub const ALL: [BalancerKind; 6] = [
        BalancerKind::Prime,
        BalancerKind::CoPrime,
        BalancerKind::Reps,
        BalancerKind::Rps,
        BalancerKind::Ecmp,
        BalancerKind::Ar,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BalancerKind::Prime => "PRIME",
            BalancerKind::CoPrime => "CO_PRIME",
            BalancerKind::Reps => "REPS",
            BalancerKind::Rps => "RPS",
            BalancerKind::Ecmp => "ECMP",
            BalancerKind::Ar => "AR",
        }
    }

    /// Whether switches override host entropy for this class.
    pub fn adaptive(self) -> bool {
        self == BalancerKind::Ar
    }

    /// Whether selection uses the per-destination generator and history.
    pub fn uses_path_state(self) -> bool {
        matches!(self, BalancerKind::Prime | BalancerKind::CoPrime)
    }
}

impl fmt::Display for BalancerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BalancerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        BalancerKind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| format!("unknown balancer `{s}` (expected one of PRIME, CO_PRIME, REPS, RPS, ECMP, AR)"))
    }
}

/// Recycling state for REPS: entropy of positively acknowledged packets is
/// reused before fresh hashed entropy is drawn.
#[derive(Debug, Clone)]
pub struct RepsState {
    recycle: VecDeque<usize>,
    cap: usize,
    salt: u64,
    counter: u64,
    pub overflows: u64,
}

impl RepsState {
    pub fn new(cap: usize, salt: u64) -> Self {
        Self {
            recycle: VecDeque::with_capacity(cap.max(1)),
            cap: cap.max(1),
            salt,
            counter: 0,
            overflows: 0,
        }
    }

    pub fn queued(&self) -> impl Iterator<Item = usize> + '_ {
        self.recycle.iter().copied()
    }

    /// Queues a path index; the oldest entry is discarded when full.
    pub fn push(&mut self, index: usize) {
        if self.recycle.len() == self.cap {
            self.recycle.pop_front();
            self.overflows += 1;
        }
        self.recycle.push_back(index);
    }

    pub fn next_index(&mut self, flow: u32, paths: usize) -> usize {
        while let Some(i) = self.recycle.pop_front() {
            if i < paths {
                return i;
            }
        }
        let h = flow_hash(flow as u64, self.counter, self.salt);
        self.counter += 1;
        (h % paths as u64) as usize
    }
}

pub fn flow_hash(flow: u64, n: u64, salt: u64) -> u64 {
    mix64(mix64(flow ^ salt.rotate_left(17)) ^ n.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Per-flow balancer state.
#[derive(Debug, Clone)]
pub enum FlowBalancer {
    Prime,
    CoPrime,
    Reps(RepsState),
    Rps(RngStream),
    Ecmp { salt: u64 },
    Ar(RngStream),
}

impl FlowBalancer {
    pub fn new(kind: BalancerKind, window_pkts: usize, salt: u64, rng: RngStream) -> Self {
        match kind {
            BalancerKind::Prime => FlowBalancer::Prime,
            BalancerKind::CoPrime => FlowBalancer::CoPrime,
            BalancerKind::Reps => FlowBalancer::Reps(RepsState::new(window_pkts, salt)),
            BalancerKind::Rps => FlowBalancer::Rps(rng),
            BalancerKind::Ecmp => FlowBalancer::Ecmp { salt },
            BalancerKind::Ar => FlowBalancer::Ar(rng),
        }
    }

    pub fn kind(&self) -> BalancerKind {
        match self {
            FlowBalancer::Prime => BalancerKind::Prime,
            FlowBalancer::CoPrime => BalancerKind::CoPrime,
            FlowBalancer::Reps(_) => BalancerKind::Reps,
            FlowBalancer::Rps(_) => BalancerKind::Rps,
            FlowBalancer::Ecmp { .. } => BalancerKind::Ecmp,
            FlowBalancer::Ar(_) => BalancerKind::Ar,
        }
    }

    /// Entropy for the next DATA send of `flow` toward `path`'s destination.
    pub fn select_ev(&mut self, flow: u32, path: &mut PathState, explore: bool) -> MpEv {
        let n = path.path_count();
        match self {
            FlowBalancer::Prime => prime_select(path, explore).0,
            FlowBalancer::CoPrime => path.generator.next(),
            FlowBalancer::Reps(st) => path.ev_at(st.next_index(flow, n)),
            FlowBalancer::Rps(rng) | FlowBalancer::Ar(rng) => path.ev_at(rng.below(n as u64) as usize),
            FlowBalancer::Ecmp { salt } => path.ev_at((flow_hash(flow as u64, 0, *salt) % n as u64) as usize),
        }
    }

    /// Reacts to an ACK or NACK that echoes the entropy in `fb.ev`.
    pub fn on_feedback(&mut self, path: &mut PathState, fb: &Packet) {
        if !path.owns(&fb.ev) {
            return;
        }
        match self {
            FlowBalancer::Prime => match fb.kind {
                PacketKind::Nack => path.penalties.on_nack(&fb.ev, &path.counts),
                PacketKind::Ack if fb.ecn => path.penalties.on_ecn(&fb.ev, &path.counts),
                _ => {}
            },
            FlowBalancer::Reps(st)
                if fb.kind == PacketKind::Ack && !fb.ecn => {
                    st.push(path.index_of(&fb.ev).expect("owned ev"));
                }
            _ => {}
        }
    }
}

/// Entropy for an ACK/NACK on the reverse path, fixed by flow and sequence.
pub fn control_ev(flow: u32, seq: u32, counts: &[usize], salt: u64) -> MpEv {
    let n: usize = counts.iter().product();
    ev_from_index((flow_hash(flow as u64, seq as u64 | 1 << 40, salt) % n as u64) as usize, counts)
        .expect("index in range")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::AdvanceMode;
    use crate::history::PenaltyConfig;
    use crate::packet::TrafficClass;
    use crate::sim::derive_rng;

    fn path(counts: &[usize]) -> PathState {
        let pen = PenaltyConfig {
            bits: 8,
            p_ecn: 4,
            p_nack: 40,
            decay_step: 1,
        };
        PathState::new(counts, derive_rng(1, 2, 3), AdvanceMode::Odometer, pen, false).unwrap()
    }

    fn feedback(kind: PacketKind, ev: MpEv, ecn: bool) -> Packet {
        let mut p = Packet::data(7, 0, 64, 1, 0, TrafficClass::Sprayed);
        p.kind = kind;
        p.ev = ev;
        p.ecn = ecn;
        p
    }

    fn balancer(kind: BalancerKind) -> FlowBalancer {
        FlowBalancer::new(kind, 16, 99, derive_rng(5, 5, 2))
    }

    #[test]
    fn names_round_trip() {
        for k in BalancerKind::ALL {
            assert_eq!(k.name().parse::<BalancerKind>().unwrap(), k);
            let json = serde_json::to_string(&k).unwrap();
            assert_eq!(serde_json::from_str::<BalancerKind>(&json).unwrap(), k);
        }
        assert_eq!("co-prime".parse::<BalancerKind>().unwrap(), BalancerKind::CoPrime);
        assert!("LETFLOW".parse::<BalancerKind>().is_err());
    }

    #[test]
    fn ecmp_is_sticky() {
        let mut p = path(&[8, 16]);
        let mut b = balancer(BalancerKind::Ecmp);
        let first = b.select_ev(7, &mut p, true);
        for i in 0..500 {
            assert_eq!(b.select_ev(7, &mut p, i < 10), first);
        }
    }

    #[test]
    fn co_prime_ignores_penalties() {
        let mut p = path(&[8]);
        let mut shadow = p.generator.clone();
        let mut b = balancer(BalancerKind::CoPrime);
        let bad = MpEv::new(&[2]);
        b.on_feedback(&mut p, &feedback(PacketKind::Nack, bad, false));
        assert!(p.penalties.all_clear());
        let picks: Vec<MpEv> = (0..16).map(|_| b.select_ev(7, &mut p, false)).collect();
        let expected: Vec<MpEv> = (0..16).map(|_| shadow.next()).collect();
        assert_eq!(picks, expected);
        assert_eq!(picks.iter().filter(|e| **e == bad).count(), 2);
    }

    #[test]
    fn prime_feedback_sets_penalties() {
        let mut p = path(&[8]);
        let mut b = balancer(BalancerKind::Prime);
        b.on_feedback(&mut p, &feedback(PacketKind::Nack, MpEv::new(&[4]), false));
        b.on_feedback(&mut p, &feedback(PacketKind::Ack, MpEv::new(&[5]), true));
        b.on_feedback(&mut p, &feedback(PacketKind::Ack, MpEv::new(&[6]), false));
        assert_eq!(p.penalties.penalty(&MpEv::new(&[4]), &[8]), 40);
        assert_eq!(p.penalties.penalty(&MpEv::new(&[5]), &[8]), 4);
        assert_eq!(p.penalties.penalty(&MpEv::new(&[6]), &[8]), 0);
    }

    #[test]
    fn reps_recycles_clean_acks_only() {
        let mut p = path(&[2]);
        let mut b = balancer(BalancerKind::Reps);
        b.on_feedback(&mut p, &feedback(PacketKind::Ack, MpEv::new(&[1]), false));
        assert_eq!(b.select_ev(7, &mut p, false), MpEv::new(&[1]));
        b.on_feedback(&mut p, &feedback(PacketKind::Ack, MpEv::new(&[1]), true));
        b.on_feedback(&mut p, &feedback(PacketKind::Nack, MpEv::new(&[0]), false));
        let FlowBalancer::Reps(st) = &b else { unreachable!() };
        assert_eq!(st.queued().count(), 0);
    }

    #[test]
    fn reps_drops_oldest_on_overflow() {
        let mut st = RepsState::new(3, 1);
        for i in 0..5 {
            st.push(i);
        }
        assert_eq!(st.queued().collect::<Vec<_>>(), vec![2, 3, 4]);
        assert_eq!(st.overflows, 2);
    }

    #[test]
    fn rps_is_uniform() {
        let mut p = path(&[8]);
        let mut b = balancer(BalancerKind::Rps);
        let mut counts = [0u32; 8];
        for _ in 0..10_000 {
            counts[b.select_ev(7, &mut p, false).part(0) as usize] += 1;
        }
        // Binomial(10_000, 1/8): sd = sqrt(10_000 * 1/8 * 7/8).
        let sd = (10_000.0f64 * 0.125 * 0.875).sqrt();
        for c in counts {
            assert!((c as f64 - 1250.0).abs() <= 3.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn identical_traces_give_identical_decisions() {
        for kind in BalancerKind::ALL {
            let run = || {
                let mut p = path(&[4, 4]);
                let mut b = balancer(kind);
                let mut out = Vec::new();
                for i in 0..200u32 {
                    let ev = b.select_ev(3, &mut p, i < 8);
                    out.push(ev);
                    let kind = if i % 7 == 0 { PacketKind::Nack } else { PacketKind::Ack };
                    b.on_feedback(&mut p, &feedback(kind, ev, i % 5 == 0));
                }
                out
            };
            assert_eq!(run(), run(), "{kind}");
        }
    }

    #[test]
    fn control_entropy_is_valid() {
        for seq in 0..100 {
            let ev = control_ev(3, seq, &[4, 8], 11);
            assert!(ev.index(&[4, 8]).is_ok());
        }
    }
}
