//! Per-path congestion history: severity-weighted penalties with send-clocked decay.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HistoryError {
    #[error("penalty width must be 1..=16 bits, got {0}")]
    Bits(u8),
    #[error("NACK penalty ({p_nack}) must exceed ECN penalty ({p_ecn})")]
    Ordering { p_ecn: u16, p_nack: u16 },
    #[error("ECN penalty must be positive")]
    ZeroEcn,
    #[error("decay step must be positive")]
    ZeroDecay,
    #[error("empty candidate set")]
    NoCandidates,
}

/// Penalty constants and table width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    pub bits: u8,
    pub p_ecn: u16,
    pub p_nack: u16,
    pub decay_step: u16,
}

impl PenaltyConfig {
    /// Defaults scaled by the path BDP: the ECN penalty approximates one
    /// uplink's share of the drain, the NACK penalty a full BDP of sends.
    pub fn from_bdp(bdp_packets: u64, uplinks_sharing_drain: usize, bits: u8) -> Self {
        let cap = Self::cap_for(bits) as u64;
        let p_nack = bdp_packets.clamp(2, cap);
        let p_ecn = ((bdp_packets as f64 / uplinks_sharing_drain.max(1) as f64).round() as u64).clamp(1, p_nack - 1);
        Self {
            bits,
            p_ecn: p_ecn as u16,
            p_nack: p_nack as u16,
            decay_step: 1,
        }
    }

    fn cap_for(bits: u8) -> u16 {
        if bits >= 16 {
            u16::MAX
        } else {
            (1u16 << bits) - 1
        }
    }

    pub fn cap(&self) -> u16 {
        Self::cap_for(self.bits)
    }

    pub fn validate(&self) -> Result<(), HistoryError> {
        if self.bits == 0 || self.bits > 16 {
            return Err(HistoryError::Bits(self.bits));
        }
        if self.p_ecn == 0 {
            return Err(HistoryError::ZeroEcn);
        }
        if self.p_nack <= self.p_ecn {
            return Err(HistoryError::Ordering {
                p_ecn: self.p_ecn,
                p_nack: self.p_nack,
            });
        }
        if self.decay_step == 0 {
            return Err(HistoryError::ZeroDecay);
        }
        Ok(())
    }
}

/// Dense penalty table indexed by full-path entropy index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CongestionHistory {
    penalties: Vec<u16>,
    cfg: PenaltyConfig,
    p_ecn: u16,
    p_nack: u16,
    nonzero: usize,
}

impl CongestionHistory {
    pub fn new(paths: usize, cfg: PenaltyConfig) -> Result<Self, HistoryError> {
        cfg.validate()?;
        let cap = cfg.cap();
        Ok(Self {
            penalties: vec![0; paths],
            p_ecn: cfg.p_ecn.min(cap),
            p_nack: cfg.p_nack.min(cap),
            cfg,
            nonzero: 0,
        })
    }

    /// Table preloaded with explicit penalties, each capped at the width.
    pub fn from_penalties(values: &[u16], cfg: PenaltyConfig) -> Result<Self, HistoryError> {
        let mut h = Self::new(values.len(), cfg)?;
        let cap = cfg.cap();
        for (e, &v) in h.penalties.iter_mut().zip(values) {
            *e = v.min(cap);
        }
        h.nonzero = h.penalties.iter().filter(|&&e| e != 0).count();
        Ok(h)
    }

    pub fn len(&self) -> usize {
        self.penalties.len()
    }

    pub fn is_empty(&self) -> bool {
        self.penalties.is_empty()
    }

    pub fn config(&self) -> &PenaltyConfig {
        &self.cfg
    }

    /// Table footprint in bits: one `bits`-wide entry per path.
    pub fn footprint_bits(&self) -> usize {
        self.penalties.len() * self.cfg.bits as usize
    }

    pub fn penalty(&self, path: usize) -> u16 {
        self.penalties[path]
    }

    pub fn penalties(&self) -> &[u16] {
        &self.penalties
    }

    /// Penalizes an ECN-marked path unless it already carries a penalty.
    pub fn on_ecn(&mut self, path: usize) {
        let e = &mut self.penalties[path];
        if *e == 0 {
            *e = self.p_ecn;
            self.nonzero += 1;
        }
    }

    /// Sets the NACK penalty unconditionally.
    pub fn on_nack(&mut self, path: usize) {
        let e = &mut self.penalties[path];
        if *e == 0 {
            self.nonzero += 1;
        }
        *e = self.p_nack;
    }

    /// One send tick: every nonzero entry drops by `decay_step`, floored at 0.
    pub fn decay(&mut self) {
        if self.nonzero == 0 {
            return;
        }
        let step = self.cfg.decay_step;
        let mut nonzero = 0;
        for e in self.penalties.iter_mut().filter(|e| **e != 0) {
            *e = e.saturating_sub(step);
            nonzero += usize::from(*e != 0);
        }
        self.nonzero = nonzero;
    }

    pub fn is_clear(&self, path: usize) -> bool {
        self.penalties[path] == 0
    }

    pub fn all_clear(&self) -> bool {
        self.nonzero == 0
    }

    /// Candidate with the smallest penalty; the earliest wins ties.
    pub fn least_penalized(&self, candidates: &[usize]) -> Result<usize, HistoryError> {
        candidates
            .iter()
            .copied()
            .min_by_key(|&c| self.penalties[c])
            .ok_or(HistoryError::NoCandidates)
    }

    /// Sends needed for a penalty of `p` to clear.
    pub fn ticks_to_clear(&self, p: u16) -> u32 {
        (p as u32).div_ceil(self.cfg.decay_step as u32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> PenaltyConfig {
        PenaltyConfig {
            bits: 8,
            p_ecn: 4,
            p_nack: 32,
            decay_step: 1,
        }
    }

    #[test]
    fn ecn_penalizes_clear_path_once() {
        let mut h = CongestionHistory::new(8, cfg()).unwrap();
        h.on_ecn(2);
        assert_eq!(h.penalty(2), 4);
        h.decay();
        h.on_ecn(2);
        assert_eq!(h.penalty(2), 3);
        h.on_nack(5);
        h.on_ecn(5);
        assert_eq!(h.penalty(5), 32);
    }

    #[test]
    fn nack_escalates_and_is_idempotent() {
        let mut h = CongestionHistory::new(8, cfg()).unwrap();
        h.on_nack(0);
        assert_eq!(h.penalty(0), 32);
        h.on_ecn(1);
        h.on_nack(1);
        assert_eq!(h.penalty(1), 32);
        h.on_nack(1);
        assert_eq!(h.penalty(1), 32);
    }

    #[test]
    fn decay_floors_at_zero() {
        let mut h = CongestionHistory::new(3, PenaltyConfig { decay_step: 3, ..cfg() }).unwrap();
        h.on_ecn(0);
        h.decay();
        assert_eq!(h.penalties(), &[1, 0, 0]);
        h.decay();
        assert_eq!(h.penalties(), &[0, 0, 0]);
        assert!(h.all_clear());
    }

    #[test]
    fn least_penalized_prefers_ecn_over_nack() {
        let mut h = CongestionHistory::new(3, cfg()).unwrap();
        h.on_nack(0);
        h.on_ecn(1);
        h.on_nack(2);
        assert_eq!(h.least_penalized(&[0, 1, 2]).unwrap(), 1);
        assert_eq!(h.least_penalized(&[2, 0]).unwrap(), 2);
        assert_eq!(h.least_penalized(&[]), Err(HistoryError::NoCandidates));
    }

    #[test]
    fn config_validation() {
        assert!(PenaltyConfig { p_nack: 4, ..cfg() }.validate().is_err());
        assert!(PenaltyConfig { bits: 0, ..cfg() }.validate().is_err());
        assert!(PenaltyConfig { decay_step: 0, ..cfg() }.validate().is_err());
    }

    #[test]
    fn penalties_saturate_at_width() {
        let c = PenaltyConfig {
            bits: 4,
            p_ecn: 3,
            p_nack: 40,
            decay_step: 1,
        };
        let mut h = CongestionHistory::new(2, c).unwrap();
        h.on_nack(0);
        assert_eq!(h.penalty(0), 15);
    }

    #[test]
    fn bdp_scaled_defaults() {
        let c = PenaltyConfig::from_bdp(65, 8, 8);
        assert_eq!((c.p_ecn, c.p_nack, c.decay_step), (8, 65, 1));
        let c = PenaltyConfig::from_bdp(1000, 8, 8);
        assert_eq!(c.p_nack, 255);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn memory_footprint_is_one_entry_per_path() {
        let h = CongestionHistory::new(256, cfg()).unwrap();
        assert_eq!(h.len(), 256);
        assert_eq!(h.footprint_bits(), 256 * 8);
    }

    #[derive(Debug, Clone, Copy)]
    enum Op {
        Ecn(usize),
        Nack(usize),
        Decay,
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![(0usize..8).prop_map(Op::Ecn), (0usize..8).prop_map(Op::Nack), Just(Op::Decay)]
    }

    proptest! {
        #[test]
        fn matches_reference_model(ops in proptest::collection::vec(op(), 0..200), step in 1u16..5) {
            let c = PenaltyConfig { decay_step: step, ..cfg() };
            let mut h = CongestionHistory::new(8, c).unwrap();
            let mut model = [0u16; 8];
            for o in ops {
                let before = model;
                match o {
                    Op::Ecn(i) => if model[i] == 0 { model[i] = c.p_ecn },
                    Op::Nack(i) => model[i] = c.p_nack,
                    Op::Decay => model.iter_mut().for_each(|e| *e = e.saturating_sub(step)),
                }
                match o {
                    Op::Ecn(i) => h.on_ecn(i),
                    Op::Nack(i) => h.on_nack(i),
                    Op::Decay => h.decay(),
                }
                prop_assert_eq!(h.penalties(), &model[..]);
                // Only signals raise entries and only decay lowers them.
                for (a, b) in before.iter().zip(&model) {
                    match o {
                        Op::Decay => prop_assert!(b <= a),
                        _ => prop_assert!(b >= a),
                    }
                }
                prop_assert_eq!(h.all_clear(), model.iter().all(|&e| e == 0));
            }
        }

        #[test]
        fn every_path_clears_within_the_bound(init in proptest::collection::vec(0u16..=32, 8), step in 1u16..5) {
            let c = PenaltyConfig { decay_step: step, ..cfg() };
            let mut h = CongestionHistory::from_penalties(&init, c).unwrap();
            for _ in 0..h.ticks_to_clear(c.p_nack) {
                h.decay();
            }
            prop_assert!(h.all_clear());
        }
    }
}
