use serde::{Deserialize, Serialize};

use crate::entropy::MpEv;
use crate::sim::SimTime;

/// Size of ACK/NACK packets and of trimmed DATA headers.
pub const CONTROL_BYTES: u32 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PacketKind {
    Data,
    Ack,
    Nack,
}

/// Egress class a packet is queued in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrafficClass {
    Sprayed = 0,
    Ecmp = 1,
}

impl TrafficClass {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TrafficClass::Sprayed => "sprayed",
            TrafficClass::Ecmp => "ecmp",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    pub kind: PacketKind,
    pub class: TrafficClass,
    pub flow: u32,
    pub seq: u32,
    /// Bytes on the wire.
    pub size: u32,
    pub src: u32,
    pub dst: u32,
    /// Packed entropy field that switches slice to pick uplinks.
    pub entropy: u16,
    /// Entropy stamped on DATA, echoed on ACK/NACK.
    pub ev: MpEv,
    pub ecn: bool,
    pub trimmed: bool,
    /// Uplinks are chosen by switch-local queue state instead of `entropy`.
    pub adaptive: bool,
    pub sent_at: SimTime,
    /// Cumulative ACK: every seq below this value has been received.
    pub cum_ack: u32,
    /// Seqs covered by this ACK (the coalesced batch).
    pub acked: Vec<u32>,
}

impl Packet {
    pub fn data(flow: u32, seq: u32, size: u32, src: u32, dst: u32, class: TrafficClass) -> Self {
        Self {
            kind: PacketKind::Data,
            class,
            flow,
            seq,
            size,
            src,
            dst,
            entropy: 0,
            ev: MpEv::default(),
            ecn: false,
            trimmed: false,
            adaptive: false,
            sent_at: SimTime::ZERO,
            cum_ack: 0,
            acked: Vec::new(),
        }
    }

    pub fn is_control(&self) -> bool {
        self.kind != PacketKind::Data || self.trimmed
    }

    /// Strips the payload, keeping the header.
    pub fn trim(&mut self) {
        debug_assert_eq!(self.kind, PacketKind::Data);
        self.trimmed = true;
        self.size = CONTROL_BYTES;
    }

    pub fn coalesce_count(&self) -> usize {
        self.acked.len()
    }
}
