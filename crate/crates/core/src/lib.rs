//! Packet-level FatTree simulator with the PRIME packet-spraying load
//! balancer and its baselines.

pub mod balancer;
pub mod entropy;
pub mod history;
pub mod metrics;
pub mod network;
pub mod packet;
pub mod scenario;
pub mod sim;
pub mod sweep;
pub mod switch;
pub mod topology;
pub mod transport;

pub use balancer::BalancerKind;
pub use entropy::{ev_from_index, ev_index, EvGenerator, MpEv};
pub use history::{CongestionHistory, PenaltyConfig};
pub use metrics::{Counters, FlowRecord, RunSummary};
pub use network::{simulate, FlowSpec, Network, RunConfig};
pub use packet::{Packet, PacketKind, TrafficClass};
pub use scenario::{ScenarioError, ScenarioSpec};
pub use sim::{derive_rng, EventQueue, RngStream, SimTime};
pub use sweep::{run_sweep, SweepMatrix};
pub use topology::{build_fattree, Topology, TopologyParams};
