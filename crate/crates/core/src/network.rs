//! The simulated fabric: hosts, switches and the event loop that moves
//! packets between them.

use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

use crate::balancer::{control_ev, BalancerKind, FlowBalancer};
use crate::entropy::{header_part, AdvanceMode};
use crate::history::{HistoryError, PenaltyConfig};
use crate::metrics::{Counters, FlowRecord, MetricsError, PortBytes, PortRecord, QueueSample, RunSummary};
use crate::packet::{Packet, PacketKind, TrafficClass};
use crate::sim::{derive_rng, purpose, serialization_time, EventQueue, RngStream, SimTime};
use crate::switch::{least_occupied, EgressPort, EnqueueOutcome, QueueThresholds, SchedulerPolicy, CLASSES};
use crate::topology::{Impairment, LinkId, LinkSelector, NodeId, Topology, TopologyError};
use crate::transport::{
    bdp_bytes, bdp_packets, base_rtt, ideal_fct, PathState, Phase, ReceiveAction, ReceiverFlow, SenderFlow,
    TransportConfig,
};

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    History(#[from] HistoryError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("flow {0}: {1}")]
    Flow(usize, String),
}

/// One flow to simulate.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSpec {
    pub src: u32,
    pub dst: u32,
    pub bytes: u64,
    #[serde(default)]
    pub start_ns: u64,
    #[serde(default = "sprayed")]
    pub class: TrafficClass,
}

fn sprayed() -> TrafficClass {
    TrafficClass::Sprayed
}

/// Queue thresholds in multiples of the BDP.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThresholdConfig {
    pub kmin_bdp: f64,
    pub kmax_bdp: f64,
    pub trim_bdp: f64,
    pub control_cap_bdp: f64,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self {
            kmin_bdp: 0.25,
            kmax_bdp: 0.75,
            trim_bdp: 1.0,
            control_cap_bdp: 2.0,
        }
    }
}

/// History and generator options.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HistoryConfig {
    pub bits: u8,
    pub p_ecn: Option<u16>,
    pub p_nack: Option<u16>,
    pub decay_step: u16,
    pub per_part: bool,
    pub advance: AdvanceMode,
}

impl Default for HistoryConfig {
    fn default() -> Self {
        Self {
            bits: 8,
            p_ecn: None,
            p_nack: None,
            decay_step: 1,
            per_part: false,
            advance: AdvanceMode::Odometer,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduledImpairment {
    pub at: SimTime,
    pub selector: LinkSelector,
    pub impairment: Impairment,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub transport: TransportConfig,
    /// Balancer per traffic class.
    pub balancers: [BalancerKind; CLASSES],
    pub scheduler: SchedulerPolicy,
    pub thresholds: ThresholdConfig,
    pub history: HistoryConfig,
    pub impairments: Vec<ScheduledImpairment>,
    pub queue_sample: Option<SimTime>,
    /// Record DATA bytes offered to every (flow, switch, port).
    pub port_bytes: bool,
    pub deadline: SimTime,
}

impl RunConfig {
    pub fn new(seed: u64, balancer: BalancerKind) -> Self {
        Self {
            seed,
            transport: TransportConfig::default(),
            balancers: [balancer, BalancerKind::Ecmp],
            scheduler: SchedulerPolicy::Fifo,
            thresholds: ThresholdConfig::default(),
            history: HistoryConfig::default(),
            impairments: Vec::new(),
            queue_sample: None,
            port_bytes: false,
            deadline: SimTime::from_millis(1000),
        }
    }
}

#[derive(Debug, Clone)]
enum Ev {
    Start(u32),
    Arrive { node: NodeId, pkt: Packet },
    PortFree { sw: u32, port: u16 },
    NicFree(u32),
    Coalesce { flow: u32, epoch: u64 },
    Rto(u32),
    Sample,
    Impair(usize),
}

#[derive(Debug, Clone, Default)]
struct Nic {
    busy: bool,
    ctl: VecDeque<Packet>,
    flows: Vec<u32>,
    rr: usize,
}

struct FlowState {
    sender: SenderFlow,
    receiver: ReceiverFlow,
    balancer: FlowBalancer,
    path: usize,
    ideal: SimTime,
    started: bool,
    done: bool,
    rto_pending: bool,
}

/// A fabric loaded with flows, ready to run.
pub struct Network {
    topo: Topology,
    cfg: RunConfig,
    queue: EventQueue<Ev>,
    ports: Vec<Vec<EgressPort>>,
    red_rng: Vec<RngStream>,
    ar_rng: Vec<RngStream>,
    nics: Vec<Nic>,
    flows: Vec<FlowState>,
    paths: Vec<PathState>,
    path_keys: Vec<(u32, usize)>,
    thresholds: QueueThresholds,
    widths: Vec<u8>,
    rtt: SimTime,
    rto: SimTime,
    bdp_pkts: u64,
    penalty: PenaltyConfig,
    salt: u64,
    counters: Counters,
    port_bytes: BTreeMap<(u32, u32, u16), u64>,
    samples: Vec<QueueSample>,
    remaining: usize,
    last_ack: SimTime,
    ran: bool,
}

impl Network {
    pub fn new(mut topo: Topology, flows: &[FlowSpec], cfg: RunConfig) -> Result<Self, NetworkError> {
        let tcfg = &cfg.transport;
        let bdp = bdp_bytes(&topo, tcfg);
        let bdp_pkts = bdp_packets(&topo, tcfg);
        let rtt = base_rtt(&topo, tcfg);
        let th = &cfg.thresholds;
        let scale = |f: f64| (f * bdp as f64).round() as u64;
        let thresholds = QueueThresholds {
            kmin: scale(th.kmin_bdp),
            kmax: scale(th.kmax_bdp),
            trim: scale(th.trim_bdp),
            control_cap: scale(th.control_cap_bdp),
            quantum: tcfg.mtu as u64,
        };
        let h = cfg.history;
        let leaf_uplinks = topo.nominal_uplinks().first().copied().unwrap_or(1);
        let mut penalty = PenaltyConfig::from_bdp(bdp_pkts, leaf_uplinks, h.bits);
        penalty.decay_step = h.decay_step;
        if let Some(p) = h.p_ecn {
            penalty.p_ecn = p;
        }
        if let Some(p) = h.p_nack {
            penalty.p_nack = p;
        }
        penalty.validate()?;

        // Impairments at t=0 take effect before any state is derived from routes.
        let mut later = Vec::new();
        for (i, imp) in cfg.impairments.iter().enumerate() {
            if imp.at == SimTime::ZERO {
                topo.apply_impairment(&imp.selector, imp.impairment)?;
            } else {
                later.push(i);
            }
        }

        let seed = cfg.seed;
        let ports = topo.switches.iter().map(|s| vec![EgressPort::new(); s.ports.len()]).collect();
        let red_rng = topo.switches.iter().map(|s| derive_rng(seed, s.node.0 as u64, purpose::RED)).collect();
        let ar_rng = topo.switches.iter().map(|s| derive_rng(seed, s.node.0 as u64, purpose::AR_TIE)).collect();
        let mut net = Self {
            widths: topo.part_widths(),
            nics: vec![Nic::default(); topo.n_hosts()],
            topo,
            queue: EventQueue::new(),
            ports,
            red_rng,
            ar_rng,
            flows: Vec::with_capacity(flows.len()),
            paths: Vec::new(),
            path_keys: Vec::new(),
            thresholds,
            rtt,
            // A partial batch is only acknowledged when the coalescing timer
            // fires, so that wait is added on top of the RTT multiple.
            rto: SimTime((rtt.as_nanos() as f64 * tcfg.rto_rtts).round() as u64 + tcfg.coalesce_timeout_ns),
            bdp_pkts,
            penalty,
            salt: crate::sim::mix64(seed ^ 0x5eed_ba1a_11ce),
            counters: Counters::default(),
            port_bytes: BTreeMap::new(),
            samples: Vec::new(),
            remaining: flows.len(),
            last_ack: SimTime::ZERO,
            ran: false,
            cfg,
        };
        let window_bytes = {
            let mtu = net.cfg.transport.mtu as u64;
            ((net.cfg.transport.window_bdp * bdp as f64) / mtu as f64).ceil().max(1.0) as u64 * mtu
        };
        let mut path_index: BTreeMap<(u32, usize), usize> = BTreeMap::new();
        for (id, f) in flows.iter().enumerate() {
            if f.src == f.dst {
                return Err(NetworkError::Flow(id, "source equals destination".into()));
            }
            let src_leaf = net.topo.host(f.src)?.leaf;
            let dst_leaf = net.topo.host(f.dst)?.leaf;
            let key = (f.src, dst_leaf);
            let path = match path_index.get(&key) {
                Some(&p) => p,
                None => {
                    let counts = net.topo.uplink_counts(src_leaf, dst_leaf);
                    let ps = net.new_path(key, &counts)?;
                    net.paths.push(ps);
                    net.path_keys.push(key);
                    path_index.insert(key, net.paths.len() - 1);
                    net.paths.len() - 1
                }
            };
            let kind = net.cfg.balancers[f.class.index()];
            let id = id as u32;
            let mut sender = SenderFlow::new(
                id,
                f.src,
                f.dst,
                dst_leaf,
                f.class,
                f.bytes,
                SimTime(f.start_ns),
                net.cfg.transport.mtu,
                window_bytes,
                bdp_pkts,
            );
            sender.enable_ecn_cc(net.cfg.transport.ecn_cc);
            let n_pkts = sender.packets();
            let ideal = ideal_fct(f.bytes, f.src, f.dst, &net.topo, net.cfg.transport.mtu)?;
            let rng = derive_rng(seed, 1 << 32 | id as u64, purpose::SPRAY);
            net.flows.push(FlowState {
                sender,
                receiver: ReceiverFlow::new(id, f.src, n_pkts),
                balancer: FlowBalancer::new(kind, (window_bytes / net.cfg.transport.mtu as u64) as usize, net.salt, rng),
                path,
                ideal,
                started: false,
                done: n_pkts == 0,
                rto_pending: false,
            });
            net.nics[f.src as usize].flows.push(id);
            if n_pkts == 0 {
                net.remaining -= 1;
            }
        }
        for i in later {
            let at = net.cfg.impairments[i].at;
            net.queue.schedule(at, Ev::Impair(i));
        }
        for (id, f) in flows.iter().enumerate() {
            net.queue.schedule(SimTime(f.start_ns), Ev::Start(id as u32));
        }
        if let Some(p) = net.cfg.queue_sample {
            if p > SimTime::ZERO {
                net.queue.schedule(SimTime::ZERO, Ev::Sample);
            }
        }
        Ok(net)
    }

    fn new_path(&self, key: (u32, usize), counts: &[usize]) -> Result<PathState, HistoryError> {
        let rng = derive_rng(self.cfg.seed, (key.0 as u64) << 32 | key.1 as u64, purpose::SHUFFLE);
        let h = self.cfg.history;
        PathState::new(counts, rng, h.advance, self.penalty, h.per_part)
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    pub fn bdp_packets(&self) -> u64 {
        self.bdp_pkts
    }

    pub fn base_rtt(&self) -> SimTime {
        self.rtt
    }

    pub fn thresholds(&self) -> &QueueThresholds {
        &self.thresholds
    }

    pub fn penalty_config(&self) -> &PenaltyConfig {
        &self.penalty
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    pub fn now(&self) -> SimTime {
        self.queue.now()
    }

    pub fn path_states(&self) -> impl Iterator<Item = ((u32, usize), &PathState)> {
        self.path_keys.iter().copied().zip(self.paths.iter())
    }

    pub fn queue_samples(&self) -> &[QueueSample] {
        &self.samples
    }

    pub fn port(&self, sw: usize, port: u16) -> &EgressPort {
        &self.ports[sw][port as usize]
    }

    /// Runs until every event has been dispatched or the deadline passes.
    pub fn run(&mut self) -> SimTime {
        assert!(!self.ran, "a network runs once");
        self.ran = true;
        let deadline = self.cfg.deadline;
        while let Some((t, ev)) = self.queue.pop_until(deadline) {
            self.handle(t, ev);
        }
        self.counters.events = self.queue.dispatched();
        if self.queue.is_empty() {
            self.queue.now()
        } else {
            // Cut off: the clock stands at the deadline.
            deadline
        }
    }

    pub fn all_complete(&self) -> bool {
        self.remaining == 0
    }

    fn handle(&mut self, now: SimTime, ev: Ev) {
        match ev {
            Ev::Start(id) => {
                self.flows[id as usize].started = true;
                let src = self.flows[id as usize].sender.src;
                self.kick_nic(src, now);
            }
            Ev::Arrive { node, pkt } => match self.topo.switch_index(node) {
                Some(sw) => self.switch_arrive(sw, pkt, now),
                None => self.host_arrive(node.0, pkt, now),
            },
            Ev::PortFree { sw, port } => {
                self.ports[sw as usize][port as usize].busy = false;
                self.start_port(sw as usize, port, now);
            }
            Ev::NicFree(h) => {
                self.nics[h as usize].busy = false;
                self.kick_nic(h, now);
            }
            Ev::Coalesce { flow, epoch } => {
                let f = &mut self.flows[flow as usize];
                let template = Packet::data(flow, 0, 0, f.sender.src, f.sender.dst, f.sender.class);
                if let Some(ack) = f.receiver.on_timer(epoch, &template) {
                    self.send_control(ack, now);
                }
            }
            Ev::Rto(flow) => self.on_rto(flow, now),
            Ev::Sample => self.sample(now),
            Ev::Impair(i) => {
                let imp = self.cfg.impairments[i].clone();
                self.topo
                    .apply_impairment(&imp.selector, imp.impairment)
                    .expect("impairment validated at construction");
                self.refresh_paths();
            }
        }
    }

    /// Oracle notification: hosts adopt the post-impairment path spaces.
    fn refresh_paths(&mut self) {
        for i in 0..self.paths.len() {
            let (host, dst_leaf) = self.path_keys[i];
            let src_leaf = self.topo.hosts[host as usize].leaf;
            let counts = self.topo.uplink_counts(src_leaf, dst_leaf);
            if counts != self.paths[i].counts {
                self.paths[i] = self.new_path((host, dst_leaf), &counts).expect("validated penalty config");
            }
        }
    }

    fn transmit(&mut self, link: LinkId, pkt: Packet, now: SimTime) -> SimTime {
        let l = self.topo.link(link);
        let ser = serialization_time(pkt.size as u64, l.rate_bps().max(1));
        let done = now + ser;
        let node = l.to;
        self.queue.schedule(done + l.delay, Ev::Arrive { node, pkt });
        done
    }

    fn kick_nic(&mut self, host: u32, now: SimTime) {
        let h = host as usize;
        if self.nics[h].busy {
            return;
        }
        let pkt = if let Some(p) = self.nics[h].ctl.pop_front() {
            p
        } else {
            match self.next_data(host, now) {
                Some(p) => p,
                None => return,
            }
        };
        let link = self.topo.hosts[h].uplink;
        let done = self.transmit(link, pkt, now);
        self.nics[h].busy = true;
        self.queue.schedule(done, Ev::NicFree(host));
    }

    /// Round-robin over the host's flows for the next DATA packet.
    fn next_data(&mut self, host: u32, now: SimTime) -> Option<Packet> {
        let n = self.nics[host as usize].flows.len();
        for k in 0..n {
            let slot = (self.nics[host as usize].rr + k) % n;
            let id = self.nics[host as usize].flows[slot];
            let f = &mut self.flows[id as usize];
            if !f.started || f.done {
                continue;
            }
            let Some(seq) = f.sender.peek_next() else { continue };
            self.nics[host as usize].rr = (slot + 1) % n;
            return Some(self.build_data(id, seq, now));
        }
        None
    }

    fn build_data(&mut self, id: u32, seq: u32, now: SimTime) -> Packet {
        let f = &mut self.flows[id as usize];
        let explore = f.sender.phase() == Phase::Explore;
        let path = &mut self.paths[f.path];
        let decays_before = path.decays;
        let ev = f.balancer.select_ev(id, path, explore);
        self.counters.decays += path.decays - decays_before;
        if !explore {
            self.counters.steady_sends += 1;
        }
        let size = f.sender.size_of(seq);
        let is_retx = f.sender.on_sent(seq, now);
        let mut pkt = Packet::data(id, seq, size, f.sender.src, f.sender.dst, f.sender.class);
        pkt.ev = ev;
        pkt.entropy = ev.to_header(&self.widths);
        pkt.adaptive = f.balancer.kind().adaptive();
        pkt.sent_at = now;
        self.counters.data_pkts_sent += 1;
        self.counters.data_bytes_sent += size as u64;
        if is_retx {
            self.counters.retransmits += 1;
        }
        if !f.rto_pending {
            f.rto_pending = true;
            self.queue.schedule(now + self.rto, Ev::Rto(id));
        }
        pkt
    }

    fn on_rto(&mut self, id: u32, now: SimTime) {
        let f = &mut self.flows[id as usize];
        f.rto_pending = false;
        if f.done {
            return;
        }
        let before = f.sender.timeouts;
        let next = f.sender.on_rto(now, self.rto);
        self.counters.timeouts += f.sender.timeouts - before;
        if let Some(at) = next {
            f.rto_pending = true;
            self.queue.schedule(at.max(now), Ev::Rto(id));
        }
        if f.sender.timeouts > before {
            let src = f.sender.src;
            self.kick_nic(src, now);
        }
    }

    fn send_control(&mut self, mut pkt: Packet, now: SimTime) {
        let f = &self.flows[pkt.flow as usize];
        let from = self.topo.hosts[pkt.src as usize].leaf;
        let to = self.topo.hosts[pkt.dst as usize].leaf;
        let counts = self.topo.uplink_counts(from, to);
        let rev = control_ev(pkt.flow, pkt.seq, &counts, self.salt);
        pkt.entropy = rev.to_header(&self.widths);
        pkt.adaptive = f.balancer.kind().adaptive();
        match pkt.kind {
            PacketKind::Ack => self.counters.acks_sent += 1,
            PacketKind::Nack => self.counters.nacks_sent += 1,
            PacketKind::Data => unreachable!("control packets only"),
        }
        let host = pkt.src;
        self.nics[host as usize].ctl.push_back(pkt);
        self.kick_nic(host, now);
    }

    fn host_arrive(&mut self, host: u32, pkt: Packet, now: SimTime) {
        let Some(f) = self.flows.get_mut(pkt.flow as usize) else {
            self.counters.unknown_feedback += 1;
            return;
        };
        match pkt.kind {
            PacketKind::Data => {
                debug_assert_eq!(host, f.sender.dst);
                if !pkt.trimmed {
                    self.counters.delivered_bytes += pkt.size as u64;
                }
                let dups = f.receiver.duplicates;
                let action = f.receiver.on_data(&pkt, now, self.cfg.transport.ack_coalesce);
                self.counters.duplicate_pkts += f.receiver.duplicates - dups;
                match action {
                    ReceiveAction::None => {}
                    ReceiveAction::ArmTimer(epoch) => {
                        let at = now + SimTime(self.cfg.transport.coalesce_timeout_ns);
                        self.queue.schedule(at, Ev::Coalesce { flow: pkt.flow, epoch });
                    }
                    ReceiveAction::Send(ctl) => {
                        // A full batch also supersedes any armed timer via the epoch.
                        self.send_control(ctl, now);
                    }
                }
            }
            PacketKind::Ack | PacketKind::Nack => {
                debug_assert_eq!(host, f.sender.src);
                if f.done {
                    return;
                }
                let path = &mut self.paths[f.path];
                f.balancer.on_feedback(path, &pkt);
                if pkt.kind == PacketKind::Nack {
                    f.sender.on_nack(pkt.seq);
                } else {
                    if pkt.ecn {
                        self.counters.ecn_acks += 1;
                    }
                    f.sender.on_ack(&pkt, now, self.rtt);
                    if f.sender.is_complete() {
                        f.done = true;
                        self.remaining -= 1;
                        self.last_ack = now;
                    }
                }
                let src = f.sender.src;
                self.kick_nic(src, now);
            }
        }
    }

    fn switch_arrive(&mut self, sw: usize, pkt: Packet, now: SimTime) {
        let port = match self.forward(sw, &pkt) {
            Ok(p) => p,
            Err(_) => {
                // No live route: the fabric blackholes the packet.
                self.count_loss(&pkt, pkt.size);
                return;
            }
        };
        let size = pkt.size;
        let intact = pkt.kind == PacketKind::Data && !pkt.trimmed;
        if self.cfg.port_bytes && pkt.kind == PacketKind::Data {
            // Offered load: what the balancer routed here, before any trim.
            let key = (pkt.flow, self.topo.switches[sw].node.0, port);
            *self.port_bytes.entry(key).or_insert(0) += size as u64;
        }
        let outcome = self.ports[sw][port as usize].enqueue(pkt, now, &self.thresholds, &self.cfg.scheduler);
        match outcome {
            EnqueueOutcome::Queued => {}
            EnqueueOutcome::Trimmed => {
                self.counters.trims += 1;
                self.counters.trimmed_bytes += size as u64;
            }
            EnqueueOutcome::Dropped => {
                if intact {
                    self.counters.trims += 1;
                    self.counters.trimmed_bytes += size as u64;
                    self.counters.header_drops += 1;
                } else {
                    self.counters.control_drops += 1;
                }
            }
        }
        self.start_port(sw, port, now);
    }

    fn count_loss(&mut self, pkt: &Packet, size: u32) {
        if pkt.kind == PacketKind::Data && !pkt.trimmed {
            self.counters.trimmed_bytes += size as u64;
            self.counters.header_drops += 1;
        } else {
            self.counters.control_drops += 1;
        }
    }

    /// Output port for `pkt` at switch `sw`.
    pub fn forward(&mut self, sw: usize, pkt: &Packet) -> Result<u16, TopologyError> {
        let dst_leaf = self.topo.host(pkt.dst)?.leaf;
        if self.topo.is_below(sw, dst_leaf) {
            return self.topo.route_down(sw, pkt.dst);
        }
        if pkt.adaptive {
            let cands: Vec<u16> = self.topo.live_uplinks(sw, dst_leaf).collect();
            return least_occupied(&self.ports[sw], &cands, &mut self.ar_rng[sw]).ok_or(TopologyError::EmptySelector);
        }
        let tier = self.topo.switches[sw].tier as usize;
        let part = header_part(pkt.entropy, &self.widths, tier - 1) as usize;
        let (port, remapped) = self.topo.uplink_port(sw, dst_leaf, part).ok_or(TopologyError::EmptySelector)?;
        if remapped {
            self.counters.remaps += 1;
        }
        Ok(port)
    }

    fn start_port(&mut self, sw: usize, port: u16, now: SimTime) {
        let p = &mut self.ports[sw][port as usize];
        if p.busy {
            return;
        }
        let Some(pkt) = p.dequeue(now, &self.thresholds, &self.cfg.scheduler, &mut self.red_rng[sw]) else {
            return;
        };
        p.busy = true;
        let link = self.topo.switches[sw].ports[port as usize];
        let done = self.transmit(link, pkt, now);
        self.queue.schedule(done, Ev::PortFree { sw: sw as u32, port });
    }

    fn sample(&mut self, now: SimTime) {
        for (sw, ports) in self.ports.iter().enumerate() {
            let node = self.topo.switches[sw].node.0;
            for (pi, p) in ports.iter().enumerate() {
                for c in 0..CLASSES {
                    let q = p.class_queue(c);
                    if !q.is_empty() {
                        self.samples.push(QueueSample {
                            time_ns: now.as_nanos(),
                            switch: node,
                            port: pi as u16,
                            class: if c == 0 { TrafficClass::Sprayed } else { TrafficClass::Ecmp },
                            pkts: q.len(),
                            bytes: q.bytes(),
                        });
                    }
                }
            }
        }
        if self.remaining > 0 {
            if let Some(p) = self.cfg.queue_sample {
                self.queue.schedule(now + p, Ev::Sample);
            }
        }
    }

    /// Builds the run summary from the current state.
    pub fn summary(&self) -> Result<RunSummary, NetworkError> {
        let now = if self.queue.is_empty() { self.queue.now() } else { self.cfg.deadline };
        let end = if self.remaining == 0 { self.last_ack } else { now };
        let flows = self
            .flows
            .iter()
            .map(|f| {
                let start = f.sender.first_send.unwrap_or(f.sender.start);
                let end_ns = f.receiver.completed_at.map(SimTime::as_nanos);
                FlowRecord {
                    flow: f.sender.id,
                    class: f.sender.class,
                    src: f.sender.src,
                    dst: f.sender.dst,
                    bytes: f.sender.bytes,
                    start_ns: start.as_nanos(),
                    end_ns,
                    fct_ns: end_ns.map(|e| e - start.as_nanos()).or((f.sender.packets() == 0).then_some(0)),
                    ideal_ns: f.ideal.as_nanos(),
                    retransmits: f.sender.retransmits,
                    timeouts: f.sender.timeouts,
                    trims_seen: f.receiver.trims_seen,
                    residual_pkts: f.receiver.missing(),
                }
            })
            .collect();
        let mut ports = Vec::new();
        let mut counters = self.counters;
        counters.events = self.queue.dispatched();
        counters.skipped_draws = self.paths.iter().map(|p| p.skipped).sum();
        counters.fallbacks = self.paths.iter().map(|p| p.fallbacks).sum();
        for (sw, sp) in self.ports.iter().enumerate() {
            let s = &self.topo.switches[sw];
            for (pi, p) in sp.iter().enumerate() {
                counters.ecn_marks += p.stats.marked;
                ports.push(PortRecord {
                    switch: s.node.0,
                    tier: s.tier,
                    port: pi as u16,
                    upward: s.uplinks.contains(&(pi as u16)),
                    max_pkts: p.stats.max_pkts,
                    max_bytes: p.stats.max_bytes,
                    avg_pkts: p.time_average_pkts(end),
                    tx_bytes: p.stats.tx_bytes.iter().sum(),
                    tx_pkts: p.stats.tx_pkts,
                    trimmed: p.stats.trimmed,
                    marked: p.stats.marked,
                    dropped: p.stats.dropped,
                });
            }
        }
        let port_bytes = self
            .port_bytes
            .iter()
            .map(|(&(flow, switch, port), &bytes)| PortBytes {
                flow,
                switch,
                port,
                bytes,
            })
            .collect();
        Ok(RunSummary::from_records(
            flows,
            ports,
            counters,
            port_bytes,
            end.as_nanos(),
            self.last_ack.as_nanos(),
        )?)
    }
}

/// Builds, runs and summarizes in one call.
pub fn simulate(topo: Topology, flows: &[FlowSpec], cfg: RunConfig) -> Result<(RunSummary, Vec<QueueSample>), NetworkError> {
    let mut net = Network::new(topo, flows, cfg)?;
    net.run();
    let summary = net.summary()?;
    Ok((summary, std::mem::take(&mut net.samples)))
}
