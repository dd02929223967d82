//! Scenario files: schema, validation, workload and impairment generators.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::balancer::BalancerKind;
use crate::metrics::{write_figdata, write_queue_samples, FigPoint, MetricsError, QueueSample, RunSummary};
use crate::network::{simulate, FlowSpec, HistoryConfig, NetworkError, RunConfig, ScheduledImpairment, ThresholdConfig};
use crate::packet::TrafficClass;
use crate::sim::{derive_rng, purpose, RngStream, SimTime};
use crate::switch::SchedulerPolicy;
use crate::topology::{Impairment, LinkSelector, Topology, TopologyParams};
use crate::transport::TransportConfig;

pub const SCHEMA_VERSION: u32 = 1;
pub const BANDWIDTHS_GBPS: [u64; 3] = [100, 400, 800];
pub const FLOW_SIZES_MIB: [u64; 5] = [2, 4, 8, 16, 32];
pub const MIB: u64 = 1 << 20;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid scenario: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error(transparent)]
    Run(#[from] NetworkError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub field: String,
    pub reason: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.reason)
    }
}

fn violation(field: &str, reason: impl ToString) -> Violation {
    Violation {
        field: field.into(),
        reason: reason.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub bandwidth_gbps: u64,
    pub delay_ns: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "pattern", rename_all = "snake_case", deny_unknown_fields)]
pub enum Traffic {
    /// Every host sends one flow to a distinct host.
    Permutation { flow_bytes: u64 },
    /// Flows from hosts under one leaf to hosts under another, with one
    /// uplink of the source leaf losing `degradation` of its bandwidth.
    LeafPair {
        flow_bytes: u64,
        #[serde(default = "eighteen")]
        flows: usize,
        #[serde(default)]
        src_leaf: usize,
        #[serde(default = "one_usize")]
        dst_leaf: usize,
        #[serde(default)]
        degraded_uplink: usize,
        #[serde(default)]
        degradation: f64,
    },
    /// Several permutations with a fraction of flows in the ECMP class.
    Mixed {
        flow_bytes: u64,
        #[serde(default = "mixed_flows")]
        flows: usize,
        #[serde(default = "one_percent")]
        ecmp_fraction: f64,
    },
    Custom { flows: Vec<FlowSpec> },
}

fn eighteen() -> usize {
    18
}
fn one_usize() -> usize {
    1
}
fn mixed_flows() -> usize {
    1024
}
fn one_percent() -> f64 {
    0.01
}

impl Traffic {
    pub fn flow_bytes(&self) -> Option<u64> {
        match self {
            Traffic::Permutation { flow_bytes } | Traffic::LeafPair { flow_bytes, .. } | Traffic::Mixed { flow_bytes, .. } => {
                Some(*flow_bytes)
            }
            Traffic::Custom { .. } => None,
        }
    }

    pub fn set_flow_bytes(&mut self, bytes: u64) {
        match self {
            Traffic::Permutation { flow_bytes } | Traffic::LeafPair { flow_bytes, .. } | Traffic::Mixed { flow_bytes, .. } => {
                *flow_bytes = bytes
            }
            Traffic::Custom { flows } => flows.iter_mut().for_each(|f| f.bytes = bytes),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ImpairmentSpec {
    /// Fail `count` randomly chosen leaf uplink cables.
    FailRandom {
        count: usize,
        #[serde(default)]
        at_ns: u64,
    },
    /// Degrade a fraction of fabric cables to `to_gbps`.
    DegradeRandom {
        fraction_of_links: f64,
        to_gbps: u64,
        #[serde(default)]
        at_ns: u64,
    },
    Fail {
        selector: LinkSelector,
        #[serde(default)]
        at_ns: u64,
    },
    /// Serve at `capacity` times nominal bandwidth.
    Degrade {
        selector: LinkSelector,
        capacity: f64,
        #[serde(default)]
        at_ns: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassBalancers {
    pub sprayed: BalancerKind,
    #[serde(default = "ecmp")]
    pub ecmp: BalancerKind,
}

fn ecmp() -> BalancerKind {
    BalancerKind::Ecmp
}

impl Default for ClassBalancers {
    fn default() -> Self {
        Self {
            sprayed: BalancerKind::Prime,
            ecmp: BalancerKind::Ecmp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Measurement {
    /// Queue sampling period; `None` disables sampling.
    pub queue_sample_ns: Option<u64>,
    /// Record DATA bytes per (flow, switch port).
    pub port_bytes: bool,
}

impl Default for Measurement {
    fn default() -> Self {
        Self {
            queue_sample_ns: Some(10_000),
            port_bytes: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub version: u32,
    #[serde(default)]
    pub name: String,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub topology: TopologyParams,
    pub link: LinkSpec,
    pub traffic: Traffic,
    #[serde(default)]
    pub balancer: ClassBalancers,
    #[serde(default)]
    pub impairments: Vec<ImpairmentSpec>,
    #[serde(default)]
    pub scheduler: SchedulerPolicy,
    #[serde(default)]
    pub transport: TransportConfig,
    #[serde(default)]
    pub history: HistoryConfig,
    #[serde(default)]
    pub thresholds: ThresholdConfig,
    /// Entropy part count; must equal tiers - 1 when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entropy_parts: Option<usize>,
    #[serde(default)]
    pub measurement: Measurement,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deadline_ns: Option<u64>,
    /// Allow bandwidths and flow sizes outside the standard grid.
    #[serde(default)]
    pub custom: bool,
}

fn default_seed() -> u64 {
    1
}

/// A scenario resolved into concrete simulator inputs.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub topology: Topology,
    pub flows: Vec<FlowSpec>,
    pub config: RunConfig,
}

/// Output of one scenario run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub summary: RunSummary,
    pub samples: Vec<QueueSample>,
}

impl RunOutput {
    /// Writes the run's result files into `dir`: summary.csv, flows.csv,
    /// ports.csv, queues.csv, port_bytes.csv when recorded, and figdata/.
    pub fn write_dir(&self, dir: &Path) -> Result<(), MetricsError> {
        std::fs::create_dir_all(dir).map_err(|source| MetricsError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        let s = &self.summary;
        s.write_summary_csv(&dir.join("summary.csv"))?;
        s.write_flows_csv(&dir.join("flows.csv"))?;
        s.write_ports_csv(&dir.join("ports.csv"))?;
        write_queue_samples(&dir.join("queues.csv"), &self.samples)?;
        if !s.port_bytes.is_empty() {
            s.write_port_bytes_csv(&dir.join("port_bytes.csv"))?;
        }
        let fig = dir.join("figdata");
        let fct: Vec<FigPoint> = s
            .flows
            .iter()
            .filter_map(|f| f.fct_ns.map(|t| FigPoint::new(f.flow, t as f64 / f.ideal_ns.max(1) as f64, f.class.as_str())))
            .collect();
        write_figdata(&fig, "flow_ratio", &fct)?;
        // Sorted per-port max depths: an empirical CDF of buffer use.
        let mut depths = s.port_max_depths();
        depths.sort_unstable();
        let n = depths.len().max(1) as f64;
        let cdf: Vec<FigPoint> = depths
            .iter()
            .enumerate()
            .map(|(i, &d)| FigPoint::new(d, (i + 1) as f64 / n, "port_max_pkts"))
            .collect();
        write_figdata(&fig, "queue_cdf", &cdf)
    }
}

impl ScenarioSpec {
    /// Parses JSON; errors name the offending field path.
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| ScenarioError::Parse {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn bandwidth_bps(&self) -> u64 {
        self.link.bandwidth_gbps * 1_000_000_000
    }

    /// Schema and semantic checks, all violations at once.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let mut v = Vec::new();
        if self.version != SCHEMA_VERSION {
            v.push(violation("version", format!("unsupported version {}, expected {SCHEMA_VERSION}", self.version)));
        }
        let parts = self.topology.tiers.saturating_sub(1) as usize;
        if let Some(p) = self.entropy_parts {
            if p != parts {
                v.push(violation(
                    "entropy_parts",
                    format!("a {}-tier fabric needs {parts} entropy part(s), got {p}", self.topology.tiers),
                ));
            }
        }
        if self.link.bandwidth_gbps == 0 {
            v.push(violation("link.bandwidth_gbps", "must be positive"));
        } else if !self.custom && !BANDWIDTHS_GBPS.contains(&self.link.bandwidth_gbps) {
            v.push(violation("link.bandwidth_gbps", format!("expected one of {BANDWIDTHS_GBPS:?} (or set custom)")));
        }
        if let Some(b) = self.traffic.flow_bytes() {
            if !self.custom && !FLOW_SIZES_MIB.iter().any(|m| m * MIB == b) {
                v.push(violation("traffic.flow_bytes", format!("expected one of {FLOW_SIZES_MIB:?} MiB (or set custom)")));
            }
        }
        if self.transport.mtu < 128 || self.transport.ack_coalesce == 0 || !(self.transport.window_bdp > 0.0) {
            v.push(violation("transport", "mtu >= 128, ack_coalesce >= 1 and window_bdp > 0 required"));
        }
        if let Err(e) = self.scheduler.validate() {
            v.push(violation("scheduler", e));
        }
        let th = &self.thresholds;
        if !(0.0 <= th.kmin_bdp && th.kmin_bdp < th.kmax_bdp && th.trim_bdp > 0.0 && th.control_cap_bdp >= th.trim_bdp) {
            v.push(violation("thresholds", "need 0 <= kmin < kmax, trim > 0 and control_cap >= trim"));
        }
        match &self.traffic {
            Traffic::LeafPair { degradation, flows, .. } => {
                if !(0.0..1.0).contains(degradation) {
                    v.push(violation("traffic.degradation", format!("{degradation} outside [0, 1); use a failure instead")));
                }
                if *flows == 0 {
                    v.push(violation("traffic.flows", "must be positive"));
                }
            }
            Traffic::Mixed { ecmp_fraction, flows, .. } => {
                if !(0.0..=1.0).contains(ecmp_fraction) {
                    v.push(violation("traffic.ecmp_fraction", "outside [0, 1]"));
                }
                if *flows == 0 {
                    v.push(violation("traffic.flows", "must be positive"));
                }
            }
            _ => {}
        }
        for (i, imp) in self.impairments.iter().enumerate() {
            match imp {
                ImpairmentSpec::DegradeRandom {
                    fraction_of_links,
                    to_gbps,
                    ..
                } => {
                    if !(0.0..=1.0).contains(fraction_of_links) {
                        v.push(violation(&format!("impairments[{i}].fraction_of_links"), "outside [0, 1]"));
                    }
                    if *to_gbps == 0 || *to_gbps >= self.link.bandwidth_gbps {
                        v.push(violation(&format!("impairments[{i}].to_gbps"), "must be below the nominal bandwidth"));
                    }
                }
                ImpairmentSpec::Degrade { capacity, .. }
                    if !(*capacity > 0.0 && *capacity < 1.0) => {
                        v.push(violation(&format!("impairments[{i}].capacity"), format!("{capacity} outside (0, 1)")));
                    }
                _ => {}
            }
        }
        if v.is_empty() {
            if let Err(e) = self.resolve(None) {
                match e {
                    ScenarioError::Invalid(mut more) => v.append(&mut more),
                    other => v.push(violation("scenario", other)),
                }
            }
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Invalid(v))
        }
    }

    /// Builds topology, flows and run configuration. `seed` overrides the file's seed.
    pub fn resolve(&self, seed: Option<u64>) -> Result<Resolved, ScenarioError> {
        let seed = seed.unwrap_or(self.seed);
        let delay = SimTime(self.link.delay_ns);
        let topology = Topology::build(&self.topology, self.bandwidth_bps(), delay)
            .map_err(|e| ScenarioError::Invalid(vec![violation("topology", e)]))?;
        let mut traffic_rng = derive_rng(seed, 0, purpose::TRAFFIC);
        let mut flows = match &self.traffic {
            Traffic::Permutation { flow_bytes } => gen_permutation(topology.n_hosts(), *flow_bytes, &mut traffic_rng)?,
            Traffic::LeafPair {
                flow_bytes,
                flows,
                src_leaf,
                dst_leaf,
                ..
            } => gen_leaf_pair(&topology, *flows, *src_leaf, *dst_leaf, *flow_bytes)?,
            Traffic::Mixed {
                flow_bytes,
                flows,
                ecmp_fraction,
            } => gen_mixed(topology.n_hosts(), *flows, *ecmp_fraction, *flow_bytes, &mut traffic_rng)?,
            Traffic::Custom { flows } => flows.clone(),
        };
        for (i, f) in flows.iter().enumerate() {
            if f.src as usize >= topology.n_hosts() || f.dst as usize >= topology.n_hosts() || f.src == f.dst {
                return Err(ScenarioError::Invalid(vec![violation(
                    &format!("traffic.flows[{i}]"),
                    "hosts must exist and differ",
                )]));
            }
        }
        flows.sort_by_key(|f| (f.start_ns, f.src, f.dst));
        let mut impairments = Vec::new();
        if let Traffic::LeafPair {
            src_leaf,
            degraded_uplink,
            degradation,
            ..
        } = &self.traffic
        {
            if *degradation > 0.0 {
                impairments.push(ScheduledImpairment {
                    at: SimTime::ZERO,
                    selector: LinkSelector::LeafUplink {
                        leaf: *src_leaf,
                        uplink: *degraded_uplink,
                    },
                    impairment: Impairment::Degraded(1.0 - degradation),
                });
            }
        }
        let mut imp_rng = derive_rng(seed, 0, purpose::IMPAIRMENT);
        for (i, spec) in self.impairments.iter().enumerate() {
            let field = format!("impairments[{i}]");
            let mut evs = gen_impairment_schedule(&topology, spec, self.bandwidth_bps(), &mut imp_rng)
                .map_err(|r| ScenarioError::Invalid(vec![violation(&field, r)]))?;
            impairments.append(&mut evs);
        }
        // Dry-run the selectors so bad ones surface before the run starts.
        let mut probe = topology.clone();
        for (i, imp) in impairments.iter().enumerate() {
            probe
                .apply_impairment(&imp.selector, imp.impairment)
                .map_err(|e| ScenarioError::Invalid(vec![violation(&format!("impairments[{i}]"), e)]))?;
        }
        let config = RunConfig {
            seed,
            transport: self.transport.clone(),
            balancers: [self.balancer.sprayed, self.balancer.ecmp],
            scheduler: self.scheduler.clone(),
            thresholds: self.thresholds,
            history: self.history,
            impairments,
            queue_sample: self.measurement.queue_sample_ns.filter(|&p| p > 0).map(SimTime),
            port_bytes: self.measurement.port_bytes,
            deadline: SimTime(self.deadline_ns.unwrap_or(1_000_000_000)),
        };
        Ok(Resolved {
            topology,
            flows,
            config,
        })
    }

    /// Resolves and runs the scenario.
    pub fn run(&self, seed: Option<u64>) -> Result<RunOutput, ScenarioError> {
        let r = self.resolve(seed)?;
        let (summary, samples) = simulate(r.topology, &r.flows, r.config)?;
        Ok(RunOutput { summary, samples })
    }
}

/// One flow per host to a uniformly random other host (a derangement).
pub fn gen_permutation(hosts: usize, bytes: u64, rng: &mut RngStream) -> Result<Vec<FlowSpec>, ScenarioError> {
    if hosts < 2 {
        return Err(ScenarioError::Invalid(vec![violation("topology.hosts", "permutation traffic needs >= 2 hosts")]));
    }
    let perm = derangement(hosts, rng);
    Ok(perm
        .iter()
        .enumerate()
        .map(|(src, &dst)| FlowSpec {
            src: src as u32,
            dst: dst as u32,
            bytes,
            start_ns: 0,
            class: TrafficClass::Sprayed,
        })
        .collect())
}

/// Uniform random derangement by rejection.
pub fn derangement(n: usize, rng: &mut RngStream) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    loop {
        crate::entropy::shuffle_in_place(&mut p, rng);
        if p.iter().enumerate().all(|(i, &d)| i != d) {
            return p;
        }
    }
}

/// `n_flows` flows from the hosts of `src_leaf` to the hosts of `dst_leaf`,
/// assigned round-robin on both ends.
pub fn gen_leaf_pair(
    topo: &Topology,
    n_flows: usize,
    src_leaf: usize,
    dst_leaf: usize,
    bytes: u64,
) -> Result<Vec<FlowSpec>, ScenarioError> {
    let under = |leaf: usize| -> Vec<u32> {
        topo.hosts
            .iter()
            .enumerate()
            .filter(|(_, h)| h.leaf == leaf)
            .map(|(i, _)| i as u32)
            .collect()
    };
    let (s, d) = (under(src_leaf), under(dst_leaf));
    if src_leaf == dst_leaf || s.is_empty() || d.is_empty() {
        return Err(ScenarioError::Invalid(vec![violation(
            "traffic",
            "leaf pair needs two distinct populated leaves",
        )]));
    }
    Ok((0..n_flows)
        .map(|i| FlowSpec {
            src: s[i % s.len()],
            dst: d[i % d.len()],
            bytes,
            start_ns: 0,
            class: TrafficClass::Sprayed,
        })
        .collect())
}

/// `total` flows built from stacked permutations, with
/// `round(total * ecmp_fraction)` of them, chosen at random, in the ECMP class.
pub fn gen_mixed(
    hosts: usize,
    total: usize,
    ecmp_fraction: f64,
    bytes: u64,
    rng: &mut RngStream,
) -> Result<Vec<FlowSpec>, ScenarioError> {
    let mut flows = Vec::with_capacity(total);
    while flows.len() < total {
        let mut p = gen_permutation(hosts, bytes, rng)?;
        p.truncate(total - flows.len());
        flows.append(&mut p);
    }
    let n_ecmp = (total as f64 * ecmp_fraction).round() as usize;
    let mut idx: Vec<usize> = (0..total).collect();
    crate::entropy::shuffle_in_place(&mut idx, rng);
    for &i in &idx[..n_ecmp] {
        flows[i].class = TrafficClass::Ecmp;
    }
    Ok(flows)
}

/// Resolves one impairment spec into concrete link events.
pub fn gen_impairment_schedule(
    topo: &Topology,
    spec: &ImpairmentSpec,
    nominal_bps: u64,
    rng: &mut RngStream,
) -> Result<Vec<ScheduledImpairment>, String> {
    let pick = |pool: Vec<crate::topology::LinkId>, n: usize, rng: &mut RngStream| -> Result<Vec<_>, String> {
        if n > pool.len() {
            return Err(format!("asked for {n} links but only {} exist", pool.len()));
        }
        let mut pool = pool;
        crate::entropy::shuffle_in_place(&mut pool, rng);
        pool.truncate(n);
        pool.sort();
        Ok(pool)
    };
    Ok(match spec {
        ImpairmentSpec::FailRandom { count, at_ns } => pick(topo.leaf_uplink_cables(), *count, rng)?
            .into_iter()
            .map(|l| ScheduledImpairment {
                at: SimTime(*at_ns),
                selector: LinkSelector::Links(vec![l]),
                impairment: Impairment::Failed,
            })
            .collect(),
        ImpairmentSpec::DegradeRandom {
            fraction_of_links,
            to_gbps,
            at_ns,
        } => {
            let pool = topo.fabric_cables();
            let n = (pool.len() as f64 * fraction_of_links).round() as usize;
            let capacity = (*to_gbps * 1_000_000_000) as f64 / nominal_bps as f64;
            pick(pool, n, rng)?
                .into_iter()
                .map(|l| ScheduledImpairment {
                    at: SimTime(*at_ns),
                    selector: LinkSelector::Links(vec![l]),
                    impairment: Impairment::Degraded(capacity),
                })
                .collect()
        }
        ImpairmentSpec::Fail { selector, at_ns } => vec![ScheduledImpairment {
            at: SimTime(*at_ns),
            selector: selector.clone(),
            impairment: Impairment::Failed,
        }],
        ImpairmentSpec::Degrade {
            selector,
            capacity,
            at_ns,
        } => vec![ScheduledImpairment {
            at: SimTime(*at_ns),
            selector: selector.clone(),
            impairment: Impairment::Degraded(*capacity),
        }],
    })
}

/// Rate-proportional share of a degraded uplink among `uplinks` equal ones.
pub fn degraded_share_oracle(degradation: f64, uplinks: usize) -> f64 {
    (1.0 - degradation) / (uplinks as f64 - degradation)
}
