//! FatTree construction, upward port tables and link impairments.
//!
//! Node ids are dense: hosts occupy `0..hosts`, switches follow. Tier-1
//! switches (leaves / edges) are additionally numbered by a dense leaf index
//! which is what routing state is keyed on.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LinkId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl LinkId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("unsupported tier count {0}: only 2- and 3-tier FatTrees are modeled")]
    Tiers(u8),
    #[error("switch_ports must be even and at least 2, got {0}")]
    Ports(usize),
    #[error("hosts ({hosts}) must be a positive multiple of hosts per {unit} ({per})")]
    HostMultiple { hosts: usize, per: usize, unit: &'static str },
    #[error("{what} ({count}) exceeds the {limit} ports available on a switch")]
    Radix { what: &'static str, count: usize, limit: usize },
    #[error("oversubscription ratio must be >= 1 and leave at least one uplink, got {0}")]
    Oversubscription(f64),
    #[error("override needs at least one leaf, one spine and one host per leaf")]
    EmptyOverride,
    #[error("unknown host {0}")]
    UnknownHost(u32),
    #[error("destination host {host} is not below switch {switch}")]
    NotBelow { switch: u32, host: u32 },
    #[error("source and destination are the same host {0}")]
    SameHost(u32),
    #[error("link selector matched no links")]
    EmptySelector,
    #[error("degradation fraction {0} outside (0, 1)")]
    DegradeRange(f64),
    #[error("link {0} does not exist")]
    UnknownLink(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "state", content = "fraction")]
pub enum LinkHealth {
    Up,
    Failed,
    /// Serving at this fraction of nominal bandwidth.
    Degraded(f64),
}

#[derive(Debug, Clone)]
pub struct DirectedLink {
    pub from: NodeId,
    pub to: NodeId,
    pub nominal_bps: u64,
    pub delay: SimTime,
    pub health: LinkHealth,
    /// The opposite direction of the same cable.
    pub reverse: LinkId,
}

impl DirectedLink {
    pub fn is_up(&self) -> bool {
        !matches!(self.health, LinkHealth::Failed)
    }

    /// Current serving rate; zero when failed.
    pub fn rate_bps(&self) -> u64 {
        match self.health {
            LinkHealth::Up => self.nominal_bps,
            LinkHealth::Failed => 0,
            LinkHealth::Degraded(f) => ((self.nominal_bps as f64) * f).round() as u64,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Host {
    pub node: NodeId,
    pub leaf: usize,
    /// Port on the leaf switch facing this host.
    pub leaf_port: u16,
    /// Access link host -> leaf.
    pub uplink: LinkId,
}

#[derive(Debug, Clone)]
pub struct Switch {
    pub node: NodeId,
    /// 1 = leaf/edge, 2 = spine/aggregation, 3 = core.
    pub tier: u8,
    pub pod: Option<usize>,
    pub leaf_index: Option<usize>,
    /// Outgoing link behind each port.
    pub ports: Vec<LinkId>,
    /// Uplink table: port indices of upward-facing ports, in stable order.
    pub uplinks: Vec<u16>,
    /// Downward port toward each leaf that lies below this switch.
    pub down_leaf_port: Vec<Option<u16>>,
}

#[derive(Debug, Clone)]
pub enum NodeRef<'a> {
    Host(&'a Host),
    Switch(&'a Switch),
}

/// Irregular 2-tier layout (e.g. 15 leaves and 7 spines) given explicitly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoTierOverride {
    pub leaves: usize,
    pub spines: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyParams {
    pub tiers: u8,
    pub hosts: usize,
    pub switch_ports: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub override_layout: Option<TwoTierOverride>,
    #[serde(default = "one")]
    pub oversubscription: f64,
}

fn one() -> f64 {
    1.0
}

impl TopologyParams {
    pub fn new(tiers: u8, hosts: usize, switch_ports: usize) -> Self {
        Self {
            tiers,
            hosts,
            switch_ports,
            override_layout: None,
            oversubscription: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Topology {
    pub tiers: u8,
    pub hosts: Vec<Host>,
    pub switches: Vec<Switch>,
    pub links: Vec<DirectedLink>,
    /// Switch indices of tier-1 switches, by leaf index.
    pub leaves: Vec<usize>,
    pub nominal_bps: u64,
    pub link_delay: SimTime,
    /// `live_up[switch][leaf]`: positions in `switch.uplinks` usable toward `leaf`.
    live_up: Vec<Vec<Vec<u16>>>,
}

/// Builds a FatTree with the standard non-oversubscribed construction.
pub fn build_fattree(
    tiers: u8,
    hosts: usize,
    switch_ports: usize,
    bandwidth_bps: u64,
    delay: SimTime,
) -> Result<Topology, TopologyError> {
    Topology::build(&TopologyParams::new(tiers, hosts, switch_ports), bandwidth_bps, delay)
}

struct Builder {
    hosts: Vec<Host>,
    switches: Vec<Switch>,
    links: Vec<DirectedLink>,
    n_hosts: usize,
    bps: u64,
    delay: SimTime,
}

impl Builder {
    fn switch_node(&self, sw: usize) -> NodeId {
        NodeId((self.n_hosts + sw) as u32)
    }

    fn add_switch(&mut self, tier: u8, pod: Option<usize>, leaf_index: Option<usize>) -> usize {
        let idx = self.switches.len();
        self.switches.push(Switch {
            node: self.switch_node(idx),
            tier,
            pod,
            leaf_index,
            ports: Vec::new(),
            uplinks: Vec::new(),
            down_leaf_port: Vec::new(),
        });
        idx
    }

    fn cable(&mut self, a: NodeId, b: NodeId) -> (LinkId, LinkId) {
        let ab = LinkId(self.links.len() as u32);
        let ba = LinkId(ab.0 + 1);
        for (from, to, rev) in [(a, b, ba), (b, a, ab)] {
            self.links.push(DirectedLink {
                from,
                to,
                nominal_bps: self.bps,
                delay: self.delay,
                health: LinkHealth::Up,
                reverse: rev,
            });
        }
        (ab, ba)
    }

    fn attach_host(&mut self, leaf_sw: usize, leaf: usize) {
        let node = NodeId(self.hosts.len() as u32);
        let sw_node = self.switches[leaf_sw].node;
        let (up, down) = self.cable(node, sw_node);
        let sw = &mut self.switches[leaf_sw];
        let port = sw.ports.len() as u16;
        sw.ports.push(down);
        self.hosts.push(Host {
            node,
            leaf,
            leaf_port: port,
            uplink: up,
        });
    }

    /// Cable lower switch `lo` up to `hi`; returns the port index at `hi`.
    fn connect_up(&mut self, lo: usize, hi: usize) -> u16 {
        let (lo_node, hi_node) = (self.switches[lo].node, self.switches[hi].node);
        let (up, down) = self.cable(lo_node, hi_node);
        let lo_sw = &mut self.switches[lo];
        let p = lo_sw.ports.len() as u16;
        lo_sw.ports.push(up);
        lo_sw.uplinks.push(p);
        let hi_sw = &mut self.switches[hi];
        let q = hi_sw.ports.len() as u16;
        hi_sw.ports.push(down);
        q
    }
}

impl Topology {
    pub fn build(params: &TopologyParams, bandwidth_bps: u64, delay: SimTime) -> Result<Self, TopologyError> {
        let ports = params.switch_ports;
        if ports < 2 || !ports.is_multiple_of(2) {
            return Err(TopologyError::Ports(ports));
        }
        match params.tiers {
            2 => Self::build_two_tier(params, bandwidth_bps, delay),
            3 => Self::build_three_tier(params, bandwidth_bps, delay),
            t => Err(TopologyError::Tiers(t)),
        }
    }

    fn build_two_tier(params: &TopologyParams, bps: u64, delay: SimTime) -> Result<Self, TopologyError> {
        let ports = params.switch_ports;
        let (n_leaves, n_spines, per_leaf): (usize, usize, Vec<usize>) = match params.override_layout {
            Some(o) => {
                if o.leaves == 0 || o.spines == 0 || params.hosts < o.leaves {
                    return Err(TopologyError::EmptyOverride);
                }
                let base = params.hosts / o.leaves;
                let extra = params.hosts % o.leaves;
                let per: Vec<usize> = (0..o.leaves).map(|l| base + usize::from(l < extra)).collect();
                if per[0] + o.spines > ports {
                    return Err(TopologyError::Radix {
                        what: "leaf hosts plus uplinks",
                        count: per[0] + o.spines,
                        limit: ports,
                    });
                }
                (o.leaves, o.spines, per)
            }
            None => {
                let r = params.oversubscription;
                if !(r >= 1.0) || !r.is_finite() {
                    return Err(TopologyError::Oversubscription(r));
                }
                let down = ((ports as f64) * r / (r + 1.0)).round() as usize;
                let up = ports - down;
                if up == 0 || down == 0 {
                    return Err(TopologyError::Oversubscription(r));
                }
                if params.hosts == 0 || !params.hosts.is_multiple_of(down) {
                    return Err(TopologyError::HostMultiple {
                        hosts: params.hosts,
                        per: down,
                        unit: "leaf",
                    });
                }
                (params.hosts / down, up, vec![down; params.hosts / down])
            }
        };
        if n_leaves > ports {
            return Err(TopologyError::Radix {
                what: "leaf count",
                count: n_leaves,
                limit: ports,
            });
        }
        let mut b = Builder {
            hosts: Vec::new(),
            switches: Vec::new(),
            links: Vec::new(),
            n_hosts: params.hosts,
            bps,
            delay,
        };
        let leaves: Vec<usize> = (0..n_leaves).map(|l| b.add_switch(1, None, Some(l))).collect();
        let spines: Vec<usize> = (0..n_spines).map(|_| b.add_switch(2, None, None)).collect();
        for (l, &sw) in leaves.iter().enumerate() {
            for _ in 0..per_leaf[l] {
                b.attach_host(sw, l);
            }
        }
        for &s in &spines {
            b.switches[s].down_leaf_port = vec![None; n_leaves];
        }
        for (l, &lsw) in leaves.iter().enumerate() {
            for &s in &spines {
                let q = b.connect_up(lsw, s);
                b.switches[s].down_leaf_port[l] = Some(q);
            }
        }
        Ok(Self::finish(b, 2, leaves))
    }

    fn build_three_tier(params: &TopologyParams, bps: u64, delay: SimTime) -> Result<Self, TopologyError> {
        let k = params.switch_ports;
        if params.override_layout.is_some() || params.oversubscription != 1.0 {
            return Err(TopologyError::Oversubscription(params.oversubscription));
        }
        let half = k / 2;
        let per_pod = half * half;
        if params.hosts == 0 || !params.hosts.is_multiple_of(per_pod) {
            return Err(TopologyError::HostMultiple {
                hosts: params.hosts,
                per: per_pod,
                unit: "pod",
            });
        }
        let pods = params.hosts / per_pod;
        if pods > k {
            return Err(TopologyError::Radix {
                what: "pod count",
                count: pods,
                limit: k,
            });
        }
        let mut b = Builder {
            hosts: Vec::new(),
            switches: Vec::new(),
            links: Vec::new(),
            n_hosts: params.hosts,
            bps,
            delay,
        };
        let n_leaves = pods * half;
        let mut leaves = Vec::with_capacity(n_leaves);
        for p in 0..pods {
            for e in 0..half {
                leaves.push(b.add_switch(1, Some(p), Some(p * half + e)));
            }
        }
        let mut aggs = Vec::with_capacity(pods * half);
        for p in 0..pods {
            for _ in 0..half {
                aggs.push(b.add_switch(2, Some(p), None));
            }
        }
        let cores: Vec<usize> = (0..half * half).map(|_| b.add_switch(3, None, None)).collect();
        for (l, &sw) in leaves.iter().enumerate() {
            for _ in 0..half {
                b.attach_host(sw, l);
            }
        }
        for &s in aggs.iter().chain(cores.iter()) {
            b.switches[s].down_leaf_port = vec![None; n_leaves];
        }
        // Edge -> aggregation within each pod.
        for p in 0..pods {
            for e in 0..half {
                let leaf = p * half + e;
                for a in 0..half {
                    let agg = aggs[p * half + a];
                    let q = b.connect_up(leaves[leaf], agg);
                    b.switches[agg].down_leaf_port[leaf] = Some(q);
                }
            }
        }
        // Aggregation a of every pod -> core group a.
        for p in 0..pods {
            for a in 0..half {
                let agg = aggs[p * half + a];
                for c in 0..half {
                    let core = cores[a * half + c];
                    let q = b.connect_up(agg, core);
                    for e in 0..half {
                        b.switches[core].down_leaf_port[p * half + e] = Some(q);
                    }
                }
            }
        }
        Ok(Self::finish(b, 3, leaves))
    }

    fn finish(b: Builder, tiers: u8, leaves: Vec<usize>) -> Self {
        let mut t = Topology {
            tiers,
            hosts: b.hosts,
            switches: b.switches,
            links: b.links,
            leaves,
            nominal_bps: b.bps,
            link_delay: b.delay,
            live_up: Vec::new(),
        };
        t.recompute_routes();
        t
    }

    pub fn n_hosts(&self) -> usize {
        self.hosts.len()
    }

    pub fn n_leaves(&self) -> usize {
        self.leaves.len()
    }

    pub fn switch_index(&self, node: NodeId) -> Option<usize> {
        node.index().checked_sub(self.hosts.len())
    }

    pub fn node(&self, node: NodeId) -> NodeRef<'_> {
        match self.switch_index(node) {
            Some(s) => NodeRef::Switch(&self.switches[s]),
            None => NodeRef::Host(&self.hosts[node.index()]),
        }
    }

    pub fn link(&self, id: LinkId) -> &DirectedLink {
        &self.links[id.index()]
    }

    pub fn host(&self, h: u32) -> Result<&Host, TopologyError> {
        self.hosts.get(h as usize).ok_or(TopologyError::UnknownHost(h))
    }

    pub fn leaf_switch(&self, leaf: usize) -> &Switch {
        &self.switches[self.leaves[leaf]]
    }

    /// Number of switches per tier, index 0 = tier 1.
    pub fn tier_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.tiers as usize];
        for s in &self.switches {
            c[s.tier as usize - 1] += 1;
        }
        c
    }

    /// Nominal uplink count of switches at each spraying tier (tier 1 .. tiers-1).
    pub fn nominal_uplinks(&self) -> Vec<usize> {
        (1..self.tiers)
            .map(|tier| {
                self.switches
                    .iter()
                    .filter(|s| s.tier == tier)
                    .map(|s| s.uplinks.len())
                    .max()
                    .unwrap_or(1)
            })
            .collect()
    }

    /// Bit width of each entropy header part, from the nominal uplink counts.
    pub fn part_widths(&self) -> Vec<u8> {
        self.nominal_uplinks().iter().map(|&l| crate::entropy::bits_for(l)).collect()
    }

    /// True when `leaf` is reached from switch `sw` by going down.
    pub fn is_below(&self, sw: usize, leaf: usize) -> bool {
        let s = &self.switches[sw];
        match s.leaf_index {
            Some(l) => l == leaf,
            None => s.down_leaf_port.get(leaf).copied().flatten().is_some(),
        }
    }

    /// Next switch behind port `port` of switch `sw`, if any.
    fn peer_switch(&self, sw: usize, port: u16) -> Option<usize> {
        let link = self.link(self.switches[sw].ports[port as usize]);
        self.switch_index(link.to)
    }

    fn reaches_down(&self, sw: usize, leaf: usize) -> bool {
        let s = &self.switches[sw];
        if s.leaf_index == Some(leaf) {
            return true;
        }
        let Some(port) = s.down_leaf_port.get(leaf).copied().flatten() else {
            return false;
        };
        let link = self.link(s.ports[port as usize]);
        link.is_up() && self.switch_index(link.to).is_some_and(|n| self.reaches_down(n, leaf))
    }

    /// Rebuilds the per-destination live uplink lists after a health change.
    pub fn recompute_routes(&mut self) {
        let n_leaves = self.leaves.len();
        let mut live = vec![vec![Vec::new(); n_leaves]; self.switches.len()];
        for tier in (1..=self.tiers).rev() {
            for sw in 0..self.switches.len() {
                if self.switches[sw].tier != tier {
                    continue;
                }
                for leaf in 0..n_leaves {
                    if self.is_below(sw, leaf) {
                        continue;
                    }
                    let mut ok = Vec::new();
                    for (pos, &port) in self.switches[sw].uplinks.iter().enumerate() {
                        let link = self.link(self.switches[sw].ports[port as usize]);
                        if !link.is_up() {
                            continue;
                        }
                        let Some(next) = self.peer_switch(sw, port) else { continue };
                        let reach = if self.is_below(next, leaf) {
                            self.reaches_down(next, leaf)
                        } else {
                            !live[next][leaf].is_empty()
                        };
                        if reach {
                            ok.push(pos as u16);
                        }
                    }
                    live[sw][leaf] = ok;
                }
            }
        }
        self.live_up = live;
    }

    /// Live uplink table of switch `sw` toward `leaf`: port indices in stable order.
    pub fn live_uplinks(&self, sw: usize, leaf: usize) -> impl Iterator<Item = u16> + '_ {
        let s = &self.switches[sw];
        self.live_up[sw][leaf].iter().map(move |&pos| s.uplinks[pos as usize])
    }

    pub fn live_uplink_count(&self, sw: usize, leaf: usize) -> usize {
        self.live_up[sw][leaf].len()
    }

    /// Port selected by uplink index `idx` toward `leaf`. The second value is
    /// true when `idx` was out of range and got reduced modulo the live count.
    pub fn uplink_port(&self, sw: usize, leaf: usize, idx: usize) -> Option<(u16, bool)> {
        let live = &self.live_up[sw][leaf];
        if live.is_empty() {
            return None;
        }
        let remapped = idx >= live.len();
        let pos = live[idx % live.len()];
        Some((self.switches[sw].uplinks[pos as usize], remapped))
    }

    /// Deterministic downward port from `sw` toward `dst_host`.
    pub fn route_down(&self, sw: usize, dst_host: u32) -> Result<u16, TopologyError> {
        let host = self.host(dst_host)?;
        let s = &self.switches[sw];
        if s.leaf_index == Some(host.leaf) {
            return Ok(host.leaf_port);
        }
        s.down_leaf_port
            .get(host.leaf)
            .copied()
            .flatten()
            .ok_or(TopologyError::NotBelow {
                switch: s.node.0,
                host: dst_host,
            })
    }

    /// Per-part uplink counts seen by a host in `src_leaf` sending to `dst_leaf`.
    ///
    /// A part whose tier is not crossed has count 1. When failures leave the
    /// second tier uneven, the largest live count is used and switches
    /// reduce out-of-range parts.
    pub fn uplink_counts(&self, src_leaf: usize, dst_leaf: usize) -> Vec<usize> {
        let parts = self.tiers as usize - 1;
        let mut counts = vec![1; parts];
        if src_leaf == dst_leaf {
            return counts;
        }
        let edge = self.leaves[src_leaf];
        counts[0] = self.live_uplink_count(edge, dst_leaf).max(1);
        if parts == 2 {
            let mut l1 = 1;
            for port in self.live_uplinks(edge, dst_leaf) {
                if let Some(agg) = self.peer_switch(edge, port) {
                    if !self.is_below(agg, dst_leaf) {
                        l1 = l1.max(self.live_uplink_count(agg, dst_leaf));
                    }
                }
            }
            counts[1] = l1;
        }
        counts
    }

    /// Number of distinct upward routes between two hosts; 1 under a shared leaf.
    pub fn upward_path_count(&self, src: u32, dst: u32) -> Result<usize, TopologyError> {
        if src == dst {
            return Err(TopologyError::SameHost(src));
        }
        let (s, d) = (self.host(src)?.leaf, self.host(dst)?.leaf);
        if s == d {
            return Ok(1);
        }
        let edge = self.leaves[s];
        let mut total = 0;
        for port in self.live_uplinks(edge, d) {
            let next = self.peer_switch(edge, port).expect("uplink leads to a switch");
            total += if self.is_below(next, d) {
                1
            } else {
                self.live_uplink_count(next, d)
            };
        }
        Ok(total)
    }

    /// All directed links between tier-1 and tier-2 switches, upward first
    /// then the reverse direction, in cable order.
    pub fn leaf_uplink_cables(&self) -> Vec<LinkId> {
        let mut v = Vec::new();
        for &sw in &self.leaves {
            let s = &self.switches[sw];
            for &p in &s.uplinks {
                v.push(s.ports[p as usize]);
            }
        }
        v
    }

    /// All switch-to-switch cables, one representative (upward) direction each.
    pub fn fabric_cables(&self) -> Vec<LinkId> {
        let mut v = Vec::new();
        for s in &self.switches {
            for &p in &s.uplinks {
                v.push(s.ports[p as usize]);
            }
        }
        v
    }

    /// Applies an impairment to both directions of every selected cable.
    pub fn apply_impairment(&mut self, selector: &LinkSelector, impairment: Impairment) -> Result<usize, TopologyError> {
        if let Impairment::Degraded(f) = impairment {
            if !(f > 0.0 && f < 1.0) {
                return Err(TopologyError::DegradeRange(f));
            }
        }
        let ids = self.resolve(selector)?;
        if ids.is_empty() {
            return Err(TopologyError::EmptySelector);
        }
        let health = match impairment {
            Impairment::Failed => LinkHealth::Failed,
            Impairment::Degraded(f) => LinkHealth::Degraded(f),
        };
        for &id in &ids {
            let rev = self.links[id.index()].reverse;
            self.links[id.index()].health = health;
            self.links[rev.index()].health = health;
        }
        self.recompute_routes();
        Ok(ids.len())
    }

    fn resolve(&self, selector: &LinkSelector) -> Result<Vec<LinkId>, TopologyError> {
        match selector {
            LinkSelector::Links(ids) => {
                for id in ids {
                    if id.index() >= self.links.len() {
                        return Err(TopologyError::UnknownLink(id.0));
                    }
                }
                Ok(ids.clone())
            }
            LinkSelector::LeafUplink { leaf, uplink } => {
                let Some(&sw) = self.leaves.get(*leaf) else {
                    return Ok(Vec::new());
                };
                let s = &self.switches[sw];
                Ok(s.uplinks.get(*uplink).map(|&p| vec![s.ports[p as usize]]).unwrap_or_default())
            }
        }
    }

    /// Ideal path for a host pair as (links traversed, switches traversed).
    pub fn path_shape(&self, src: u32, dst: u32) -> Result<(usize, usize), TopologyError> {
        let (s, d) = (self.host(src)?, self.host(dst)?);
        if s.leaf == d.leaf {
            return Ok((2, 1));
        }
        if self.tiers == 3 {
            let sp = self.switches[self.leaves[s.leaf]].pod;
            let dp = self.switches[self.leaves[d.leaf]].pod;
            if sp != dp {
                return Ok((6, 5));
            }
        }
        Ok((4, 3))
    }

    /// Link count of the longest host-to-host path.
    pub fn diameter_links(&self) -> usize {
        if self.leaves.len() <= 1 {
            return 2;
        }
        match self.tiers {
            3 if self.leaves.len() > self.hosts_pod_width() => 6,
            _ => 4,
        }
    }

    fn hosts_pod_width(&self) -> usize {
        // Edges per pod for 3-tier.
        self.switches.iter().filter(|s| s.tier == 1 && s.pod == Some(0)).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkSelector {
    Links(Vec<LinkId>),
    LeafUplink { leaf: usize, uplink: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Impairment {
    Failed,
    /// Remaining fraction of nominal bandwidth, in (0, 1).
    Degraded(f64),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::ev_from_index;
    use proptest::prelude::*;
    use std::collections::{BTreeSet, VecDeque};

    const G400: u64 = 400_000_000_000;

    fn topo(tiers: u8, hosts: usize, ports: usize) -> Topology {
        build_fattree(tiers, hosts, ports, G400, SimTime(600)).unwrap()
    }

    #[test]
    fn table_one_rows() {
        let t = topo(2, 128, 16);
        assert_eq!(t.tier_counts(), vec![16, 8]);
        assert!(t.leaves.iter().all(|&l| t.switches[l].uplinks.len() == 8));
        let t = topo(2, 2048, 64);
        assert_eq!(t.tier_counts(), vec![64, 32]);
        let t = topo(3, 1024, 16);
        assert_eq!(t.tier_counts(), vec![128, 128, 64]);
        assert_eq!(t.n_hosts(), 1024);
    }

    #[test]
    fn largest_two_tier_row_builds() {
        let t = topo(2, 8192, 128);
        assert_eq!(t.tier_counts(), vec![128, 64]);
    }

    #[test]
    fn every_host_has_one_leaf() {
        let t = topo(3, 128, 8);
        for h in &t.hosts {
            let link = t.link(h.uplink);
            assert_eq!(t.switch_index(link.to), Some(t.leaves[h.leaf]));
        }
    }

    #[test]
    fn unrealizable_parameters_name_the_constraint() {
        let e = build_fattree(2, 100, 16, G400, SimTime(1)).unwrap_err();
        assert!(matches!(e, TopologyError::HostMultiple { per: 8, .. }), "{e}");
        assert!(matches!(build_fattree(2, 8 * 17, 16, G400, SimTime(1)), Err(TopologyError::Radix { .. })));
        assert!(matches!(build_fattree(4, 16, 4, G400, SimTime(1)), Err(TopologyError::Tiers(4))));
        assert!(matches!(build_fattree(2, 16, 7, G400, SimTime(1)), Err(TopologyError::Ports(7))));
    }

    #[test]
    fn override_layout_fifteen_by_seven() {
        let mut p = TopologyParams::new(2, 128, 16);
        p.override_layout = Some(TwoTierOverride { leaves: 15, spines: 7 });
        let t = Topology::build(&p, G400, SimTime(600)).unwrap();
        assert_eq!(t.tier_counts(), vec![15, 7]);
        assert_eq!(t.n_hosts(), 128);
        assert_eq!(t.uplink_counts(0, 1), vec![7]);
    }

    #[test]
    fn path_counts() {
        let t = topo(2, 128, 16);
        assert_eq!(t.upward_path_count(0, 1).unwrap(), 1);
        assert_eq!(t.upward_path_count(0, 8).unwrap(), 8);
        assert!(t.upward_path_count(3, 3).is_err());
        assert!(t.upward_path_count(0, 999).is_err());
        let t = topo(3, 128, 8);
        // Same pod, different edge: one tier crossed.
        assert_eq!(t.upward_path_count(0, 4).unwrap(), 4);
        assert_eq!(t.upward_path_count(0, 16).unwrap(), 16);
        assert_eq!(t.uplink_counts(0, 4), vec![4, 4]);
        assert_eq!(t.uplink_counts(0, 1), vec![4, 1]);
    }

    #[test]
    fn sixteen_uplinks_per_tier_gives_256_paths() {
        // Two pods of a k=32 FatTree: 16 edge uplinks, 16 aggregation uplinks.
        let t = topo(3, 512, 32);
        assert_eq!(t.upward_path_count(0, 300).unwrap(), 256);
        assert_eq!(t.part_widths(), vec![4, 4]);
    }

    #[test]
    fn route_down_is_unique() {
        let t = topo(2, 128, 16);
        let leaf0 = t.leaves[0];
        assert_eq!(t.route_down(leaf0, 3).unwrap(), t.hosts[3].leaf_port);
        assert!(t.route_down(leaf0, 20).is_err());
        let spine = t.switches.iter().position(|s| s.tier == 2).unwrap();
        let p = t.route_down(spine, 3 * 8 + 1).unwrap();
        let to = t.link(t.switches[spine].ports[p as usize]).to;
        assert_eq!(t.switch_index(to), Some(t.leaves[3]));
    }

    #[test]
    fn failure_shrinks_uplink_tables_without_disconnecting() {
        let mut t = topo(2, 128, 16);
        let n = t
            .apply_impairment(&LinkSelector::LeafUplink { leaf: 0, uplink: 3 }, Impairment::Failed)
            .unwrap();
        assert_eq!(n, 1);
        assert_eq!(t.live_uplink_count(t.leaves[0], 5), 7);
        // Other leaves can no longer use spine 3 toward leaf 0.
        assert_eq!(t.live_uplink_count(t.leaves[5], 0), 7);
        assert_eq!(t.live_uplink_count(t.leaves[5], 6), 8);
        assert!(t.live_uplinks(t.leaves[0], 5).all(|p| p != t.switches[t.leaves[0]].uplinks[3]));
        for a in 0..128u32 {
            for b in (0..128u32).step_by(7) {
                if a != b {
                    assert!(t.upward_path_count(a, b).unwrap() >= 1);
                }
            }
        }
    }

    #[test]
    fn degradation_keeps_structure() {
        let mut t = topo(2, 128, 16);
        let before = t.upward_path_count(0, 100).unwrap();
        t.apply_impairment(&LinkSelector::LeafUplink { leaf: 0, uplink: 0 }, Impairment::Degraded(0.25))
            .unwrap();
        assert_eq!(t.upward_path_count(0, 100).unwrap(), before);
        let l = t.link(t.switches[t.leaves[0]].ports[t.switches[t.leaves[0]].uplinks[0] as usize]);
        assert_eq!(l.rate_bps(), G400 / 4);
        assert!(matches!(
            t.apply_impairment(&LinkSelector::LeafUplink { leaf: 0, uplink: 1 }, Impairment::Degraded(1.0)),
            Err(TopologyError::DegradeRange(_))
        ));
        assert!(matches!(
            t.apply_impairment(&LinkSelector::LeafUplink { leaf: 99, uplink: 1 }, Impairment::Failed),
            Err(TopologyError::EmptySelector)
        ));
    }

    /// Every shortest host-to-host path over live links, as node sequences,
    /// by BFS layering on the raw link list.
    fn brute_force_paths(t: &Topology, src: u32, dst: u32) -> BTreeSet<Vec<u32>> {
        let n = t.links.iter().map(|l| l.from.0.max(l.to.0)).max().unwrap() as usize + 1;
        let mut adj = vec![Vec::new(); n];
        for l in t.links.iter().filter(|l| l.is_up()) {
            adj[l.from.0 as usize].push(l.to.0 as usize);
        }
        let (s, d) = (t.hosts[src as usize].node.0 as usize, t.hosts[dst as usize].node.0 as usize);
        let mut dist = vec![usize::MAX; n];
        dist[s] = 0;
        let mut q = VecDeque::from([s]);
        while let Some(u) = q.pop_front() {
            for &v in &adj[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    q.push_back(v);
                }
            }
        }
        // Walk back from the destination along strictly decreasing distance.
        let mut out = BTreeSet::new();
        let mut stack = vec![vec![d]];
        while let Some(path) = stack.pop() {
            let u = *path.last().unwrap();
            if u == s {
                out.insert(path.iter().rev().map(|&x| x as u32).collect());
                continue;
            }
            for v in 0..n {
                if dist[v] != usize::MAX && dist[v] + 1 == dist[u] && adj[v].contains(&u) {
                    let mut p = path.clone();
                    p.push(v);
                    stack.push(p);
                }
            }
        }
        out
    }

    /// Paths induced by every entropy value in the pair's space.
    fn induced_paths(t: &Topology, src: u32, dst: u32) -> BTreeSet<Vec<u32>> {
        let (sl, dl) = (t.hosts[src as usize].leaf, t.hosts[dst as usize].leaf);
        let counts = t.uplink_counts(sl, dl);
        let total: usize = counts.iter().product();
        let mut out = BTreeSet::new();
        for i in 0..total {
            let ev = ev_from_index(i, &counts).unwrap();
            let mut path = vec![t.hosts[src as usize].node.0];
            let mut sw = t.leaves[sl];
            loop {
                path.push(t.switches[sw].node.0);
                let port = if t.is_below(sw, dl) {
                    t.route_down(sw, dst).unwrap()
                } else {
                    let tier = t.switches[sw].tier as usize;
                    t.uplink_port(sw, dl, ev.part(tier - 1) as usize).unwrap().0
                };
                let to = t.link(t.switches[sw].ports[port as usize]).to;
                match t.switch_index(to) {
                    Some(next) => sw = next,
                    None => {
                        assert_eq!(to, t.hosts[dst as usize].node);
                        path.push(to.0);
                        break;
                    }
                }
            }
            out.insert(path);
        }
        out
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn entropy_paths_cover_exactly_the_shortest_paths(
            k in prop_oneof![Just(4usize), Just(8)],
            tiers in 2u8..=3,
            a in any::<u32>(),
            b in any::<u32>(),
            fail in proptest::option::of(any::<usize>()),
        ) {
            let hosts = if tiers == 2 { k * k / 2 } else { k * k * k / 4 };
            let mut t = topo(tiers, hosts, k);
            if let Some(f) = fail {
                let cables = t.fabric_cables();
                t.apply_impairment(&LinkSelector::Links(vec![cables[f % cables.len()]]), Impairment::Failed).unwrap();
            }
            let src = a % hosts as u32;
            let dst = (src + 1 + b % (hosts as u32 - 1)) % hosts as u32;
            let want = brute_force_paths(&t, src, dst);
            prop_assert_eq!(induced_paths(&t, src, dst), want.clone());
            prop_assert_eq!(t.upward_path_count(src, dst).unwrap(), want.len());
        }
    }
}
