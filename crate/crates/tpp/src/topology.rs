// SPDX-License-Identifier: Apache-2.0

//! Topology documents, validation and routing.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::net::Ipv4Addr;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tpp_core::switch::state::DEFAULT_QUEUE_BYTES;
use tpp_core::switch::{Action, GroupSelector, PacketView, SwitchState};

pub type NodeId = usize;

pub const DEFAULT_MTU: usize = 1500;
pub const MAX_MTU: usize = 9000;
pub const DEFAULT_HOST_QUEUE_BYTES: u64 = 4_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    #[serde(default = "default_mtu")]
    pub mtu: usize,
    #[serde(default = "default_host_queue")]
    pub host_queue_bytes: u64,
    pub hosts: Vec<HostSpec>,
    pub switches: Vec<SwitchSpec>,
    pub links: Vec<LinkSpec>,
    #[serde(default)]
    pub groups: Vec<GroupSpec>,
    #[serde(default)]
    pub routes: Vec<RouteSpec>,
}

fn default_mtu() -> usize {
    DEFAULT_MTU
}

fn default_host_queue() -> u64 {
    DEFAULT_HOST_QUEUE_BYTES
}

fn default_queue_bytes() -> u64 {
    DEFAULT_QUEUE_BYTES
}

fn default_queues() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HostSpec {
    pub name: String,
    pub ip: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchSpec {
    pub name: String,
    pub id: u16,
    #[serde(default = "default_queues")]
    pub queues: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub a: String,
    pub b: String,
    pub capacity_bps: u64,
    pub delay_ns: u64,
    #[serde(default = "default_queue_bytes")]
    pub queue_bytes: u64,
    /// Probability that a frame is lost on the wire, each direction.
    #[serde(default)]
    pub loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectorSpec {
    #[default]
    Vlan,
    DstIp,
    FlowHash,
}

impl From<SelectorSpec> for GroupSelector {
    fn from(s: SelectorSpec) -> GroupSelector {
        match s {
            SelectorSpec::Vlan => GroupSelector::Vlan,
            SelectorSpec::DstIp => GroupSelector::DstIp,
            SelectorSpec::FlowHash => GroupSelector::FlowHash,
        }
    }
}

/// Traffic from `switch` to host `dst` is spread over the links towards `via`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSpec {
    pub switch: String,
    pub dst: String,
    pub via: Vec<String>,
    #[serde(default)]
    pub selector: SelectorSpec,
}

/// Overrides the computed next hop from `switch` to host `dst`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteSpec {
    pub switch: String,
    pub dst: String,
    pub via: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TopologyError {
    #[error("cannot read topology: {0}")]
    Io(String),
    #[error("cannot parse topology: {0}")]
    Parse(String),
    #[error("invalid topology: {0}")]
    Invalid(String),
    #[error("link {link} names undeclared node {node:?}")]
    DanglingLink { link: usize, node: String },
    #[error("routing loop from {src} to {dst} (selector value {key})")]
    RoutingLoop { src: String, dst: String, key: u64 },
    #[error("{dst} is unreachable from {src} (selector value {key})")]
    Unreachable { src: String, dst: String, key: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Port {
    pub peer: NodeId,
    pub peer_port: u8,
    pub capacity_bps: u64,
    pub delay_ns: u64,
    pub queue_bytes: u64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NodeKind {
    Host { ip: u32 },
    Switch { id: u16, queues: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub name: String,
    pub kind: NodeKind,
    pub ports: Vec<Port>,
}

impl Node {
    pub fn is_host(&self) -> bool {
        matches!(self.kind, NodeKind::Host { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub ports: Vec<u8>,
    pub selector: GroupSelector,
}

/// A validated topology with its routing tables.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub mtu: usize,
    pub host_queue_bytes: u64,
    pub nodes: Vec<Node>,
    /// Unicast next-hop port per (switch node, destination ip).
    pub routes: BTreeMap<(NodeId, u32), u8>,
    /// Multipath groups per (switch node, destination ip).
    pub groups: BTreeMap<(NodeId, u32), Group>,
}

pub fn parse_ip(s: &str) -> Result<u32, TopologyError> {
    s.parse::<Ipv4Addr>().map(u32::from).map_err(|_| TopologyError::Parse(format!("bad IPv4 address {s:?}")))
}

pub fn format_ip(ip: u32) -> String {
    Ipv4Addr::from(ip).to_string()
}

pub fn load_topology(path: &Path) -> Result<Topology, TopologyError> {
    let text = std::fs::read_to_string(path).map_err(|e| TopologyError::Io(format!("{}: {e}", path.display())))?;
    let spec: TopologySpec = serde_json::from_str(&text).map_err(|e| TopologyError::Parse(e.to_string()))?;
    build_topology(&spec)
}

pub fn build_topology(spec: &TopologySpec) -> Result<Topology, TopologyError> {
    if spec.mtu < 576 || spec.mtu > MAX_MTU {
        return Err(TopologyError::Invalid(format!("mtu {} outside 576..={MAX_MTU}", spec.mtu)));
    }
    let mut nodes = Vec::new();
    let mut by_name = BTreeMap::new();
    let mut ips = BTreeSet::new();
    let mut ids = BTreeSet::new();
    for h in &spec.hosts {
        let ip = parse_ip(&h.ip)?;
        if !ips.insert(ip) {
            return Err(TopologyError::Invalid(format!("duplicate ip {}", h.ip)));
        }
        if by_name.insert(h.name.clone(), nodes.len()).is_some() {
            return Err(TopologyError::Invalid(format!("duplicate node {:?}", h.name)));
        }
        nodes.push(Node { name: h.name.clone(), kind: NodeKind::Host { ip }, ports: Vec::new() });
    }
    for s in &spec.switches {
        if !ids.insert(s.id) {
            return Err(TopologyError::Invalid(format!("duplicate switch id {}", s.id)));
        }
        if s.queues == 0 || s.queues > usize::from(tpp_core::memmap::MAX_QUEUES) {
            return Err(TopologyError::Invalid(format!("switch {:?}: bad queue count {}", s.name, s.queues)));
        }
        if by_name.insert(s.name.clone(), nodes.len()).is_some() {
            return Err(TopologyError::Invalid(format!("duplicate node {:?}", s.name)));
        }
        nodes.push(Node { name: s.name.clone(), kind: NodeKind::Switch { id: s.id, queues: s.queues }, ports: Vec::new() });
    }
    for (i, l) in spec.links.iter().enumerate() {
        let a = *by_name.get(&l.a).ok_or_else(|| TopologyError::DanglingLink { link: i, node: l.a.clone() })?;
        let b = *by_name.get(&l.b).ok_or_else(|| TopologyError::DanglingLink { link: i, node: l.b.clone() })?;
        if a == b {
            return Err(TopologyError::Invalid(format!("link {i} is a self-loop")));
        }
        if l.capacity_bps == 0 || l.delay_ns == 0 || l.queue_bytes == 0 {
            return Err(TopologyError::Invalid(format!("link {i}: capacity, delay and queue must be positive")));
        }
        if !(0.0..=1.0).contains(&l.loss) {
            return Err(TopologyError::Invalid(format!("link {i}: loss {} outside [0, 1]", l.loss)));
        }
        for x in [a, b] {
            if nodes[x].is_host() && !nodes[x].ports.is_empty() {
                return Err(TopologyError::Invalid(format!("host {:?} has more than one link", nodes[x].name)));
            }
            if nodes[x].ports.len() >= usize::from(tpp_core::memmap::MAX_PORTS) {
                return Err(TopologyError::Invalid(format!("{:?} has too many ports", nodes[x].name)));
            }
        }
        let (pa, pb) = (nodes[a].ports.len() as u8, nodes[b].ports.len() as u8);
        for (x, y, peer_port) in [(a, b, pb), (b, a, pa)] {
            let q = if nodes[x].is_host() { spec.host_queue_bytes } else { l.queue_bytes };
            nodes[x].ports.push(Port {
                peer: y,
                peer_port,
                capacity_bps: l.capacity_bps,
                delay_ns: l.delay_ns,
                queue_bytes: q,
                loss: l.loss,
            });
        }
    }
    for n in &nodes {
        if n.is_host() && n.ports.is_empty() {
            return Err(TopologyError::Invalid(format!("host {:?} is not connected", n.name)));
        }
    }

    let hosts: Vec<(NodeId, u32)> = nodes
        .iter()
        .enumerate()
        .filter_map(|(i, n)| match n.kind {
            NodeKind::Host { ip } => Some((i, ip)),
            _ => None,
        })
        .collect();

    let port_to = |nodes: &[Node], from: NodeId, to: NodeId| nodes[from].ports.iter().position(|p| p.peer == to);
    let lookup = |name: &str| by_name.get(name).copied().ok_or_else(|| TopologyError::Invalid(format!("unknown node {name:?}")));
    let switch_node = |name: &str| {
        let n = lookup(name)?;
        if nodes[n].is_host() {
            return Err(TopologyError::Invalid(format!("{name:?} is not a switch")));
        }
        Ok(n)
    };
    let host_ip = |name: &str| match nodes[lookup(name)?].kind {
        NodeKind::Host { ip } => Ok(ip),
        _ => Err(TopologyError::Invalid(format!("{name:?} is not a host"))),
    };

    // Shortest paths by hop count, hosts are never transit nodes.
    let mut routes = BTreeMap::new();
    for &(dst, ip) in &hosts {
        let mut dist = vec![usize::MAX; nodes.len()];
        dist[dst] = 0;
        let mut queue = VecDeque::from([dst]);
        while let Some(n) = queue.pop_front() {
            if n != dst && nodes[n].is_host() {
                continue;
            }
            for p in &nodes[n].ports {
                if dist[p.peer] == usize::MAX {
                    dist[p.peer] = dist[n] + 1;
                    queue.push_back(p.peer);
                }
            }
        }
        for (s, node) in nodes.iter().enumerate() {
            if node.is_host() || dist[s] == usize::MAX {
                continue;
            }
            let next = node.ports.iter().position(|p| dist[p.peer] + 1 == dist[s] && (p.peer == dst || !nodes[p.peer].is_host()));
            if let Some(port) = next {
                routes.insert((s, ip), port as u8);
            }
        }
    }
    for r in &spec.routes {
        let s = switch_node(&r.switch)?;
        let via = lookup(&r.via)?;
        let port = port_to(&nodes, s, via)
            .ok_or_else(|| TopologyError::Invalid(format!("{} has no link to {}", r.switch, r.via)))?;
        routes.insert((s, host_ip(&r.dst)?), port as u8);
    }
    let mut groups = BTreeMap::new();
    for g in &spec.groups {
        let s = switch_node(&g.switch)?;
        if g.via.is_empty() {
            return Err(TopologyError::Invalid(format!("group at {} has no members", g.switch)));
        }
        let mut ports = Vec::new();
        for v in &g.via {
            let via = lookup(v)?;
            let port = port_to(&nodes, s, via)
                .ok_or_else(|| TopologyError::Invalid(format!("{} has no link to {v}", g.switch)))?;
            ports.push(port as u8);
        }
        groups.insert((s, host_ip(&g.dst)?), Group { ports, selector: g.selector.into() });
    }

    let topo = Topology { mtu: spec.mtu, host_queue_bytes: spec.host_queue_bytes, nodes, routes, groups };
    topo.validate_routes()?;
    Ok(topo)
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl Topology {
    pub fn node(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.name == name)
    }

    pub fn hosts(&self) -> Vec<NodeId> {
        (0..self.nodes.len()).filter(|i| self.nodes[*i].is_host()).collect()
    }

    pub fn switches(&self) -> Vec<NodeId> {
        (0..self.nodes.len()).filter(|i| !self.nodes[*i].is_host()).collect()
    }

    pub fn host_ip(&self, n: NodeId) -> Option<u32> {
        match self.nodes.get(n)?.kind {
            NodeKind::Host { ip } => Some(ip),
            _ => None,
        }
    }

    pub fn switch_id(&self, n: NodeId) -> Option<u16> {
        match self.nodes.get(n)?.kind {
            NodeKind::Switch { id, .. } => Some(id),
            _ => None,
        }
    }

    pub fn host_by_ip(&self, ip: u32) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.kind == NodeKind::Host { ip })
    }

    pub fn switch_by_id(&self, id: u16) -> Option<NodeId> {
        self.nodes.iter().position(|n| matches!(n.kind, NodeKind::Switch { id: i, .. } if i == id))
    }

    /// Output port at `switch` for a packet: the destination's group entry if
    /// there is one, otherwise the unicast route.
    pub fn select_path(&self, switch: NodeId, view: &PacketView) -> Option<u8> {
        if let Some(g) = self.groups.get(&(switch, view.dst_ip)) {
            let key = match g.selector {
                GroupSelector::Vlan => u64::from(view.vlan),
                GroupSelector::DstIp => u64::from(view.dst_ip),
                GroupSelector::FlowHash => u64::from(view.flow_hash),
            };
            return Some(g.ports[(key % g.ports.len() as u64) as usize]);
        }
        self.routes.get(&(switch, view.dst_ip)).copied()
    }

    /// Selector values worth enumerating: every residue of every group fan-out.
    fn selector_period(&self) -> u64 {
        self.groups.values().fold(1u64, |acc, g| {
            let n = g.ports.len() as u64;
            (acc / gcd(acc, n) * n).min(5040)
        })
    }

    /// Switch nodes and output ports from `src` host to `dst` host.
    pub fn trace(&self, src: NodeId, dst_ip: u32, key: u64) -> Result<Vec<(NodeId, u8)>, TopologyError> {
        let name = |n: NodeId| self.nodes[n].name.clone();
        let dst_name = self.host_by_ip(dst_ip).map_or_else(|| crate::topology::format_ip(dst_ip), name);
        let mut at = self.nodes[src].ports[0].peer;
        let mut in_port = self.nodes[src].ports[0].peer_port;
        let mut hops = Vec::new();
        let mut seen = BTreeSet::new();
        loop {
            if self.nodes[at].is_host() {
                return if self.host_ip(at) == Some(dst_ip) {
                    Ok(hops)
                } else {
                    Err(TopologyError::Unreachable { src: name(src), dst: dst_name, key })
                };
            }
            if !seen.insert(at) {
                return Err(TopologyError::RoutingLoop { src: name(src), dst: dst_name, key });
            }
            let view = PacketView {
                input_port: in_port,
                dst_ip,
                vlan: key as u16,
                flow_hash: key as u32,
                ..PacketView::default()
            };
            let Some(out) = self.select_path(at, &view) else {
                return Err(TopologyError::Unreachable { src: name(src), dst: dst_name, key });
            };
            hops.push((at, out));
            let p = self.nodes[at].ports[usize::from(out)];
            at = p.peer;
            in_port = p.peer_port;
        }
    }

    fn validate_routes(&self) -> Result<(), TopologyError> {
        let period = self.selector_period();
        for src in self.hosts() {
            for dst in self.hosts() {
                if src == dst {
                    continue;
                }
                let ip = self.host_ip(dst).unwrap();
                for key in 0..period {
                    self.trace(src, ip, key)?;
                }
            }
        }
        Ok(())
    }

    /// The switch model for a switch node, with its ports and forwarding entries.
    pub fn build_switch(&self, n: NodeId) -> Option<SwitchState> {
        let NodeKind::Switch { id, queues } = self.nodes[n].kind else {
            return None;
        };
        let mut sw = SwitchState::new(id);
        for p in &self.nodes[n].ports {
            sw.add_port(p.capacity_bps, queues, p.queue_bytes);
        }
        let mut next_group = 0u16;
        for h in self.hosts() {
            let ip = self.host_ip(h).unwrap();
            if let Some(g) = self.groups.get(&(n, ip)) {
                sw.add_exact(ip, Action::Group(next_group));
                sw.add_group(next_group, g.ports.clone(), g.selector);
                next_group += 1;
            } else if let Some(port) = self.routes.get(&(n, ip)) {
                sw.add_exact(ip, Action::Output(*port));
            }
        }
        Some(sw)
    }

    /// Directed capacity between adjacent nodes, bits/s.
    pub fn capacity(&self, from: NodeId, to: NodeId) -> u64 {
        self.nodes[from].ports.iter().filter(|p| p.peer == to).map(|p| p.capacity_bps).sum()
    }
}

/// Largest total rate the sources can push to `sink` when each source `s`
/// offers at most `demand`; links scaled by `efficiency`. Edmonds-Karp.
pub fn max_flow(topo: &Topology, sources: &[(NodeId, f64)], sink: NodeId, efficiency: f64) -> f64 {
    let n = topo.nodes.len() + 1;
    let super_src = n - 1;
    let mut cap = vec![vec![0.0f64; n]; n];
    for (a, node) in topo.nodes.iter().enumerate() {
        for p in &node.ports {
            // Hosts other than the sources and sink are not transit nodes.
            let transit_ok = !topo.nodes[p.peer].is_host() || p.peer == sink;
            if transit_ok {
                cap[a][p.peer] += p.capacity_bps as f64 * efficiency;
            }
        }
    }
    for (s, d) in sources {
        cap[super_src][*s] += d;
    }
    let mut total = 0.0;
    loop {
        let mut prev = vec![usize::MAX; n];
        prev[super_src] = super_src;
        let mut queue = VecDeque::from([super_src]);
        while let Some(u) = queue.pop_front() {
            for v in 0..n {
                if prev[v] == usize::MAX && cap[u][v] > 1e-9 {
                    prev[v] = u;
                    queue.push_back(v);
                }
            }
        }
        if prev[sink] == usize::MAX {
            return total;
        }
        let mut f = f64::INFINITY;
        let mut v = sink;
        while v != super_src {
            f = f.min(cap[prev[v]][v]);
            v = prev[v];
        }
        let mut v = sink;
        while v != super_src {
            cap[prev[v]][v] -= f;
            cap[v][prev[v]] += f;
            v = prev[v];
        }
        total += f;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(json: &str) -> TopologySpec {
        serde_json::from_str(json).unwrap()
    }

    const LINE: &str = r#"{
        "hosts": [{"name": "a", "ip": "10.0.0.1"}, {"name": "b", "ip": "10.0.0.2"}],
        "switches": [{"name": "s0", "id": 1}, {"name": "s1", "id": 2}],
        "links": [
            {"a": "a", "b": "s0", "capacity_bps": 100000000, "delay_ns": 1000},
            {"a": "s0", "b": "s1", "capacity_bps": 100000000, "delay_ns": 1000},
            {"a": "s1", "b": "b", "capacity_bps": 100000000, "delay_ns": 1000}
        ]
    }"#;

    #[test]
    fn line_routes() {
        let t = build_topology(&spec(LINE)).unwrap();
        let a = t.node("a").unwrap();
        let path = t.trace(a, parse_ip("10.0.0.2").unwrap(), 0).unwrap();
        assert_eq!(path.len(), 2);
        assert_eq!(t.switch_id(path[0].0), Some(1));
        assert_eq!(t.nodes[path[1].0].ports[usize::from(path[1].1)].peer, t.node("b").unwrap());
    }

    #[test]
    fn dangling_link() {
        let mut s = spec(LINE);
        s.links[1].b = "nowhere".into();
        assert_eq!(build_topology(&s), Err(TopologyError::DanglingLink { link: 1, node: "nowhere".into() }));
    }

    #[test]
    fn routing_loop_rejected() {
        let mut s = spec(LINE);
        s.links.push(LinkSpec {
            a: "s0".into(),
            b: "s1".into(),
            capacity_bps: 1_000_000,
            delay_ns: 1,
            queue_bytes: 1000,
            loss: 0.0,
        });
        s.routes.push(RouteSpec { switch: "s1".into(), dst: "b".into(), via: "s0".into() });
        assert!(matches!(build_topology(&s), Err(TopologyError::RoutingLoop { .. })));
    }

    #[test]
    fn bad_values() {
        let mut s = spec(LINE);
        s.links[0].capacity_bps = 0;
        assert!(matches!(build_topology(&s), Err(TopologyError::Invalid(_))));
        assert!(matches!(serde_json::from_str::<TopologySpec>("{"), Err(_)));
    }

    #[test]
    fn switch_tables_agree_with_select_path() {
        let mut s = spec(LINE);
        s.hosts.push(HostSpec { name: "c".into(), ip: "10.0.0.3".into() });
        s.switches.push(SwitchSpec { name: "s2".into(), id: 3, queues: 1 });
        for (a, b) in [("s0", "s2"), ("s2", "s1"), ("c", "s1")] {
            s.links.push(LinkSpec { a: a.into(), b: b.into(), capacity_bps: 1_000_000, delay_ns: 1, queue_bytes: 1000, loss: 0.0 });
        }
        s.groups.push(GroupSpec { switch: "s0".into(), dst: "b".into(), via: vec!["s1".into(), "s2".into()], selector: SelectorSpec::Vlan });
        let t = build_topology(&s).unwrap();
        let s0 = t.node("s0").unwrap();
        let mut sw = t.build_switch(s0).unwrap();
        for h in t.hosts() {
            for vlan in 0..6 {
                let view = PacketView { dst_ip: t.host_ip(h).unwrap(), vlan, length: 100, ..PacketView::default() };
                assert_eq!(sw.forward(&view).output_port, t.select_path(s0, &view));
            }
        }
        let b = parse_ip("10.0.0.2").unwrap();
        assert_ne!(t.trace(t.node("a").unwrap(), b, 0).unwrap().len(), t.trace(t.node("a").unwrap(), b, 1).unwrap().len());
    }

    #[test]
    fn max_flow_on_a_line() {
        let t = build_topology(&spec(LINE)).unwrap();
        let f = max_flow(&t, &[(t.node("a").unwrap(), 150e6)], t.node("b").unwrap(), 1.0);
        assert!((f - 100e6).abs() < 1.0);
    }
}
