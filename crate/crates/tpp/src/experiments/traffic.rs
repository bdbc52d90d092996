// SPDX-License-Identifier: Apache-2.0

//! Workload generators: rate-limited UDP, bulk, on/off bursts and Poisson messages.

use std::cell::RefCell;
use std::rc::Rc;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::netsim::{Agent, Ctx, Simulator};
use crate::packet::Packet;
use crate::topology::{NodeId, Topology};

/// UDP payload of a full-sized data packet.
pub const MSS: u32 = 1400;
pub const DATA_PORT: u16 = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum FlowKind {
    /// Constant bit rate, counted in bits on the wire.
    RateLimitedUdp { rate_bps: f64 },
    /// A fixed number of payload bytes at the NIC's line rate.
    Bulk { bytes: u64 },
    /// Bursts of `burst_bytes` sent back to back, averaging `rate_bps`.
    OnOff { rate_bps: f64, burst_bytes: u64 },
    /// Messages of `message_bytes` with exponential gaps, `load` of the NIC to random peers.
    Poisson { load: f64, message_bytes: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSpec {
    pub id: u32,
    pub src: String,
    /// Ignored by Poisson flows, which pick a random other host per message.
    #[serde(default)]
    pub dst: String,
    #[serde(flatten)]
    pub kind: FlowKind,
    #[serde(default)]
    pub start_s: f64,
    #[serde(default)]
    pub stop_s: Option<f64>,
    #[serde(default = "default_payload")]
    pub payload_bytes: u32,
    #[serde(default)]
    pub vlan: u16,
}

pub fn default_payload() -> u32 {
    MSS
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadDoc {
    pub flows: Vec<FlowSpec>,
}

/// Nanoseconds to put `bytes` on a link of `bps`.
pub fn tx_time_ns(bytes: u64, bps: f64) -> u64 {
    ((bytes * 8) as f64 * 1e9 / bps).ceil().max(1.0) as u64
}

/// Wire bytes of a data packet with `payload` bytes of UDP payload.
pub fn wire_bytes(payload: u32) -> u64 {
    Packet::udp(0, 0, 0, 0, payload).wire_len() as u64
}

fn nic_bps(ctx: &Ctx<'_>) -> f64 {
    ctx.topology().nodes[ctx.node()].ports[0].capacity_bps as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Cbr,
    Bulk { remaining: u64 },
    OnOff { burst_bytes: u64 },
}

/// Picks the path tag (VLAN) for a packet of `flow` sent at `now_ns`.
pub type PathSelector = Rc<RefCell<dyn FnMut(u32, u64) -> u16>>;

/// One UDP flow: constant rate, bulk or on/off.
#[derive(Clone)]
pub struct UdpSource {
    pub flow: u32,
    pub dst_ip: u32,
    pub payload: u32,
    pub rate_bps: f64,
    pub vlan: u16,
    pub start_ns: u64,
    pub stop_ns: u64,
    pub sent_packets: u64,
    pub sent_bytes: u64,
    /// Overrides `vlan` per packet.
    pub selector: Option<PathSelector>,
    mode: Mode,
    seq: u64,
}

impl UdpSource {
    pub fn cbr(flow: u32, dst_ip: u32, rate_bps: f64) -> UdpSource {
        UdpSource {
            flow,
            dst_ip,
            payload: MSS,
            rate_bps,
            vlan: 0,
            start_ns: 0,
            stop_ns: u64::MAX,
            sent_packets: 0,
            sent_bytes: 0,
            selector: None,
            mode: Mode::Cbr,
            seq: 0,
        }
    }

    pub fn bulk(flow: u32, dst_ip: u32, bytes: u64) -> UdpSource {
        UdpSource { mode: Mode::Bulk { remaining: bytes }, ..UdpSource::cbr(flow, dst_ip, 0.0) }
    }

    pub fn on_off(flow: u32, dst_ip: u32, rate_bps: f64, burst_bytes: u64) -> UdpSource {
        UdpSource { mode: Mode::OnOff { burst_bytes }, ..UdpSource::cbr(flow, dst_ip, rate_bps) }
    }

    fn packet(&mut self, ctx: &Ctx<'_>, payload: u32) -> Packet {
        let mut p = Packet::udp(ctx.ip(), self.dst_ip, DATA_PORT + (self.flow % 1000) as u16, DATA_PORT, payload);
        p.flow = self.flow;
        p.seq = self.seq;
        p.vlan = match &self.selector {
            Some(sel) => (sel.borrow_mut())(self.flow, ctx.now()),
            None => self.vlan,
        };
        self.seq += 1;
        p
    }

    fn emit(&mut self, ctx: &mut Ctx<'_>, payload: u32) -> u64 {
        let p = self.packet(ctx, payload);
        let len = p.wire_len() as u64;
        ctx.send(p);
        self.sent_packets += 1;
        self.sent_bytes += len;
        len
    }
}

impl Agent for UdpSource {
    fn start(&mut self, ctx: &mut Ctx<'_>) {
        let phase = match self.mode {
            // Spread bursts of different flows over the period.
            Mode::OnOff { burst_bytes } => {
                let period = tx_time_ns(burst_bytes, self.rate_bps);
                ctx.rng().gen_range(0..period)
            }
            _ => 0,
        };
        ctx.set_timer(self.start_ns.saturating_sub(ctx.now()) + phase, 0);
    }

    fn on_timer(&mut self, ctx: &mut Ctx<'_>, _token: u64) {
        if ctx.now() >= self.stop_ns {
            return;
        }
        match self.mode {
            Mode::Cbr => {
                if self.rate_bps <= 0.0 {
                    ctx.set_timer(1_000_000, 0);
                    return;
                }
                let len = self.emit(ctx, self.payload);
                ctx.set_timer(tx_time_ns(len, self.rate_bps), 0);
            }
            Mode::Bulk { remaining } => {
                if remaining == 0 {
                    return;
                }
                let n = remaining.min(u64::from(self.payload)) as u32;
                let len = self.emit(ctx, n);
                self.mode = Mode::Bulk { remaining: remaining - u64::from(n) };
                let bps = nic_bps(ctx);
                ctx.set_timer(tx_time_ns(len, bps), 0);
            }
            Mode::OnOff { burst_bytes } => {
                let mut left = burst_bytes;
                let mut wire = 0;
                while left > 0 {
                    let n = left.min(u64::from(self.payload)) as u32;
                    wire += self.emit(ctx, n);
                    left -= u64::from(n);
                }
                ctx.set_timer(tx_time_ns(wire, self.rate_bps), 0);
            }
        }
    }
}

/// Poisson arrivals of fixed-size messages to uniformly random other hosts.
#[derive(Debug, Clone)]
pub struct PoissonSource {
    pub flow_base: u32,
    pub load: f64,
    pub message_bytes: u64,
    pub payload: u32,
    pub peers: Vec<u32>,
    pub start_ns: u64,
    pub stop_ns: u64,
    pub messages: u64,
}

impl PoissonSource {
    pub fn new(flow_base: u32, load: f64, message_bytes: u64, peers: Vec<u32>) -> PoissonSource {
        PoissonSource { flow_base, load, message_bytes, payload: MSS, peers, start_ns: 0, stop_ns: u64::MAX, messages: 0 }
    }

    fn message_wire_bytes(&self) -> u64 {
        let full = self.message_bytes / u64::from(self.payload);
        let rest = (self.message_bytes % u64::from(self.payload)) as u32;
        full * wire_bytes(self.payload) + if rest > 0 { wire_bytes(rest) } else { 0 }
    }

    fn gap(&self, ctx: &mut Ctx<'_>) -> u64 {
        let mean_ns = self.message_wire_bytes() as f64 * 8.0 * 1e9 / (self.load * nic_bps(ctx));
        let exp = Exp::new(1.0 / mean_ns).expect("positive rate");
        exp.sample(ctx.rng()).ceil() as u64
    }
}

impl Agent for PoissonSource {
    fn start(&mut self, ctx: &mut Ctx<'_>) {
        if self.load <= 0.0 || self.peers.is_empty() {
            return;
        }
        let g = self.gap(ctx);
        ctx.set_timer(self.start_ns.saturating_sub(ctx.now()) + g, 0);
    }

    fn on_timer(&mut self, ctx: &mut Ctx<'_>, _token: u64) {
        if ctx.now() >= self.stop_ns {
            return;
        }
        let dst = self.peers[ctx.rng().gen_range(0..self.peers.len())];
        let flow = self.flow_base.wrapping_add(self.messages as u32);
        self.messages += 1;
        let mut left = self.message_bytes;
        let mut seq = 0;
        while left > 0 {
            let n = left.min(u64::from(self.payload)) as u32;
            let mut p = Packet::udp(ctx.ip(), dst, DATA_PORT + (flow % 1000) as u16, DATA_PORT, n);
            p.flow = flow;
            p.seq = seq;
            seq += 1;
            left -= u64::from(n);
            ctx.send(p);
        }
        let g = self.gap(ctx);
        ctx.set_timer(g, 0);
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WorkloadError {
    #[error("flow {flow}: unknown host {host:?}")]
    UnknownHost { flow: u32, host: String },
    #[error("flow {flow}: {what}")]
    Invalid { flow: u32, what: String },
}

fn host(topo: &Topology, flow: u32, name: &str) -> Result<(NodeId, u32), WorkloadError> {
    let n = topo.node(name).filter(|n| topo.nodes[*n].is_host());
    let n = n.ok_or_else(|| WorkloadError::UnknownHost { flow, host: name.to_string() })?;
    Ok((n, topo.host_ip(n).unwrap()))
}

fn secs(s: f64) -> u64 {
    (s * 1e9).round() as u64
}

/// Attaches one agent per flow.
pub fn install(sim: &mut Simulator, flows: &[FlowSpec]) -> Result<Vec<(NodeId, usize)>, WorkloadError> {
    let topo = sim.topology().clone();
    let mut out = Vec::new();
    for f in flows {
        let (src, src_ip) = host(&topo, f.id, &f.src)?;
        let invalid = |what: &str| WorkloadError::Invalid { flow: f.id, what: what.to_string() };
        if f.payload_bytes == 0 || f.payload_bytes as usize > topo.mtu - 28 {
            return Err(invalid("payload must be between 1 byte and the MTU"));
        }
        let stop_ns = f.stop_s.map_or(u64::MAX, secs);
        let agent: Box<dyn Agent> = match f.kind {
            FlowKind::Poisson { load, message_bytes } => {
                if !(load > 0.0 && load <= 1.0) || message_bytes == 0 {
                    return Err(invalid("poisson needs 0 < load <= 1 and a nonzero message size"));
                }
                let peers = topo.hosts().into_iter().filter(|h| *h != src).map(|h| topo.host_ip(h).unwrap()).collect();
                let mut p = PoissonSource::new(f.id, load, message_bytes, peers);
                p.payload = f.payload_bytes;
                p.start_ns = secs(f.start_s);
                p.stop_ns = stop_ns;
                Box::new(p)
            }
            kind => {
                let (_, dst_ip) = host(&topo, f.id, &f.dst)?;
                if dst_ip == src_ip {
                    return Err(invalid("source and destination are the same host"));
                }
                let mut s = match kind {
                    FlowKind::RateLimitedUdp { rate_bps } if rate_bps > 0.0 => UdpSource::cbr(f.id, dst_ip, rate_bps),
                    FlowKind::Bulk { bytes } => UdpSource::bulk(f.id, dst_ip, bytes),
                    FlowKind::OnOff { rate_bps, burst_bytes } if rate_bps > 0.0 && burst_bytes > 0 => {
                        UdpSource::on_off(f.id, dst_ip, rate_bps, burst_bytes)
                    }
                    _ => return Err(invalid("rates and burst sizes must be positive")),
                };
                s.payload = f.payload_bytes;
                s.vlan = f.vlan;
                s.start_ns = secs(f.start_s);
                s.stop_ns = stop_ns;
                Box::new(s)
            }
        };
        out.push((src, sim.add_agent(src, agent)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netsim::SimConfig;
    use crate::topology::{build_topology, TopologySpec};

    fn pair() -> Topology {
        let spec: TopologySpec = serde_json::from_str(
            r#"{"hosts": [{"name": "a", "ip": "10.0.0.1"}, {"name": "b", "ip": "10.0.0.2"}, {"name": "c", "ip": "10.0.0.3"}],
                "switches": [{"name": "s", "id": 1}],
                "links": [{"a": "a", "b": "s", "capacity_bps": 100000000, "delay_ns": 1000},
                          {"a": "b", "b": "s", "capacity_bps": 100000000, "delay_ns": 1000},
                          {"a": "c", "b": "s", "capacity_bps": 100000000, "delay_ns": 1000}]}"#,
        )
        .unwrap();
        build_topology(&spec).unwrap()
    }

    fn run(flows: &str, secs: f64) -> crate::netsim::TraceLog {
        let topo = pair();
        let doc: WorkloadDoc = serde_json::from_str(flows).unwrap();
        let mut sim = Simulator::new(&topo, SimConfig { duration_ns: (secs * 1e9) as u64, ..SimConfig::default() });
        install(&mut sim, &doc.flows).unwrap();
        sim.finish()
    }

    #[test]
    fn cbr_hits_its_rate() {
        let log = run(r#"{"flows": [{"id": 1, "src": "a", "dst": "b", "type": "rate_limited_udp", "rate_bps": 20000000}]}"#, 1.0);
        let wire: u64 = log.deliveries.iter().map(|d| wire_bytes(d.payload_bytes)).sum();
        let rate = wire as f64 * 8.0;
        assert!((rate - 20e6).abs() < 0.01 * 20e6, "{rate}");
        assert!(log.violations.is_empty());
    }

    #[test]
    fn bulk_and_poisson() {
        let log = run(
            r#"{"flows": [{"id": 1, "src": "a", "dst": "b", "type": "bulk", "bytes": 100000},
                          {"id": 100, "src": "c", "type": "poisson", "load": 0.3, "message_bytes": 10000}]}"#,
            1.0,
        );
        let bulk: u64 = log.deliveries.iter().filter(|d| d.flow == 1).map(|d| u64::from(d.payload_bytes)).sum();
        assert_eq!(bulk, 100_000);
        let poisson: u64 = log.deliveries.iter().filter(|d| d.flow >= 100).map(|d| u64::from(d.payload_bytes)).sum();
        // 30% of 100 Mb/s for one second, in payload bytes, within sampling noise.
        let expect = 0.3 * 100e6 / 8.0 * 1400.0 / 1442.0;
        assert!((poisson as f64 - expect).abs() < 0.2 * expect, "{poisson}");
    }

    #[test]
    fn unknown_hosts_are_rejected() {
        let topo = pair();
        let mut sim = Simulator::new(&topo, SimConfig::default());
        let doc: WorkloadDoc =
            serde_json::from_str(r#"{"flows": [{"id": 1, "src": "a", "dst": "zz", "type": "bulk", "bytes": 1}]}"#).unwrap();
        assert!(matches!(install(&mut sim, &doc.flows), Err(WorkloadError::UnknownHost { .. })));
    }
}
