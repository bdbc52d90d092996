// SPDX-License-Identifier: Apache-2.0

//! The dataplane shim: stamps outgoing packets, strips and routes executed TPPs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use tpp_core::record::ExecutedTppRecord;
use tpp_core::{Encapsulation, Flags};

use super::cp::{Aggregator, FiveTuple, TppControlPlane};
use crate::packet::{HostRecord, Packet};
use crate::topology::NodeId;

/// Payload of an echo: the hop index at which it turned around.
pub const ECHO_PAYLOAD_BYTES: u32 = 2;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ShimCounters {
    pub attached: u64,
    pub sampled_out: u64,
    pub mtu_exceeded: u64,
    pub stripped: u64,
    pub echoed: u64,
    pub records: u64,
    pub unknown_session: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transmit {
    Unchanged,
    Attached { handle: u64 },
    MtuExceeded { handle: u64 },
}

/// What a host does with an arriving packet.
#[derive(Debug, Default)]
pub struct Received {
    /// Packet for the application, TPP removed.
    pub deliver: Option<Packet>,
    pub record: Option<HostRecord>,
    pub echo: Option<Packet>,
}

pub struct Shim {
    pub cp: TppControlPlane,
    pub mtu: usize,
    pub counters: ShimCounters,
    host: NodeId,
    ip: u32,
    rng: ChaCha8Rng,
}

impl Shim {
    pub fn new(host: NodeId, ip: u32, mtu: usize, seed: u64) -> Shim {
        Shim { cp: TppControlPlane::new(), mtu, counters: ShimCounters::default(), host, ip, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn ip(&self) -> u32 {
        self.ip
    }

    /// Adds the first matching rule's TPP, with probability 1/N, in transparent mode.
    pub fn on_transmit(&mut self, pkt: &mut Packet) -> Transmit {
        if pkt.tpp.is_some() {
            return Transmit::Unchanged;
        }
        let t = FiveTuple {
            src_ip: pkt.src_ip,
            dst_ip: pkt.dst_ip,
            src_port: pkt.src_port,
            dst_port: pkt.dst_port,
            proto: pkt.proto,
        };
        let Some(rule) = self.cp.first_match(&t) else {
            return Transmit::Unchanged;
        };
        let handle = rule.handle;
        if rule.sample_frequency > 1 && self.rng.gen_range(0..rule.sample_frequency) != 0 {
            self.counters.sampled_out += 1;
            return Transmit::Unchanged;
        }
        pkt.tpp = Some(rule.tpp.clone());
        pkt.encap = Encapsulation::Transparent;
        if pkt.l3_len() > self.mtu {
            pkt.tpp = None;
            self.counters.mtu_exceeded += 1;
            return Transmit::MtuExceeded { handle };
        }
        self.counters.attached += 1;
        Transmit::Attached { handle }
    }

    pub fn on_receive(&mut self, mut pkt: Packet, now_ns: u64) -> Received {
        let Some(tpp) = pkt.tpp.take() else {
            return Received { deliver: Some(pkt), ..Received::default() };
        };
        let mut out = Received::default();
        match pkt.encap {
            Encapsulation::Transparent => {
                self.counters.stripped += 1;
                let inner = Packet { tpp: None, ..pkt.clone() };
                out.deliver = Some(inner);
                match self.cp.app_for_session(tpp.header.session_id).map(|a| a.aggregator) {
                    None => self.counters.unknown_session += 1,
                    Some(Aggregator::Local) => {
                        self.counters.records += 1;
                        let record = ExecutedTppRecord::from_tpp(&tpp, pkt.src_ip, now_ns);
                        out.record = Some(self.host_record(record, None, &pkt, pkt.dst_ip));
                    }
                    Some(Aggregator::Source) => {
                        pkt.payload_bytes = 0;
                        pkt.tpp = Some(tpp);
                        out.echo = Some(self.echo(pkt));
                    }
                }
            }
            Encapsulation::Standalone if !tpp.header.flags.contains(Flags::ECHOED) => {
                pkt.tpp = Some(tpp);
                out.echo = Some(self.echo(pkt));
            }
            Encapsulation::Standalone => {
                if self.cp.app_for_session(tpp.header.session_id).is_none() {
                    self.counters.unknown_session += 1;
                } else {
                    self.counters.records += 1;
                    let record = ExecutedTppRecord::from_tpp(&tpp, self.ip, now_ns);
                    out.record = Some(self.host_record(record, pkt.turnaround, &pkt, pkt.src_ip));
                }
            }
        }
        out
    }

    fn echo(&mut self, mut pkt: Packet) -> Packet {
        self.counters.echoed += 1;
        let tpp = pkt.tpp.as_mut().expect("echo carries a TPP");
        tpp.header.flags.set(Flags::ECHOED);
        pkt.turnaround = Some(tpp.header.hop_index);
        pkt.encap = Encapsulation::Standalone;
        std::mem::swap(&mut pkt.src_ip, &mut pkt.dst_ip);
        std::mem::swap(&mut pkt.src_port, &mut pkt.dst_port);
        pkt.src_port = tpp_core::frame::TPP_UDP_PORT;
        pkt.dst_port = tpp_core::frame::TPP_UDP_PORT;
        pkt.payload_bytes = ECHO_PAYLOAD_BYTES;
        pkt
    }

    fn host_record(&self, record: ExecutedTppRecord, turnaround: Option<u8>, pkt: &Packet, dst_ip: u32) -> HostRecord {
        HostRecord {
            host: self.host,
            record,
            turnaround,
            dst_ip,
            flow: pkt.flow,
            seq: pkt.seq,
            born_ns: pkt.born_ns,
            path: pkt.path.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::endhost::cp::{AppRegistration, Filter, PolicyDoc, OpDoc};
    use tpp_core::apps::microburst::MICROBURST_SOURCE;
    use tpp_core::asm::assemble;

    fn shim(n: u32) -> Shim {
        let mut s = Shim::new(0, 1, 1500, 9);
        s.cp.register_app(AppRegistration { appid: 1, name: "mb".into(), session: 5, aggregator: Aggregator::Local }).unwrap();
        for (a, b) in [("[Switch:SwitchID]", "[Switch:SwitchID]"), ("[PacketMetadata:OutputPort]", "[PacketMetadata:OutputPort]"), ("[Queue:QueueOccupancy]", "[Queue:QueueOccupancy]")] {
            s.cp.add_policy(PolicyDoc { appid: 1, op: OpDoc::Read, start: a.into(), end: b.into() }.to_policy().unwrap()).unwrap();
        }
        let mut t = assemble(MICROBURST_SOURCE).unwrap();
        t.memory = vec![0; 30];
        s.cp.add_tpp("dst=0.0.0.2".parse::<Filter>().unwrap(), &t.encode().unwrap(), n, 0, 1).unwrap();
        s
    }

    #[test]
    fn attach_strip_and_mtu() {
        let mut s = shim(1);
        let mut p = Packet::udp(1, 2, 10, 20, 1000);
        assert!(matches!(s.on_transmit(&mut p), Transmit::Attached { .. }));
        assert_eq!(p.tpp.as_ref().unwrap().header.session_id, 5);
        let mut other = Packet::udp(1, 3, 10, 20, 1000);
        assert_eq!(s.on_transmit(&mut other), Transmit::Unchanged);
        let mut big = Packet::udp(1, 2, 10, 20, 1472);
        assert!(matches!(s.on_transmit(&mut big), Transmit::MtuExceeded { .. }));
        assert!(big.tpp.is_none());
        assert_eq!(s.counters.mtu_exceeded, 1);

        let r = s.on_receive(p.clone(), 50);
        let inner = r.deliver.unwrap();
        assert!(inner.tpp.is_none());
        assert_eq!(inner.payload_bytes, 1000);
        assert_eq!(r.record.unwrap().record.session_id, 5);
        assert!(r.echo.is_none());

        let mut unknown = p;
        unknown.tpp.as_mut().unwrap().header.session_id = 99;
        let r = s.on_receive(unknown, 60);
        assert!(r.deliver.is_some() && r.record.is_none());
        assert_eq!(s.counters.unknown_session, 1);
    }

    #[test]
    fn standalone_echo_then_record() {
        let mut s = shim(1);
        let mut t = assemble(MICROBURST_SOURCE).unwrap();
        t.header.session_id = 5;
        t.header.hop_index = 2;
        let probe = Packet::standalone(7, 1, t);
        let r = s.on_receive(probe, 10);
        let echo = r.echo.unwrap();
        assert!(r.deliver.is_none());
        assert_eq!((echo.src_ip, echo.dst_ip, echo.turnaround), (1, 7, Some(2)));
        assert!(echo.tpp.as_ref().unwrap().header.flags.contains(Flags::ECHOED));
        let back = s.on_receive(echo, 20);
        let rec = back.record.unwrap();
        assert_eq!(rec.turnaround, Some(2));
        assert_eq!(rec.dst_ip, 1);
        assert!(back.echo.is_none());
    }

    #[test]
    fn sampling_rate() {
        let mut s = shim(4);
        let m = 20_000;
        let hits = (0..m)
            .filter(|_| {
                let mut p = Packet::udp(1, 2, 1, 1, 100);
                matches!(s.on_transmit(&mut p), Transmit::Attached { .. })
            })
            .count() as f64;
        let p = 0.25;
        let sigma = (m as f64 * p * (1.0 - p)).sqrt();
        assert!((hits - m as f64 * p).abs() <= 3.0 * sigma, "{hits}");
    }
}
