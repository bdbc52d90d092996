// SPDX-License-Identifier: Apache-2.0

//! Simulated packets and the records end-hosts extract from them.

use serde::Serialize;
use tpp_core::frame::{ETH_HEADER_BYTES, IPPROTO_UDP, IPV4_HEADER_BYTES, TRANSPARENT_EXTRA_BYTES, UDP_HEADER_BYTES};
use tpp_core::record::ExecutedTppRecord;
use tpp_core::{Encapsulation, TppProgram};

use crate::topology::NodeId;

/// One switch traversal, as the simulator saw it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PathHop {
    pub node: NodeId,
    pub switch_id: u16,
    pub in_port: u8,
    pub out_port: u8,
    pub queue: u8,
    /// Forwarding entry that decided the output port.
    pub entry_id: u16,
    pub time_ns: u64,
    /// Bytes in the egress queue once this packet joined it, by the simulator's own count.
    pub queue_bytes: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    pub id: u64,
    pub flow: u32,
    pub seq: u64,
    pub src_ip: u32,
    pub dst_ip: u32,
    pub src_port: u16,
    pub dst_port: u16,
    pub proto: u8,
    pub vlan: u16,
    pub queue: u8,
    /// UDP payload of the (inner) packet; for a standalone TPP, bytes after the TPP.
    pub payload_bytes: u32,
    pub tpp: Option<TppProgram>,
    pub encap: Encapsulation,
    pub born_ns: u64,
    /// Hops where the packet, or the TPP it carries, was switched. Ground truth.
    pub path: Vec<PathHop>,
    /// Hop index at which a standalone TPP was echoed.
    pub turnaround: Option<u8>,
}

impl Packet {
    pub fn udp(src_ip: u32, dst_ip: u32, src_port: u16, dst_port: u16, payload_bytes: u32) -> Packet {
        Packet {
            id: 0,
            flow: 0,
            seq: 0,
            src_ip,
            dst_ip,
            src_port,
            dst_port,
            proto: IPPROTO_UDP,
            vlan: 0,
            queue: 0,
            payload_bytes,
            tpp: None,
            encap: Encapsulation::Transparent,
            born_ns: 0,
            path: Vec::new(),
            turnaround: None,
        }
    }

    pub fn standalone(src_ip: u32, dst_ip: u32, tpp: TppProgram) -> Packet {
        let port = tpp_core::frame::TPP_UDP_PORT;
        let mut p = Packet::udp(src_ip, dst_ip, port, port, 0);
        p.tpp = Some(tpp);
        p.encap = Encapsulation::Standalone;
        p
    }

    pub fn is_standalone(&self) -> bool {
        self.tpp.is_some() && self.encap == Encapsulation::Standalone
    }

    /// Bytes of TPP on the wire, including transparent-mode framing.
    pub fn tpp_bytes(&self) -> usize {
        match &self.tpp {
            None => 0,
            Some(t) if self.encap == Encapsulation::Transparent => t.encoded_len() + TRANSPARENT_EXTRA_BYTES,
            Some(t) => t.encoded_len(),
        }
    }

    /// Bytes above Ethernet: what the MTU limits.
    pub fn l3_len(&self) -> usize {
        IPV4_HEADER_BYTES + UDP_HEADER_BYTES + self.payload_bytes as usize + self.tpp_bytes()
    }

    pub fn wire_len(&self) -> usize {
        ETH_HEADER_BYTES + self.l3_len()
    }

    /// Bytes of the packet an application sees, TPP removed.
    pub fn inner_l3_len(&self) -> usize {
        IPV4_HEADER_BYTES + UDP_HEADER_BYTES + self.payload_bytes as usize
    }

    pub fn flow_hash(&self) -> u32 {
        let k = (u64::from(self.src_ip) << 32 | u64::from(self.dst_ip))
            ^ (u64::from(self.src_port) << 16 | u64::from(self.dst_port)).rotate_left(17)
            ^ u64::from(self.proto) << 56;
        tpp_core::apps::sketch::fmix64(k) as u32
    }
}

/// An executed TPP delivered to an end-host.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HostRecord {
    pub host: NodeId,
    pub record: ExecutedTppRecord,
    /// Set when the TPP came back as an echo.
    pub turnaround: Option<u8>,
    /// Destination of the packet that carried the TPP out.
    pub dst_ip: u32,
    pub flow: u32,
    pub seq: u64,
    pub born_ns: u64,
    pub path: Vec<PathHop>,
}

impl HostRecord {
    /// Hops executed before the TPP turned around, or all of them.
    pub fn forward_hops(&self) -> u8 {
        self.turnaround.unwrap_or(self.record.hop_count)
    }

    pub fn rtt_ns(&self) -> u64 {
        self.record.receive_time_ns.saturating_sub(self.born_ns)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tpp_core::apps::microburst::MICROBURST_SOURCE;
    use tpp_core::asm::assemble;

    #[test]
    fn sizes() {
        let mut p = Packet::udp(1, 2, 3, 4, 1472);
        assert_eq!(p.l3_len(), 1500);
        assert_eq!(p.wire_len(), 1514);
        let mut t = assemble(MICROBURST_SOURCE).unwrap();
        t.memory = vec![0; 30];
        p.tpp = Some(t.clone());
        assert_eq!(p.l3_len(), 1500 + 54 + 2);
        let s = Packet::standalone(1, 2, t);
        assert_eq!(s.wire_len(), 14 + 20 + 8 + 54);
    }
}
