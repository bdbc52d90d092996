// SPDX-License-Identifier: Apache-2.0

//! Ethernet framing for TPPs.
//!
//! Transparent mode wraps an ordinary frame: the outer ethertype is the TPP
//! ethertype, the TPP follows the Ethernet header, then the inner ethertype and
//! the inner payload. Standalone mode carries the TPP as the payload of an
//! IPv4/UDP datagram addressed to the TPP port; anything after the TPP is
//! opaque UDP payload.

use alloc::vec::Vec;

use crate::program::{CodecError, TppProgram};

pub const TPP_ETHERTYPE: u16 = 0x6666;
pub const TPP_UDP_PORT: u16 = 0x6666;
pub const ETHERTYPE_IPV4: u16 = 0x0800;
pub const IPPROTO_UDP: u8 = 17;
pub const ETH_HEADER_BYTES: usize = 14;
pub const IPV4_HEADER_BYTES: usize = 20;
pub const UDP_HEADER_BYTES: usize = 8;
/// Extra bytes transparent mode adds besides the TPP itself (inner ethertype).
pub const TRANSPARENT_EXTRA_BYTES: usize = 2;

/// Identifiers the parser uses to recognise TPPs; reprogrammable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameConfig {
    pub ethertype: u16,
    pub udp_port: u16,
}

impl Default for FrameConfig {
    fn default() -> Self {
        FrameConfig { ethertype: TPP_ETHERTYPE, udp_port: TPP_UDP_PORT }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct MacAddr(pub [u8; 6]);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Ipv4Addr(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encapsulation {
    Transparent,
    Standalone,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Frame {
    /// Not a TPP.
    Plain { dst: MacAddr, src: MacAddr, ethertype: u16, payload: Vec<u8> },
    Transparent { dst: MacAddr, src: MacAddr, tpp: TppProgram, inner_ethertype: u16, inner: Vec<u8> },
    Standalone {
        dst: MacAddr,
        src: MacAddr,
        ip_src: Ipv4Addr,
        ip_dst: Ipv4Addr,
        udp_src: u16,
        tpp: TppProgram,
        payload: Vec<u8>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FrameError {
    #[error("frame is not a TPP (no TPP ethertype or UDP port)")]
    BadMagic,
    #[error("frame truncated")]
    Truncated,
    #[error(transparent)]
    Codec(#[from] CodecError),
}

fn ipv4_checksum(header: &[u8]) -> u16 {
    crate::program::ones_complement_checksum(header)
}

fn push_eth(out: &mut Vec<u8>, dst: MacAddr, src: MacAddr, ethertype: u16) {
    out.extend_from_slice(&dst.0);
    out.extend_from_slice(&src.0);
    out.extend_from_slice(&ethertype.to_be_bytes());
}

impl Frame {
    pub fn tpp(&self) -> Option<&TppProgram> {
        match self {
            Frame::Plain { .. } => None,
            Frame::Transparent { tpp, .. } | Frame::Standalone { tpp, .. } => Some(tpp),
        }
    }

    pub fn encapsulation(&self) -> Option<Encapsulation> {
        match self {
            Frame::Plain { .. } => None,
            Frame::Transparent { .. } => Some(Encapsulation::Transparent),
            Frame::Standalone { .. } => Some(Encapsulation::Standalone),
        }
    }

    /// Wire length without computing the encoding.
    pub fn wire_len(&self) -> usize {
        match self {
            Frame::Plain { payload, .. } => ETH_HEADER_BYTES + payload.len(),
            Frame::Transparent { tpp, inner, .. } => {
                ETH_HEADER_BYTES + tpp.encoded_len() + TRANSPARENT_EXTRA_BYTES + inner.len()
            }
            Frame::Standalone { tpp, payload, .. } => {
                ETH_HEADER_BYTES + IPV4_HEADER_BYTES + UDP_HEADER_BYTES + tpp.encoded_len() + payload.len()
            }
        }
    }

    pub fn encode(&self, cfg: &FrameConfig) -> Result<Vec<u8>, FrameError> {
        let mut out = Vec::with_capacity(self.wire_len());
        match self {
            Frame::Plain { dst, src, ethertype, payload } => {
                push_eth(&mut out, *dst, *src, *ethertype);
                out.extend_from_slice(payload);
            }
            Frame::Transparent { dst, src, tpp, inner_ethertype, inner } => {
                push_eth(&mut out, *dst, *src, cfg.ethertype);
                out.extend_from_slice(&tpp.encode()?);
                out.extend_from_slice(&inner_ethertype.to_be_bytes());
                out.extend_from_slice(inner);
            }
            Frame::Standalone { dst, src, ip_src, ip_dst, udp_src, tpp, payload } => {
                push_eth(&mut out, *dst, *src, ETHERTYPE_IPV4);
                let tpp_bytes = tpp.encode()?;
                let udp_len = UDP_HEADER_BYTES + tpp_bytes.len() + payload.len();
                let total_len = (IPV4_HEADER_BYTES + udp_len) as u16;
                let mut ip = [0u8; IPV4_HEADER_BYTES];
                ip[0] = 0x45;
                ip[2..4].copy_from_slice(&total_len.to_be_bytes());
                ip[8] = 64;
                ip[9] = IPPROTO_UDP;
                ip[12..16].copy_from_slice(&ip_src.0.to_be_bytes());
                ip[16..20].copy_from_slice(&ip_dst.0.to_be_bytes());
                let csum = ipv4_checksum(&ip);
                ip[10..12].copy_from_slice(&csum.to_be_bytes());
                out.extend_from_slice(&ip);
                out.extend_from_slice(&udp_src.to_be_bytes());
                out.extend_from_slice(&cfg.udp_port.to_be_bytes());
                out.extend_from_slice(&(udp_len as u16).to_be_bytes());
                out.extend_from_slice(&[0, 0]);
                out.extend_from_slice(&tpp_bytes);
                out.extend_from_slice(payload);
            }
        }
        Ok(out)
    }

    /// Parses any Ethernet frame; non-TPP frames come back as `Plain`.
    pub fn decode(bytes: &[u8], cfg: &FrameConfig) -> Result<Frame, FrameError> {
        if bytes.len() < ETH_HEADER_BYTES {
            return Err(FrameError::Truncated);
        }
        let mut dst = MacAddr::default();
        let mut src = MacAddr::default();
        dst.0.copy_from_slice(&bytes[0..6]);
        src.0.copy_from_slice(&bytes[6..12]);
        let ethertype = u16::from_be_bytes([bytes[12], bytes[13]]);
        let body = &bytes[ETH_HEADER_BYTES..];
        if ethertype == cfg.ethertype {
            let (tpp, used) = TppProgram::decode_prefix(body)?;
            let rest = &body[used..];
            if rest.len() < TRANSPARENT_EXTRA_BYTES {
                return Err(FrameError::Truncated);
            }
            return Ok(Frame::Transparent {
                dst,
                src,
                tpp,
                inner_ethertype: u16::from_be_bytes([rest[0], rest[1]]),
                inner: rest[TRANSPARENT_EXTRA_BYTES..].to_vec(),
            });
        }
        if ethertype == ETHERTYPE_IPV4 && body.len() >= IPV4_HEADER_BYTES + UDP_HEADER_BYTES {
            let ihl = usize::from(body[0] & 0x0F) * 4;
            let is_udp = body[9] == IPPROTO_UDP;
            if is_udp && ihl >= IPV4_HEADER_BYTES && body.len() >= ihl + UDP_HEADER_BYTES {
                let udp = &body[ihl..];
                let dport = u16::from_be_bytes([udp[2], udp[3]]);
                if dport == cfg.udp_port {
                    let ip_src = Ipv4Addr(u32::from_be_bytes([body[12], body[13], body[14], body[15]]));
                    let ip_dst = Ipv4Addr(u32::from_be_bytes([body[16], body[17], body[18], body[19]]));
                    let udp_src = u16::from_be_bytes([udp[0], udp[1]]);
                    let (tpp, used) = TppProgram::decode_prefix(&udp[UDP_HEADER_BYTES..])?;
                    let payload = udp[UDP_HEADER_BYTES + used..].to_vec();
                    return Ok(Frame::Standalone { dst, src, ip_src, ip_dst, udp_src, tpp, payload });
                }
            }
        }
        Ok(Frame::Plain { dst, src, ethertype, payload: body.to_vec() })
    }

    /// Like [`Frame::decode`] but fails with `BadMagic` unless the frame carries a TPP.
    pub fn decode_tpp(bytes: &[u8], cfg: &FrameConfig) -> Result<Frame, FrameError> {
        match Frame::decode(bytes, cfg)? {
            Frame::Plain { .. } => Err(FrameError::BadMagic),
            f => Ok(f),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::Instruction;
    use crate::memmap::Address;

    fn tpp() -> TppProgram {
        TppProgram::new(alloc::vec![Instruction::Push { addr: Address(0xB000) }], 1, 10)
    }

    #[test]
    fn transparent_round_trip() {
        let f = Frame::Transparent {
            dst: MacAddr([1; 6]),
            src: MacAddr([2; 6]),
            tpp: tpp(),
            inner_ethertype: ETHERTYPE_IPV4,
            inner: alloc::vec![9; 40],
        };
        let cfg = FrameConfig::default();
        let bytes = f.encode(&cfg).unwrap();
        assert_eq!(bytes.len(), f.wire_len());
        assert_eq!(&bytes[12..14], &[0x66, 0x66]);
        assert_eq!(Frame::decode_tpp(&bytes, &cfg).unwrap(), f);
    }

    #[test]
    fn standalone_round_trip() {
        let f = Frame::Standalone {
            dst: MacAddr([1; 6]),
            src: MacAddr([2; 6]),
            ip_src: Ipv4Addr(0x0A00_0001),
            ip_dst: Ipv4Addr(0x0A00_0002),
            udp_src: 4000,
            tpp: tpp(),
            payload: alloc::vec![0, 3],
        };
        let cfg = FrameConfig::default();
        let bytes = f.encode(&cfg).unwrap();
        assert_eq!(bytes.len(), f.wire_len());
        assert_eq!(Frame::decode_tpp(&bytes, &cfg).unwrap(), f);
    }

    #[test]
    fn plain_frames_are_bad_magic() {
        let f = Frame::Plain { dst: MacAddr([1; 6]), src: MacAddr([2; 6]), ethertype: 0x0806, payload: alloc::vec![0; 28] };
        let cfg = FrameConfig::default();
        let bytes = f.encode(&cfg).unwrap();
        assert_eq!(Frame::decode(&bytes, &cfg).unwrap(), f);
        assert_eq!(Frame::decode_tpp(&bytes, &cfg), Err(FrameError::BadMagic));
    }

    #[test]
    fn reprogrammed_ethertype_is_honoured() {
        let cfg = FrameConfig { ethertype: 0x88B5, udp_port: 9999 };
        let f = Frame::Transparent { dst: MacAddr([1; 6]), src: MacAddr([2; 6]), tpp: tpp(), inner_ethertype: 0x0800, inner: alloc::vec![] };
        let bytes = f.encode(&cfg).unwrap();
        assert_eq!(Frame::decode_tpp(&bytes, &FrameConfig::default()), Err(FrameError::BadMagic));
        assert_eq!(Frame::decode_tpp(&bytes, &cfg).unwrap(), f);
    }
}
