use std::net::Ipv4Addr;

use super::checksum::{transport_verifies, udp_checksum};
use super::ipv4::PROTO_UDP;
use super::{need, WireError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UdpDatagram {
    pub src_port: u16,
    pub dst_port: u16,
    pub payload: Vec<u8>,
}

impl UdpDatagram {
    pub fn encode(&self, src: Ipv4Addr, dst: Ipv4Addr) -> Vec<u8> {
        let len = 8 + self.payload.len();
        let mut out = Vec::with_capacity(len);
        out.extend_from_slice(&self.src_port.to_be_bytes());
        out.extend_from_slice(&self.dst_port.to_be_bytes());
        out.extend_from_slice(&(len as u16).to_be_bytes());
        out.extend_from_slice(&[0, 0]);
        out.extend_from_slice(&self.payload);
        let c = udp_checksum(src, dst, &out);
        out[6..8].copy_from_slice(&c.to_be_bytes());
        out
    }

    /// A zero checksum field means "not computed" and is accepted.
    pub fn decode(src: Ipv4Addr, dst: Ipv4Addr, raw: &[u8]) -> Result<Self, WireError> {
        need("udp header", raw, 8)?;
        let len = usize::from(u16::from_be_bytes([raw[4], raw[5]]));
        if len < 8 {
            return Err(WireError::Malformed(
                "udp datagram",
                "length below header length",
            ));
        }
        need("udp datagram", raw, len)?;
        let raw = &raw[..len];
        if raw[6..8] != [0, 0] && !transport_verifies(src, dst, PROTO_UDP, raw) {
            return Err(WireError::Checksum("udp"));
        }
        Ok(Self {
            src_port: u16::from_be_bytes([raw[0], raw[1]]),
            dst_port: u16::from_be_bytes([raw[2], raw[3]]),
            payload: raw[8..].to_vec(),
        })
    }
}
