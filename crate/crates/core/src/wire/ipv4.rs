use std::net::Ipv4Addr;

use super::checksum::{ipv4_checksum, ipv4_header_verifies};
use super::{need, WireError};

pub const PROTO_TCP: u8 = 6;
pub const PROTO_UDP: u8 = 17;

const HEADER_LEN: usize = 20;
const FLAG_DF: u16 = 0x4000;
const FLAG_MF: u16 = 0x2000;

/// IPv4 packet with a fixed 20-byte header.
///
/// `header_checksum` is filled in by [`Ipv4Packet::decode`]; `encode` always
/// recomputes it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ipv4Packet {
    pub src: Ipv4Addr,
    pub dst: Ipv4Addr,
    pub protocol: u8,
    pub ttl: u8,
    pub ident: u16,
    pub header_checksum: u16,
    pub payload: Vec<u8>,
}

impl Ipv4Packet {
    pub fn new(src: Ipv4Addr, dst: Ipv4Addr, protocol: u8, payload: Vec<u8>) -> Self {
        Self {
            src,
            dst,
            protocol,
            ttl: 64,
            ident: 0,
            header_checksum: 0,
            payload,
        }
    }

    pub fn header_len(&self) -> usize {
        HEADER_LEN
    }

    pub fn total_len(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }

    pub fn encode(&self) -> Result<Vec<u8>, WireError> {
        let total = self.total_len();
        if total > usize::from(u16::MAX) {
            return Err(WireError::Oversize(
                self.payload.len(),
                usize::from(u16::MAX) - HEADER_LEN,
            ));
        }
        let mut out = Vec::with_capacity(total);
        out.push(0x45);
        out.push(0);
        out.extend_from_slice(&(total as u16).to_be_bytes());
        out.extend_from_slice(&self.ident.to_be_bytes());
        out.extend_from_slice(&FLAG_DF.to_be_bytes());
        out.push(self.ttl);
        out.push(self.protocol);
        out.extend_from_slice(&[0, 0]);
        out.extend_from_slice(&self.src.octets());
        out.extend_from_slice(&self.dst.octets());
        let csum = ipv4_checksum(&out)?;
        out[10..12].copy_from_slice(&csum.to_be_bytes());
        out.extend_from_slice(&self.payload);
        Ok(out)
    }

    /// Decodes a packet; trailing bytes past the total-length field (link padding) are ignored.
    pub fn decode(raw: &[u8]) -> Result<Self, WireError> {
        need("ipv4 header", raw, HEADER_LEN)?;
        if raw[0] >> 4 != 4 {
            return Err(WireError::Malformed("ipv4 packet", "version is not 4"));
        }
        if raw[0] & 0x0F != 5 {
            return Err(WireError::Malformed(
                "ipv4 packet",
                "options are not supported",
            ));
        }
        let total = usize::from(u16::from_be_bytes([raw[2], raw[3]]));
        if total < HEADER_LEN {
            return Err(WireError::Malformed(
                "ipv4 packet",
                "total length below header length",
            ));
        }
        need("ipv4 packet", raw, total)?;
        let frag = u16::from_be_bytes([raw[6], raw[7]]);
        if frag & FLAG_MF != 0 || frag & 0x1FFF != 0 {
            return Err(WireError::Malformed(
                "ipv4 packet",
                "fragments are not supported",
            ));
        }
        if !ipv4_header_verifies(&raw[..HEADER_LEN]) {
            return Err(WireError::Checksum("ipv4 header"));
        }
        Ok(Self {
            src: Ipv4Addr::new(raw[12], raw[13], raw[14], raw[15]),
            dst: Ipv4Addr::new(raw[16], raw[17], raw[18], raw[19]),
            protocol: raw[9],
            ttl: raw[8],
            ident: u16::from_be_bytes([raw[4], raw[5]]),
            header_checksum: u16::from_be_bytes([raw[10], raw[11]]),
            payload: raw[HEADER_LEN..total].to_vec(),
        })
    }
}
