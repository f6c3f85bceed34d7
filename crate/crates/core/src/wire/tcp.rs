use std::fmt;
use std::net::Ipv4Addr;

use super::checksum::{tcp_checksum, transport_verifies};
use super::ipv4::PROTO_TCP;
use super::{need, WireError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct TcpFlags {
    pub fin: bool,
    pub syn: bool,
    pub rst: bool,
    pub psh: bool,
    pub ack: bool,
}

impl TcpFlags {
    pub const SYN: TcpFlags = TcpFlags {
        fin: false,
        syn: true,
        rst: false,
        psh: false,
        ack: false,
    };
    pub const SYN_ACK: TcpFlags = TcpFlags {
        fin: false,
        syn: true,
        rst: false,
        psh: false,
        ack: true,
    };
    pub const ACK: TcpFlags = TcpFlags {
        fin: false,
        syn: false,
        rst: false,
        psh: false,
        ack: true,
    };
    pub const PSH_ACK: TcpFlags = TcpFlags {
        fin: false,
        syn: false,
        rst: false,
        psh: true,
        ack: true,
    };
    pub const FIN_ACK: TcpFlags = TcpFlags {
        fin: true,
        syn: false,
        rst: false,
        psh: false,
        ack: true,
    };
    pub const RST: TcpFlags = TcpFlags {
        fin: false,
        syn: false,
        rst: true,
        psh: false,
        ack: false,
    };
    pub const RST_ACK: TcpFlags = TcpFlags {
        fin: false,
        syn: false,
        rst: true,
        psh: false,
        ack: true,
    };

    pub fn bits(&self) -> u8 {
        (self.fin as u8)
            | (self.syn as u8) << 1
            | (self.rst as u8) << 2
            | (self.psh as u8) << 3
            | (self.ack as u8) << 4
    }

    pub fn from_bits(b: u8) -> Self {
        Self {
            fin: b & 0x01 != 0,
            syn: b & 0x02 != 0,
            rst: b & 0x04 != 0,
            psh: b & 0x08 != 0,
            ack: b & 0x10 != 0,
        }
    }
}

impl fmt::Display for TcpFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names = [
            (self.syn, 'S'),
            (self.ack, 'A'),
            (self.fin, 'F'),
            (self.rst, 'R'),
            (self.psh, 'P'),
        ];
        for (on, c) in names {
            if on {
                write!(f, "{c}")?;
            }
        }
        Ok(())
    }
}

/// TCP segment without options.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TcpSegment {
    pub src_port: u16,
    pub dst_port: u16,
    pub seq: u32,
    pub ack: u32,
    pub flags: TcpFlags,
    pub window: u16,
    pub payload: Vec<u8>,
}

impl TcpSegment {
    pub const HEADER_LEN: usize = 20;

    /// Sequence space consumed by this segment (payload plus SYN/FIN).
    pub fn seq_len(&self) -> u32 {
        self.payload.len() as u32 + self.flags.syn as u32 + self.flags.fin as u32
    }

    pub fn encode(&self, src: Ipv4Addr, dst: Ipv4Addr) -> Vec<u8> {
        let mut out = Vec::with_capacity(Self::HEADER_LEN + self.payload.len());
        out.extend_from_slice(&self.src_port.to_be_bytes());
        out.extend_from_slice(&self.dst_port.to_be_bytes());
        out.extend_from_slice(&self.seq.to_be_bytes());
        out.extend_from_slice(&self.ack.to_be_bytes());
        out.push(5 << 4);
        out.push(self.flags.bits());
        out.extend_from_slice(&self.window.to_be_bytes());
        out.extend_from_slice(&[0, 0, 0, 0]);
        out.extend_from_slice(&self.payload);
        let c = tcp_checksum(src, dst, &out);
        out[16..18].copy_from_slice(&c.to_be_bytes());
        out
    }

    /// Decodes and verifies the pseudo-header checksum. Options, if present, are skipped.
    pub fn decode(src: Ipv4Addr, dst: Ipv4Addr, raw: &[u8]) -> Result<Self, WireError> {
        need("tcp header", raw, Self::HEADER_LEN)?;
        let offset = usize::from(raw[12] >> 4) * 4;
        if offset < Self::HEADER_LEN {
            return Err(WireError::Malformed(
                "tcp segment",
                "data offset below 5 words",
            ));
        }
        need("tcp header", raw, offset)?;
        if !transport_verifies(src, dst, PROTO_TCP, raw) {
            return Err(WireError::Checksum("tcp"));
        }
        let be32 = |at: usize| u32::from_be_bytes([raw[at], raw[at + 1], raw[at + 2], raw[at + 3]]);
        Ok(Self {
            src_port: u16::from_be_bytes([raw[0], raw[1]]),
            dst_port: u16::from_be_bytes([raw[2], raw[3]]),
            seq: be32(4),
            ack: be32(8),
            flags: TcpFlags::from_bits(raw[13]),
            window: u16::from_be_bytes([raw[14], raw[15]]),
            payload: raw[offset..].to_vec(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn syn_self_verifies() {
        let src = Ipv4Addr::new(10, 0, 2, 2);
        let dst = Ipv4Addr::new(10, 0, 2, 15);
        let syn = TcpSegment {
            src_port: 49152,
            dst_port: 80,
            seq: 1,
            ack: 0,
            flags: TcpFlags::SYN,
            window: 8192,
            payload: vec![],
        };
        let raw = syn.encode(src, dst);
        assert!(transport_verifies(src, dst, PROTO_TCP, &raw));
        assert_eq!(TcpSegment::decode(src, dst, &raw).unwrap(), syn);
        assert!(TcpSegment::decode(src, Ipv4Addr::new(10, 0, 2, 16), &raw).is_err());
    }

    #[test]
    fn flag_bits() {
        for b in 0u8..32 {
            assert_eq!(TcpFlags::from_bits(b).bits(), b);
        }
        assert_eq!(TcpFlags::SYN_ACK.to_string(), "SA");
    }
}
