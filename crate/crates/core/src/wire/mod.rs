//! Byte-exact encoding and decoding of the message units that flow between the
//! guest, the MAC device model and the user-mode network stack.
//!
//! Layers covered: Ethernet II, ARP, IPv4 (no options, no fragments), UDP, TCP,
//! the DHCP subset used on the virtual subnet, and HTTP/1.1 request/response
//! framing. All functions are pure and operate on byte slices.

mod arp;
mod checksum;
mod dhcp;
mod ethernet;
pub mod http;
mod ipv4;
mod tcp;
mod udp;

pub use arp::{ArpOperation, ArpPacket};
pub use checksum::{ipv4_checksum, ipv4_header_verifies, tcp_checksum, udp_checksum};
pub use dhcp::{DhcpMessage, DhcpMessageType, DhcpOp, DHCP_CLIENT_PORT, DHCP_SERVER_PORT};
pub use ethernet::{
    decode_frame, encode_frame, EthernetFrame, MacAddress, ETHERTYPE_ARP, ETHERTYPE_IPV4,
    ETH_HEADER_LEN, MAX_FRAME_LEN, MAX_PAYLOAD_LEN, MIN_FRAME_LEN,
};
pub use ipv4::{Ipv4Packet, PROTO_TCP, PROTO_UDP};
pub use tcp::{TcpFlags, TcpSegment};
pub use udp::UdpDatagram;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("truncated {0}: need {1} bytes, have {2}")]
    Truncated(&'static str, usize, usize),
    #[error("payload of {0} bytes exceeds {1}-byte limit")]
    Oversize(usize, usize),
    #[error("invalid argument: {0}")]
    Argument(&'static str),
    #[error("{0} checksum mismatch")]
    Checksum(&'static str),
    #[error("malformed {0}: {1}")]
    Malformed(&'static str, &'static str),
}

pub(crate) fn need(what: &'static str, raw: &[u8], len: usize) -> Result<(), WireError> {
    if raw.len() < len {
        Err(WireError::Truncated(what, len, raw.len()))
    } else {
        Ok(())
    }
}
