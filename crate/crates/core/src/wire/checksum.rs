//! Internet checksum (RFC 1071) helpers.

use std::net::Ipv4Addr;

use super::WireError;

/// Folds a byte slice into a running 32-bit ones-complement accumulator.
///
/// Odd-length input is treated as if padded with one zero byte.
pub(crate) fn accumulate(mut sum: u32, data: &[u8]) -> u32 {
    let mut chunks = data.chunks_exact(2);
    for word in &mut chunks {
        sum = sum.wrapping_add(u32::from(u16::from_be_bytes([word[0], word[1]])));
    }
    if let [last] = chunks.remainder() {
        sum = sum.wrapping_add(u32::from(*last) << 8);
    }
    sum
}

pub(crate) fn fold(mut sum: u32) -> u16 {
    while sum > 0xFFFF {
        sum = (sum & 0xFFFF) + (sum >> 16);
    }
    sum as u16
}

/// Checksum of an IPv4 header whose checksum field has been zeroed.
pub fn ipv4_checksum(header: &[u8]) -> Result<u16, WireError> {
    if !header.len().is_multiple_of(2) {
        return Err(WireError::Argument("ipv4 header length is odd"));
    }
    if header.len() < 20 {
        return Err(WireError::Argument("ipv4 header shorter than 20 bytes"));
    }
    Ok(!fold(accumulate(0, header)))
}

fn pseudo_header_sum(src: Ipv4Addr, dst: Ipv4Addr, protocol: u8, len: usize) -> u32 {
    let mut sum = accumulate(0, &src.octets());
    sum = accumulate(sum, &dst.octets());
    sum = sum.wrapping_add(u32::from(protocol));
    sum.wrapping_add(len as u32)
}

/// Checksum over the IPv4 pseudo-header plus a transport segment.
pub(crate) fn transport_checksum(
    src: Ipv4Addr,
    dst: Ipv4Addr,
    protocol: u8,
    segment: &[u8],
) -> u16 {
    let sum = pseudo_header_sum(src, dst, protocol, segment.len());
    !fold(accumulate(sum, segment))
}

/// TCP checksum of `segment` (checksum field zeroed) between `src` and `dst`.
pub fn tcp_checksum(src: Ipv4Addr, dst: Ipv4Addr, segment: &[u8]) -> u16 {
    transport_checksum(src, dst, super::ipv4::PROTO_TCP, segment)
}

/// UDP checksum; a computed zero is transmitted as 0xFFFF.
pub fn udp_checksum(src: Ipv4Addr, dst: Ipv4Addr, datagram: &[u8]) -> u16 {
    match transport_checksum(src, dst, super::ipv4::PROTO_UDP, datagram) {
        0 => 0xFFFF,
        c => c,
    }
}

/// True when the ones-complement sum over pseudo-header and segment (checksum included) is 0xFFFF.
pub(crate) fn transport_verifies(
    src: Ipv4Addr,
    dst: Ipv4Addr,
    protocol: u8,
    segment: &[u8],
) -> bool {
    let sum = pseudo_header_sum(src, dst, protocol, segment.len());
    fold(accumulate(sum, segment)) == 0xFFFF
}

/// True when an IPv4 header including its checksum sums to 0xFFFF.
pub fn ipv4_header_verifies(header: &[u8]) -> bool {
    fold(accumulate(0, header)) == 0xFFFF
}
