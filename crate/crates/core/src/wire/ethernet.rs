use std::fmt;
use std::str::FromStr;

use super::{need, WireError};

pub const ETH_HEADER_LEN: usize = 14;
pub const MIN_FRAME_LEN: usize = 60;
pub const MAX_FRAME_LEN: usize = 1514;
pub const MAX_PAYLOAD_LEN: usize = 1500;

pub const ETHERTYPE_IPV4: u16 = 0x0800;
pub const ETHERTYPE_ARP: u16 = 0x0806;

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct MacAddress(pub [u8; 6]);

impl MacAddress {
    pub const BROADCAST: MacAddress = MacAddress([0xFF; 6]);
    pub const ZERO: MacAddress = MacAddress([0; 6]);

    pub fn octets(&self) -> [u8; 6] {
        self.0
    }

    pub fn is_broadcast(&self) -> bool {
        self.0 == [0xFF; 6]
    }

    /// Group bit (LSB of the first octet). Broadcast is also multicast.
    pub fn is_multicast(&self) -> bool {
        self.0[0] & 0x01 != 0
    }

    pub fn is_unicast(&self) -> bool {
        !self.is_multicast()
    }
}

impl fmt::Display for MacAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let o = self.0;
        write!(
            f,
            "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
            o[0], o[1], o[2], o[3], o[4], o[5]
        )
    }
}

impl fmt::Debug for MacAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for MacAddress {
    type Err = WireError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = [0u8; 6];
        let mut parts = s.split([':', '-']);
        for slot in out.iter_mut() {
            let part = parts
                .next()
                .ok_or(WireError::Malformed("mac address", "too few octets"))?;
            if part.len() != 2 {
                return Err(WireError::Malformed(
                    "mac address",
                    "octet must be two hex digits",
                ));
            }
            *slot = u8::from_str_radix(part, 16)
                .map_err(|_| WireError::Malformed("mac address", "non-hex octet"))?;
        }
        if parts.next().is_some() {
            return Err(WireError::Malformed("mac address", "too many octets"));
        }
        Ok(MacAddress(out))
    }
}

/// Ethernet II frame without a frame check sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EthernetFrame {
    pub dst: MacAddress,
    pub src: MacAddress,
    pub ethertype: u16,
    pub payload: Vec<u8>,
}

impl EthernetFrame {
    pub fn new(dst: MacAddress, src: MacAddress, ethertype: u16, payload: Vec<u8>) -> Self {
        Self {
            dst,
            src,
            ethertype,
            payload,
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>, WireError> {
        encode_frame(self)
    }
}

/// Serializes a frame, zero-padding short payloads up to the 60-byte minimum.
pub fn encode_frame(frame: &EthernetFrame) -> Result<Vec<u8>, WireError> {
    if frame.payload.len() > MAX_PAYLOAD_LEN {
        return Err(WireError::Oversize(frame.payload.len(), MAX_PAYLOAD_LEN));
    }
    let mut out = Vec::with_capacity((ETH_HEADER_LEN + frame.payload.len()).max(MIN_FRAME_LEN));
    out.extend_from_slice(&frame.dst.0);
    out.extend_from_slice(&frame.src.0);
    out.extend_from_slice(&frame.ethertype.to_be_bytes());
    out.extend_from_slice(&frame.payload);
    if out.len() < MIN_FRAME_LEN {
        out.resize(MIN_FRAME_LEN, 0);
    }
    Ok(out)
}

pub fn decode_frame(raw: &[u8]) -> Result<EthernetFrame, WireError> {
    need("ethernet frame", raw, ETH_HEADER_LEN)?;
    let mut dst = [0u8; 6];
    let mut src = [0u8; 6];
    dst.copy_from_slice(&raw[0..6]);
    src.copy_from_slice(&raw[6..12]);
    Ok(EthernetFrame {
        dst: MacAddress(dst),
        src: MacAddress(src),
        ethertype: u16::from_be_bytes([raw[12], raw[13]]),
        payload: raw[ETH_HEADER_LEN..].to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SRC: MacAddress = MacAddress([0x52, 0x54, 0x00, 0x12, 0x34, 0x56]);

    #[test]
    fn arp_frame_padded_to_minimum() {
        let f = EthernetFrame::new(MacAddress::BROADCAST, SRC, ETHERTYPE_ARP, vec![0xAA; 28]);
        let raw = encode_frame(&f).unwrap();
        assert_eq!(raw.len(), 60);
        assert_eq!(&raw[0..6], &[0xFF; 6]);
        assert_eq!(&raw[6..12], &SRC.0);
        assert!(raw[42..].iter().all(|&b| b == 0));
        let back = decode_frame(&raw).unwrap();
        assert_eq!(back.ethertype, 0x0806);
        assert_eq!(back.payload.len(), 46);
    }

    #[test]
    fn size_bounds() {
        let max = EthernetFrame::new(SRC, SRC, ETHERTYPE_IPV4, vec![1; 1500]);
        assert_eq!(encode_frame(&max).unwrap().len(), 1514);
        let over = EthernetFrame::new(SRC, SRC, ETHERTYPE_IPV4, vec![1; 1501]);
        assert_eq!(encode_frame(&over), Err(WireError::Oversize(1501, 1500)));
    }

    #[test]
    fn truncated() {
        assert!(matches!(
            decode_frame(&[0u8; 13]),
            Err(WireError::Truncated(..))
        ));
    }

    #[test]
    fn mac_predicates_and_parse() {
        assert!(MacAddress::BROADCAST.is_broadcast());
        assert!(MacAddress::BROADCAST.is_multicast());
        assert!(MacAddress([0x01, 0, 0x5e, 0, 0, 1]).is_multicast());
        assert!(!SRC.is_multicast());
        assert!(!MacAddress([0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFE]).is_broadcast());
        assert_eq!("52:54:00:12:34:56".parse::<MacAddress>().unwrap(), SRC);
        assert_eq!(SRC.to_string(), "52:54:00:12:34:56");
        assert!("52:54:00:12:34".parse::<MacAddress>().is_err());
    }
}
