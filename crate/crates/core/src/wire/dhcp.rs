use std::net::Ipv4Addr;

use super::{need, MacAddress, WireError};

pub const DHCP_SERVER_PORT: u16 = 67;
pub const DHCP_CLIENT_PORT: u16 = 68;

const MAGIC_COOKIE: [u8; 4] = [0x63, 0x82, 0x53, 0x63];
const FIXED_LEN: usize = 236;
const MIN_LEN: usize = 300;

const OPT_PAD: u8 = 0;
const OPT_SUBNET_MASK: u8 = 1;
const OPT_ROUTER: u8 = 3;
const OPT_REQUESTED_IP: u8 = 50;
const OPT_LEASE_TIME: u8 = 51;
const OPT_MESSAGE_TYPE: u8 = 53;
const OPT_SERVER_ID: u8 = 54;
const OPT_END: u8 = 255;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DhcpOp {
    Request,
    Reply,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DhcpMessageType {
    Discover,
    Offer,
    Request,
    Ack,
    Nak,
    Other(u8),
}

impl DhcpMessageType {
    fn code(self) -> u8 {
        match self {
            Self::Discover => 1,
            Self::Offer => 2,
            Self::Request => 3,
            Self::Ack => 5,
            Self::Nak => 6,
            Self::Other(c) => c,
        }
    }

    fn from_code(c: u8) -> Self {
        match c {
            1 => Self::Discover,
            2 => Self::Offer,
            3 => Self::Request,
            5 => Self::Ack,
            6 => Self::Nak,
            c => Self::Other(c),
        }
    }
}

/// The DHCP subset spoken on the virtual subnet. Options other than the six
/// modelled here are dropped on decode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DhcpMessage {
    pub op: DhcpOp,
    pub xid: u32,
    pub client_mac: MacAddress,
    pub client_ip: Ipv4Addr,
    pub your_ip: Ipv4Addr,
    pub message_type: DhcpMessageType,
    pub server_id: Option<Ipv4Addr>,
    pub requested_ip: Option<Ipv4Addr>,
    pub subnet_mask: Option<Ipv4Addr>,
    pub router: Option<Ipv4Addr>,
    pub lease_time: Option<u32>,
}

impl DhcpMessage {
    pub fn new(
        op: DhcpOp,
        message_type: DhcpMessageType,
        xid: u32,
        client_mac: MacAddress,
    ) -> Self {
        Self {
            op,
            xid,
            client_mac,
            client_ip: Ipv4Addr::UNSPECIFIED,
            your_ip: Ipv4Addr::UNSPECIFIED,
            message_type,
            server_id: None,
            requested_ip: None,
            subnet_mask: None,
            router: None,
            lease_time: None,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = vec![0u8; FIXED_LEN];
        out[0] = match self.op {
            DhcpOp::Request => 1,
            DhcpOp::Reply => 2,
        };
        out[1] = 1;
        out[2] = 6;
        out[4..8].copy_from_slice(&self.xid.to_be_bytes());
        out[12..16].copy_from_slice(&self.client_ip.octets());
        out[16..20].copy_from_slice(&self.your_ip.octets());
        out[28..34].copy_from_slice(&self.client_mac.0);
        out.extend_from_slice(&MAGIC_COOKIE);
        out.extend_from_slice(&[OPT_MESSAGE_TYPE, 1, self.message_type.code()]);
        let addr_opts = [
            (OPT_SERVER_ID, self.server_id),
            (OPT_REQUESTED_IP, self.requested_ip),
            (OPT_SUBNET_MASK, self.subnet_mask),
            (OPT_ROUTER, self.router),
        ];
        for (code, value) in addr_opts {
            if let Some(ip) = value {
                out.extend_from_slice(&[code, 4]);
                out.extend_from_slice(&ip.octets());
            }
        }
        if let Some(t) = self.lease_time {
            out.extend_from_slice(&[OPT_LEASE_TIME, 4]);
            out.extend_from_slice(&t.to_be_bytes());
        }
        out.push(OPT_END);
        if out.len() < MIN_LEN {
            out.resize(MIN_LEN, OPT_PAD);
        }
        out
    }

    pub fn decode(raw: &[u8]) -> Result<Self, WireError> {
        need("dhcp message", raw, FIXED_LEN + MAGIC_COOKIE.len())?;
        let op = match raw[0] {
            1 => DhcpOp::Request,
            2 => DhcpOp::Reply,
            _ => return Err(WireError::Malformed("dhcp message", "bad op")),
        };
        if raw[1] != 1 || raw[2] != 6 {
            return Err(WireError::Malformed(
                "dhcp message",
                "not ethernet hardware",
            ));
        }
        if raw[FIXED_LEN..FIXED_LEN + 4] != MAGIC_COOKIE {
            return Err(WireError::Malformed("dhcp message", "missing magic cookie"));
        }
        let ip = |b: &[u8]| Ipv4Addr::new(b[0], b[1], b[2], b[3]);
        let mut mac = [0u8; 6];
        mac.copy_from_slice(&raw[28..34]);
        let mut msg = DhcpMessage {
            op,
            xid: u32::from_be_bytes([raw[4], raw[5], raw[6], raw[7]]),
            client_mac: MacAddress(mac),
            client_ip: ip(&raw[12..16]),
            your_ip: ip(&raw[16..20]),
            message_type: DhcpMessageType::Other(0),
            server_id: None,
            requested_ip: None,
            subnet_mask: None,
            router: None,
            lease_time: None,
        };
        let mut seen_type = false;
        let mut opts = &raw[FIXED_LEN + 4..];
        loop {
            match opts {
                [] | [OPT_END, ..] => break,
                [OPT_PAD, rest @ ..] => opts = rest,
                [code, len, rest @ ..] => {
                    let len = usize::from(*len);
                    if rest.len() < len {
                        return Err(WireError::Malformed(
                            "dhcp message",
                            "option overruns message",
                        ));
                    }
                    let body = &rest[..len];
                    match (*code, len) {
                        (OPT_MESSAGE_TYPE, 1) => {
                            msg.message_type = DhcpMessageType::from_code(body[0]);
                            seen_type = true;
                        }
                        (OPT_SERVER_ID, 4) => msg.server_id = Some(ip(body)),
                        (OPT_REQUESTED_IP, 4) => msg.requested_ip = Some(ip(body)),
                        (OPT_SUBNET_MASK, 4) => msg.subnet_mask = Some(ip(body)),
                        (OPT_ROUTER, l) if l >= 4 && l % 4 == 0 => msg.router = Some(ip(body)),
                        (OPT_LEASE_TIME, 4) => {
                            msg.lease_time =
                                Some(u32::from_be_bytes([body[0], body[1], body[2], body[3]]))
                        }
                        _ => {}
                    }
                    opts = &rest[len..];
                }
                [_] => return Err(WireError::Malformed("dhcp message", "truncated option")),
            }
        }
        if !seen_type {
            return Err(WireError::Malformed(
                "dhcp message",
                "no message type option",
            ));
        }
        Ok(msg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn discover() -> DhcpMessage {
        DhcpMessage::new(
            DhcpOp::Request,
            DhcpMessageType::Discover,
            0x1234_5678,
            MacAddress([0x52, 0x54, 0, 0x12, 0x34, 0x56]),
        )
    }

    #[test]
    fn cookie_present_and_required() {
        let raw = discover().encode();
        assert_eq!(&raw[236..240], &[0x63, 0x82, 0x53, 0x63]);
        assert!(raw.len() >= 300);
        assert_eq!(DhcpMessage::decode(&raw).unwrap(), discover());
        let mut bad = raw.clone();
        bad[239] = 0;
        assert!(DhcpMessage::decode(&bad).is_err());
    }

    #[test]
    fn unknown_options_ignored() {
        let mut raw = discover().encode();
        // insert hostname option (12) ahead of message type
        let at = 240;
        raw.splice(at..at, [12u8, 3, b'e', b's', b'p']);
        assert_eq!(DhcpMessage::decode(&raw).unwrap(), discover());
    }

    #[test]
    fn offer_options_round_trip() {
        let mut m = discover();
        m.op = DhcpOp::Reply;
        m.message_type = DhcpMessageType::Offer;
        m.your_ip = Ipv4Addr::new(10, 0, 2, 15);
        m.server_id = Some(Ipv4Addr::new(10, 0, 2, 2));
        m.subnet_mask = Some(Ipv4Addr::new(255, 255, 255, 0));
        m.router = Some(Ipv4Addr::new(10, 0, 2, 2));
        m.lease_time = Some(86_400);
        assert_eq!(DhcpMessage::decode(&m.encode()).unwrap(), m);
    }
}
