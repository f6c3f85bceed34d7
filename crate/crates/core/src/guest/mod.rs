//! Natively executed guest: Ethernet driver, a small IPv4 stack with ARP,
//! a DHCP client and TCP, and the HTTP (or echo) application on top.
//!
//! The guest shares one event loop with its device. It reacts to the device
//! interrupt line via [`Guest::step`] and to timers via [`Guest::next_deadline`].

mod driver;
pub mod http;
mod tcp;

use std::collections::HashMap;
use std::fmt;
use std::net::{Ipv4Addr, SocketAddrV4};
use std::str::FromStr;
use std::time::{Duration, Instant};

use thiserror::Error;

pub use driver::{driver_init, DriverCounters, DriverState, LINK_POLLS, RX_SLOTS, TX_SLOTS};
pub use http::{http_handle, DEFAULT_BANNER, HELLO_BODY, HELLO_PATH};
pub use tcp::{TcpConnection, TcpListener, TcpState};

use crate::mac::{DeviceError, NetBackend, OpenEth};
use crate::wire::http::parse_request;
use crate::wire::{
    decode_frame, encode_frame, ArpOperation, ArpPacket, DhcpMessage, DhcpMessageType, DhcpOp,
    EthernetFrame, Ipv4Packet, MacAddress, TcpSegment, UdpDatagram, DHCP_CLIENT_PORT,
    DHCP_SERVER_PORT, ETHERTYPE_ARP, ETHERTYPE_IPV4, PROTO_TCP, PROTO_UDP,
};

pub const DEFAULT_MAC: MacAddress = MacAddress([0x52, 0x54, 0x00, 0x12, 0x34, 0x56]);
pub const INTERFACE_NAME: &str = "example_netif_eth";
pub const DHCP_RETRY: Duration = Duration::from_secs(1);

#[derive(Debug, Error)]
pub enum GuestError {
    #[error("PHY link still down after {0} status polls")]
    LinkDown(usize),
    #[error(transparent)]
    Device(#[from] DeviceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuestMode {
    Http,
    Echo,
}

impl fmt::Display for GuestMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GuestMode::Http => "http",
            GuestMode::Echo => "echo",
        })
    }
}

impl FromStr for GuestMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "http" => Ok(GuestMode::Http),
            "echo" => Ok(GuestMode::Echo),
            other => Err(format!("unknown guest mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GuestConfig {
    pub mac: MacAddress,
    pub port: u16,
    pub banner: String,
    pub mode: GuestMode,
}

impl Default for GuestConfig {
    fn default() -> Self {
        Self {
            mac: DEFAULT_MAC,
            port: 80,
            banner: DEFAULT_BANNER.to_string(),
            mode: GuestMode::Http,
        }
    }
}

impl GuestConfig {
    /// `key=value` lines, the form the flash app payload carries.
    pub fn to_text(&self) -> String {
        format!(
            "mac={}\nport={}\nbanner={}\nmode={}\n",
            self.mac, self.port, self.banner, self.mode
        )
    }

    /// Parses [`GuestConfig::to_text`] output. Missing keys keep defaults.
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut cfg = GuestConfig::default();
        for line in text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
        {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("expected key=value, got `{line}`"))?;
            match k.trim() {
                "mac" => cfg.mac = v.trim().parse().map_err(|_| format!("bad mac `{v}`"))?,
                "port" => {
                    cfg.port = v
                        .trim()
                        .parse()
                        .ok()
                        .filter(|&p| p != 0)
                        .ok_or_else(|| format!("bad port `{v}`"))?
                }
                "banner" => cfg.banner = v.trim().to_string(),
                "mode" => cfg.mode = v.trim().parse()?,
                other => return Err(format!("unknown key `{other}`")),
            }
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DhcpClient {
    Selecting,
    Requesting { offered: Ipv4Addr, server: Ipv4Addr },
    Bound,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GuestCounters {
    pub frames_in: u64,
    pub dropped: u64,
    pub arp_replies: u64,
    pub resets_sent: u64,
    pub connections_accepted: u64,
    /// Bytes delivered to the application across all connections.
    pub app_bytes_in: u64,
    pub requests_served: u64,
}

struct Session {
    tcp: TcpConnection,
    responded: bool,
}

pub struct Guest {
    config: GuestConfig,
    driver: DriverState,
    ip: Option<Ipv4Addr>,
    netmask: Ipv4Addr,
    gateway: Option<Ipv4Addr>,
    dhcp: DhcpClient,
    dhcp_deadline: Option<Instant>,
    xid: u32,
    arp: HashMap<Ipv4Addr, MacAddress>,
    listener: Option<TcpListener>,
    sessions: HashMap<(u16, SocketAddrV4), Session>,
    next_iss: u32,
    stdout: Vec<String>,
    counters: GuestCounters,
}

impl Guest {
    /// Initializes the driver and starts DHCP.
    pub fn boot<B: NetBackend>(
        dev: &mut OpenEth<B>,
        config: GuestConfig,
        now: Instant,
    ) -> Result<Self, GuestError> {
        let driver = driver_init(dev, config.mac)?;
        let m = config.mac.0;
        let xid = u32::from_be_bytes([m[2], m[3], m[4], m[5]]) ^ 0x3903_f326;
        let mut guest = Guest {
            driver,
            ip: None,
            netmask: Ipv4Addr::UNSPECIFIED,
            gateway: None,
            dhcp: DhcpClient::Selecting,
            dhcp_deadline: None,
            xid,
            arp: HashMap::new(),
            listener: None,
            sessions: HashMap::new(),
            next_iss: 0x0a00_0000,
            stdout: Vec::new(),
            counters: GuestCounters::default(),
            config,
        };
        guest.log(format!(
            "{INTERFACE_NAME}: link up, phy id {:#010x}, mac {}",
            guest.driver.phy_id, guest.config.mac
        ));
        guest.send_dhcp(dev, DhcpMessageType::Discover, None, None, now);
        Ok(guest)
    }

    pub fn config(&self) -> &GuestConfig {
        &self.config
    }

    pub fn ip(&self) -> Option<Ipv4Addr> {
        self.ip
    }

    pub fn driver(&self) -> &DriverState {
        &self.driver
    }

    pub fn counters(&self) -> GuestCounters {
        self.counters
    }

    pub fn listener(&self) -> Option<TcpListener> {
        self.listener
    }

    pub fn open_connections(&self) -> usize {
        self.sessions.len()
    }

    /// Drains lines the guest printed since the last call.
    pub fn take_stdout(&mut self) -> Vec<String> {
        std::mem::take(&mut self.stdout)
    }

    fn log(&mut self, line: String) {
        self.stdout.push(line);
    }

    pub fn next_deadline(&self) -> Option<Instant> {
        self.sessions
            .values()
            .filter_map(|s| s.tcp.deadline())
            .chain(self.dhcp_deadline)
            .min()
    }

    /// One pass of the main loop: acknowledge interrupts, drain the receive
    /// ring, run protocol handlers and timers, push pending transmits.
    pub fn step<B: NetBackend>(&mut self, dev: &mut OpenEth<B>, now: Instant) {
        if dev.irq_asserted() {
            self.driver.service_irq(dev);
        }
        for frame in self.driver.receive(dev) {
            self.frame_in(dev, &frame, now);
        }
        self.timers(dev, now);
        self.driver.flush(dev);
    }

    fn timers<B: NetBackend>(&mut self, dev: &mut OpenEth<B>, now: Instant) {
        if self.dhcp_deadline.is_some_and(|d| d <= now) {
            match self.dhcp {
                DhcpClient::Selecting => {
                    self.send_dhcp(dev, DhcpMessageType::Discover, None, None, now)
                }
                DhcpClient::Requesting { offered, server } => self.send_dhcp(
                    dev,
                    DhcpMessageType::Request,
                    Some(offered),
                    Some(server),
                    now,
                ),
                DhcpClient::Bound => self.dhcp_deadline = None,
            }
        }
        let due: Vec<_> = self
            .sessions
            .iter()
            .filter(|(_, s)| s.tcp.deadline().is_some_and(|d| d <= now))
            .map(|(k, _)| *k)
            .collect();
        for key in due {
            let mut out = Vec::new();
            if let Some(s) = self.sessions.get_mut(&key) {
                s.tcp.tick(now, &mut out);
            }
            self.send_segments(dev, key.1, out);
            self.reap(key);
        }
    }

    fn transmit<B: NetBackend>(&mut self, dev: &mut OpenEth<B>, frame: EthernetFrame) {
        if let Ok(bytes) = encode_frame(&frame) {
            self.driver.transmit(dev, bytes);
        }
    }

    fn send_ipv4<B: NetBackend>(
        &mut self,
        dev: &mut OpenEth<B>,
        dst_mac: MacAddress,
        packet: Ipv4Packet,
    ) {
        if let Ok(bytes) = packet.encode() {
            self.transmit(
                dev,
                EthernetFrame::new(dst_mac, self.config.mac, ETHERTYPE_IPV4, bytes),
            );
        }
    }

    fn send_dhcp<B: NetBackend>(
        &mut self,
        dev: &mut OpenEth<B>,
        kind: DhcpMessageType,
        requested: Option<Ipv4Addr>,
        server: Option<Ipv4Addr>,
        now: Instant,
    ) {
        let mut msg = DhcpMessage::new(DhcpOp::Request, kind, self.xid, self.config.mac);
        msg.requested_ip = requested;
        msg.server_id = server;
        let udp = UdpDatagram {
            src_port: DHCP_CLIENT_PORT,
            dst_port: DHCP_SERVER_PORT,
            payload: msg.encode(),
        };
        let (src, dst) = (Ipv4Addr::UNSPECIFIED, Ipv4Addr::BROADCAST);
        let packet = Ipv4Packet::new(src, dst, PROTO_UDP, udp.encode(src, dst));
        self.send_ipv4(dev, MacAddress::BROADCAST, packet);
        self.dhcp_deadline = Some(now + DHCP_RETRY);
    }

    fn frame_in<B: NetBackend>(&mut self, dev: &mut OpenEth<B>, raw: &[u8], now: Instant) {
        self.counters.frames_in += 1;
        let Ok(frame) = decode_frame(raw) else {
            return self.counters.dropped += 1;
        };
        if frame.dst != self.config.mac && !frame.dst.is_broadcast() {
            self.counters.dropped += 1;
            return;
        }
        match frame.ethertype {
            ETHERTYPE_ARP => self.arp_in(dev, &frame),
            ETHERTYPE_IPV4 => self.ipv4_in(dev, &frame, now),
            _ => self.counters.dropped += 1,
        }
    }

    fn arp_in<B: NetBackend>(&mut self, dev: &mut OpenEth<B>, frame: &EthernetFrame) {
        let Ok(arp) = ArpPacket::decode(&frame.payload) else {
            return self.counters.dropped += 1;
        };
        if arp.sender_mac.is_unicast() && !arp.sender_ip.is_unspecified() {
            self.arp.insert(arp.sender_ip, arp.sender_mac);
        }
        if arp.operation == ArpOperation::Request && Some(arp.target_ip) == self.ip {
            let reply = arp.reply_from(self.config.mac);
            self.counters.arp_replies += 1;
            self.transmit(
                dev,
                EthernetFrame::new(
                    arp.sender_mac,
                    self.config.mac,
                    ETHERTYPE_ARP,
                    reply.encode(),
                ),
            );
        }
    }

    fn ipv4_in<B: NetBackend>(
        &mut self,
        dev: &mut OpenEth<B>,
        frame: &EthernetFrame,
        now: Instant,
    ) {
        let Ok(packet) = Ipv4Packet::decode(&frame.payload) else {
            return self.counters.dropped += 1;
        };
        match packet.protocol {
            PROTO_UDP => {
                let udp = match UdpDatagram::decode(packet.src, packet.dst, &packet.payload) {
                    Ok(u) if u.dst_port == DHCP_CLIENT_PORT => u,
                    _ => return self.counters.dropped += 1,
                };
                match DhcpMessage::decode(&udp.payload) {
                    Ok(msg) => self.dhcp_in(dev, frame.src, &msg, now),
                    Err(_) => self.counters.dropped += 1,
                }
            }
            PROTO_TCP if self.ip.is_some() && Some(packet.dst) == self.ip => {
                let Ok(seg) = TcpSegment::decode(packet.src, packet.dst, &packet.payload) else {
                    return self.counters.dropped += 1;
                };
                if frame.src.is_unicast() {
                    self.arp.insert(packet.src, frame.src);
                }
                self.tcp_in(dev, SocketAddrV4::new(packet.src, seg.src_port), &seg, now);
            }
            _ => self.counters.dropped += 1,
        }
    }

    fn dhcp_in<B: NetBackend>(
        &mut self,
        dev: &mut OpenEth<B>,
        src_mac: MacAddress,
        msg: &DhcpMessage,
        now: Instant,
    ) {
        if msg.op != DhcpOp::Reply || msg.xid != self.xid || msg.client_mac != self.config.mac {
            self.counters.dropped += 1;
            return;
        }
        match (self.dhcp, msg.message_type) {
            (DhcpClient::Selecting, DhcpMessageType::Offer) => {
                let Some(server) = msg.server_id else {
                    return self.counters.dropped += 1;
                };
                self.dhcp = DhcpClient::Requesting {
                    offered: msg.your_ip,
                    server,
                };
                self.send_dhcp(
                    dev,
                    DhcpMessageType::Request,
                    Some(msg.your_ip),
                    Some(server),
                    now,
                );
            }
            (DhcpClient::Requesting { offered, .. }, DhcpMessageType::Ack)
                if msg.your_ip == offered =>
            {
                self.dhcp = DhcpClient::Bound;
                self.dhcp_deadline = None;
                self.ip = Some(offered);
                self.netmask = msg.subnet_mask.unwrap_or(Ipv4Addr::new(255, 255, 255, 0));
                self.gateway = msg.router;
                if let Some(gw) = msg.router {
                    self.arp.entry(gw).or_insert(src_mac);
                }
                let gw = msg
                    .router
                    .map(|g| g.to_string())
                    .unwrap_or_else(|| "none".into());
                self.log(format!(
                    "{INTERFACE_NAME}: bound to {offered} netmask {} gw {gw}",
                    self.netmask
                ));
                self.listener = Some(TcpListener::new(self.config.port));
                let app = match self.config.mode {
                    GuestMode::Http => "http server",
                    GuestMode::Echo => "echo server",
                };
                self.log(format!("{app} listening on {offered}:{}", self.config.port));
            }
            (DhcpClient::Requesting { .. }, DhcpMessageType::Nak) => {
                self.dhcp = DhcpClient::Selecting;
                self.send_dhcp(dev, DhcpMessageType::Discover, None, None, now);
            }
            _ => self.counters.dropped += 1,
        }
    }

    fn tcp_in<B: NetBackend>(
        &mut self,
        dev: &mut OpenEth<B>,
        remote: SocketAddrV4,
        seg: &TcpSegment,
        now: Instant,
    ) {
        let Some(ip) = self.ip else { return };
        let key = (seg.dst_port, remote);
        let mut out = Vec::new();
        if let Some(s) = self.sessions.get_mut(&key) {
            s.tcp.segment_in(seg, now, &mut out);
        } else {
            let f = seg.flags;
            let listening = self.listener.is_some_and(|l| l.port == seg.dst_port);
            if f.syn && !f.ack && !f.rst && listening {
                let iss = self.next_iss;
                self.next_iss = self.next_iss.wrapping_add(0x0001_0000);
                let local = SocketAddrV4::new(ip, seg.dst_port);
                let tcp = TcpConnection::accept(local, remote, seg, iss, now, &mut out);
                self.sessions.insert(
                    key,
                    Session {
                        tcp,
                        responded: false,
                    },
                );
                self.counters.connections_accepted += 1;
            } else {
                if let Some(rst) = tcp::reset_for(seg) {
                    self.counters.resets_sent += 1;
                    out.push(rst);
                } else {
                    self.counters.dropped += 1;
                }
                self.send_segments(dev, remote, out);
                return;
            }
        }
        self.application(key, now, &mut out);
        self.send_segments(dev, remote, out);
        self.reap(key);
    }

    fn application(&mut self, key: (u16, SocketAddrV4), now: Instant, out: &mut Vec<TcpSegment>) {
        let Some(s) = self.sessions.get_mut(&key) else {
            return;
        };
        if s.tcp.rx.is_empty() && !s.tcp.peer_fin {
            return;
        }
        let mut line = None;
        match self.config.mode {
            GuestMode::Echo => {
                let data = std::mem::take(&mut s.tcp.rx);
                self.counters.app_bytes_in += data.len() as u64;
                s.tcp.send(&data, now, out);
                if s.tcp.peer_fin {
                    s.tcp.close(now, out);
                }
            }
            GuestMode::Http if !s.responded => {
                let response = match parse_request(&s.tcp.rx) {
                    Ok(Some((req, used))) => {
                        self.counters.app_bytes_in += used as u64;
                        line = Some(format!("served {} {}", req.method, req.target));
                        Some(http_handle(&req, &self.config.banner))
                    }
                    Ok(None) if !s.tcp.peer_fin => None,
                    Ok(None) | Err(_) => {
                        line = Some("served malformed request".to_string());
                        Some(http::bad_request(&self.config.banner))
                    }
                };
                if let Some(resp) = response {
                    if let Some(l) = line.as_mut() {
                        l.push_str(&format!(" status={}", resp.status));
                    }
                    s.responded = true;
                    s.tcp.rx.clear();
                    s.tcp.send(&resp.encode(), now, out);
                    s.tcp.close(now, out);
                }
            }
            GuestMode::Http => {
                // request already answered; discard trailing bytes
                s.tcp.rx.clear();
            }
        }
        if let Some(l) = line {
            self.counters.requests_served += 1;
            self.log(l);
        }
    }

    fn reap(&mut self, key: (u16, SocketAddrV4)) {
        if self.sessions.get(&key).is_some_and(|s| s.tcp.is_closed()) {
            self.sessions.remove(&key);
        }
    }

    fn next_hop(&self, dst: Ipv4Addr) -> Option<MacAddress> {
        self.arp
            .get(&dst)
            .copied()
            .or_else(|| self.gateway.and_then(|g| self.arp.get(&g).copied()))
    }

    fn send_segments<B: NetBackend>(
        &mut self,
        dev: &mut OpenEth<B>,
        remote: SocketAddrV4,
        segs: Vec<TcpSegment>,
    ) {
        let (Some(ip), Some(mac)) = (self.ip, self.next_hop(*remote.ip())) else {
            return;
        };
        for seg in segs {
            let bytes = seg.encode(ip, *remote.ip());
            self.send_ipv4(
                dev,
                mac,
                Ipv4Packet::new(ip, *remote.ip(), PROTO_TCP, bytes),
            );
        }
    }
}
