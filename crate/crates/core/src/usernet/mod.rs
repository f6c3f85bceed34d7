//! User-mode NAT network stack.
//!
//! A virtual 10.0.2.0/24 segment with an ARP responder, a DHCP server, an
//! outbound TCP relay and inbound host-port forwarding. The stack is sans-IO:
//! frames from the guest and events from host sockets go in, frames for the
//! guest and [`HostAction`]s for the socket driver come out.

mod config;
mod dhcp;
mod flow;

use std::collections::{HashMap, VecDeque};
use std::net::{Ipv4Addr, SocketAddrV4};
use std::time::Instant;

use thiserror::Error;

pub use config::{
    parse_nic_config, ForwardRule, NicConfig, NicConfigError, Proto, SUPPORTED_MODEL,
};
pub use dhcp::{Lease, LeaseState, LeaseTable};
pub use flow::{
    Direction, TcpState, HANDSHAKE_TIMEOUT, MAX_RETRIES, MSS, RETRANSMIT_TIMEOUT, WINDOW,
};

use flow::{Disposition, Flow};

use crate::wire::{
    decode_frame, ArpOperation, ArpPacket, DhcpMessage, DhcpMessageType, DhcpOp, EthernetFrame,
    Ipv4Packet, MacAddress, TcpSegment, UdpDatagram, DHCP_CLIENT_PORT, DHCP_SERVER_PORT,
    ETHERTYPE_ARP, ETHERTYPE_IPV4, PROTO_TCP, PROTO_UDP,
};

/// Addressing of the virtual segment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubnetPlan {
    pub network: Ipv4Addr,
    pub prefix_len: u8,
    pub gateway_ip: Ipv4Addr,
    pub dns_ip: Ipv4Addr,
    pub dhcp_start: Ipv4Addr,
    pub gateway_mac: MacAddress,
    pub lease_time: u32,
}

impl Default for SubnetPlan {
    fn default() -> Self {
        Self {
            network: Ipv4Addr::new(10, 0, 2, 0),
            prefix_len: 24,
            gateway_ip: Ipv4Addr::new(10, 0, 2, 2),
            dns_ip: Ipv4Addr::new(10, 0, 2, 3),
            dhcp_start: Ipv4Addr::new(10, 0, 2, 15),
            gateway_mac: MacAddress([0x52, 0x55, 0x0a, 0x00, 0x02, 0x02]),
            lease_time: 86_400,
        }
    }
}

impl SubnetPlan {
    pub fn netmask(&self) -> Ipv4Addr {
        Ipv4Addr::from(
            u32::MAX
                .checked_shl(32 - u32::from(self.prefix_len))
                .unwrap_or(0),
        )
    }

    pub fn contains(&self, ip: Ipv4Addr) -> bool {
        let mask = u32::from(self.netmask());
        u32::from(ip) & mask == u32::from(self.network) & mask
    }

    pub fn broadcast(&self) -> Ipv4Addr {
        Ipv4Addr::from(u32::from(self.network) | !u32::from(self.netmask()))
    }

    fn pool_size(&self) -> u32 {
        u32::from(self.broadcast()).saturating_sub(u32::from(self.dhcp_start))
    }
}

/// Handle naming one relayed TCP connection across the stack and its driver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConnId(pub u64);

/// Requests from the stack to the host socket driver.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HostAction {
    /// Open an outbound connection; answer with `host_connected` or
    /// `host_connect_failed`.
    Connect {
        conn: ConnId,
        addr: SocketAddrV4,
    },
    Send {
        conn: ConnId,
        data: Vec<u8>,
    },
    ShutdownWrite {
        conn: ConnId,
    },
    Close {
        conn: ConnId,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum UsernetError {
    #[error("forward rule {0} is not configured")]
    UnknownRule(String),
    #[error("forward rule {0} has no guest address: no DHCP lease yet")]
    NoGuest(String),
    #[error("only tcp forwarding is served, got rule {0}")]
    UnsupportedProto(String),
    #[error("no free ephemeral port toward {0}")]
    PortsExhausted(Ipv4Addr),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    pub frames_in: u64,
    pub frames_out: u64,
    pub dropped: u64,
    pub arp_replies: u64,
    pub dhcp_replies: u64,
    pub outbound_flows: u64,
    pub inbound_flows: u64,
    /// Packets arriving from outside the segment that matched no flow.
    pub unsolicited: u64,
}

const EPHEMERAL_START: u16 = 49152;

pub struct UserNet {
    plan: SubnetPlan,
    config: NicConfig,
    leases: LeaseTable,
    arp: HashMap<Ipv4Addr, MacAddress>,
    flows: HashMap<ConnId, Flow>,
    tuples: HashMap<(SocketAddrV4, SocketAddrV4), ConnId>,
    next_conn: u64,
    next_port: u16,
    next_iss: u32,
    frames_out: VecDeque<EthernetFrame>,
    actions: Vec<HostAction>,
    counters: Counters,
}

impl UserNet {
    pub fn new(plan: SubnetPlan, config: &NicConfig) -> Self {
        let leases = LeaseTable::new(plan.dhcp_start, plan.pool_size());
        Self {
            plan,
            config: config.clone(),
            leases,
            arp: HashMap::new(),
            flows: HashMap::new(),
            tuples: HashMap::new(),
            next_conn: 1,
            next_port: EPHEMERAL_START,
            next_iss: 0x1000_0000,
            frames_out: VecDeque::new(),
            actions: Vec::new(),
            counters: Counters::default(),
        }
    }

    pub fn plan(&self) -> &SubnetPlan {
        &self.plan
    }

    pub fn config(&self) -> &NicConfig {
        &self.config
    }

    pub fn counters(&self) -> Counters {
        self.counters
    }

    pub fn leases(&self) -> &LeaseTable {
        &self.leases
    }

    pub fn first_lease(&self) -> Option<Ipv4Addr> {
        self.leases.first().map(|l| l.ip)
    }

    pub fn flow_count(&self) -> usize {
        self.flows.len()
    }

    pub fn flow_state(&self, conn: ConnId) -> Option<TcpState> {
        self.flows.get(&conn).map(|f| f.state)
    }

    pub fn flow_direction(&self, conn: ConnId) -> Option<Direction> {
        self.flows.get(&conn).map(|f| f.direction)
    }

    pub fn poll_frames_out(&mut self) -> Vec<EthernetFrame> {
        self.frames_out.drain(..).collect()
    }

    pub fn poll_host_actions(&mut self) -> Vec<HostAction> {
        std::mem::take(&mut self.actions)
    }

    pub fn next_deadline(&self) -> Option<Instant> {
        self.flows.values().filter_map(Flow::deadline).min()
    }

    fn drop_frame(&mut self) {
        self.counters.dropped += 1;
    }

    fn queue(&mut self, frame: EthernetFrame) {
        self.counters.frames_out += 1;
        self.frames_out.push_back(frame);
    }

    fn queue_ipv4(&mut self, dst_mac: MacAddress, packet: Ipv4Packet) {
        // payloads are bounded by MSS, so encoding cannot fail here
        if let Ok(bytes) = packet.encode() {
            self.queue(EthernetFrame::new(
                dst_mac,
                self.plan.gateway_mac,
                ETHERTYPE_IPV4,
                bytes,
            ));
        }
    }

    /// A raw Ethernet frame transmitted by the guest.
    pub fn guest_frame_in(&mut self, raw: &[u8], now: Instant) {
        self.counters.frames_in += 1;
        let Ok(frame) = decode_frame(raw) else {
            return self.drop_frame();
        };
        if frame.dst != self.plan.gateway_mac && !frame.dst.is_broadcast() {
            return self.drop_frame();
        }
        match frame.ethertype {
            ETHERTYPE_ARP => self.arp_in(&frame),
            ETHERTYPE_IPV4 => self.ipv4_in(&frame, now),
            _ => self.drop_frame(),
        }
    }

    fn arp_in(&mut self, frame: &EthernetFrame) {
        let Ok(arp) = ArpPacket::decode(&frame.payload) else {
            return self.drop_frame();
        };
        if self.plan.contains(arp.sender_ip) && arp.sender_mac.is_unicast() {
            self.arp.insert(arp.sender_ip, arp.sender_mac);
        }
        let ours = arp.target_ip == self.plan.gateway_ip || arp.target_ip == self.plan.dns_ip;
        if arp.operation != ArpOperation::Request || !ours {
            return self.drop_frame();
        }
        let reply = arp.reply_from(self.plan.gateway_mac);
        self.counters.arp_replies += 1;
        self.queue(EthernetFrame::new(
            arp.sender_mac,
            self.plan.gateway_mac,
            ETHERTYPE_ARP,
            reply.encode(),
        ));
    }

    fn ipv4_in(&mut self, frame: &EthernetFrame, now: Instant) {
        let Ok(packet) = Ipv4Packet::decode(&frame.payload) else {
            return self.drop_frame();
        };
        match packet.protocol {
            PROTO_UDP => {
                let Ok(udp) = UdpDatagram::decode(packet.src, packet.dst, &packet.payload) else {
                    return self.drop_frame();
                };
                if udp.dst_port != DHCP_SERVER_PORT {
                    return self.drop_frame();
                }
                match DhcpMessage::decode(&udp.payload) {
                    Ok(msg) if msg.op == DhcpOp::Request => {
                        if self.dhcp_step(&msg).is_none() {
                            self.drop_frame();
                        }
                    }
                    _ => self.drop_frame(),
                }
            }
            PROTO_TCP => {
                let Ok(seg) = TcpSegment::decode(packet.src, packet.dst, &packet.payload) else {
                    return self.drop_frame();
                };
                if self.plan.contains(packet.src) && frame.src.is_unicast() {
                    self.arp.insert(packet.src, frame.src);
                }
                self.tcp_in(frame.src, &packet, &seg, now);
            }
            _ => self.drop_frame(),
        }
    }

    /// Answers one client message. The reply, if any, is also queued as a
    /// frame toward the client.
    pub fn dhcp_step(&mut self, msg: &DhcpMessage) -> Option<DhcpMessage> {
        if msg.server_id.is_some_and(|s| s != self.plan.gateway_ip) {
            return None;
        }
        let mac = msg.client_mac;
        let (kind, ip) = match msg.message_type {
            DhcpMessageType::Discover => (DhcpMessageType::Offer, self.leases.offer(mac)?),
            DhcpMessageType::Request => {
                let wanted = msg.requested_ip.unwrap_or(msg.client_ip);
                if self.leases.request(mac, wanted) {
                    (DhcpMessageType::Ack, wanted)
                } else {
                    (DhcpMessageType::Nak, Ipv4Addr::UNSPECIFIED)
                }
            }
            _ => return None,
        };
        let mut reply = DhcpMessage::new(DhcpOp::Reply, kind, msg.xid, mac);
        reply.server_id = Some(self.plan.gateway_ip);
        if kind != DhcpMessageType::Nak {
            reply.your_ip = ip;
            reply.subnet_mask = Some(self.plan.netmask());
            reply.router = Some(self.plan.gateway_ip);
            reply.lease_time = Some(self.plan.lease_time);
        }
        let udp = UdpDatagram {
            src_port: DHCP_SERVER_PORT,
            dst_port: DHCP_CLIENT_PORT,
            payload: reply.encode(),
        };
        let dst = Ipv4Addr::BROADCAST;
        let packet = Ipv4Packet::new(
            self.plan.gateway_ip,
            dst,
            PROTO_UDP,
            udp.encode(self.plan.gateway_ip, dst),
        );
        self.counters.dhcp_replies += 1;
        self.queue_ipv4(mac, packet);
        Some(reply)
    }

    fn tcp_in(&mut self, src_mac: MacAddress, packet: &Ipv4Packet, seg: &TcpSegment, now: Instant) {
        let guest = SocketAddrV4::new(packet.src, seg.src_port);
        let remote = SocketAddrV4::new(packet.dst, seg.dst_port);
        if let Some(&conn) = self.tuples.get(&(guest, remote)) {
            let mut out = Vec::new();
            let mut actions = Vec::new();
            let flow = self.flows.get_mut(&conn).expect("tuple index in sync");
            let disposition = flow.guest_segment(seg, now, &mut out, &mut actions);
            self.flush_flow(conn, out, actions, disposition);
            return;
        }
        let f = seg.flags;
        let pure_syn = f.syn && !f.ack && !f.rst && !f.fin;
        let outside = !self.plan.contains(packet.dst)
            && !packet.dst.is_broadcast()
            && !packet.dst.is_multicast();
        if !pure_syn || !outside || !self.plan.contains(packet.src) {
            return self.drop_frame();
        }
        let conn = self.alloc_conn();
        let iss = self.alloc_iss();
        let flow = Flow::outbound(conn, guest, remote, src_mac, iss, seg.seq, now);
        self.insert_flow(flow);
        self.counters.outbound_flows += 1;
        self.actions
            .push(HostAction::Connect { conn, addr: remote });
    }

    fn alloc_conn(&mut self) -> ConnId {
        let c = ConnId(self.next_conn);
        self.next_conn += 1;
        c
    }

    fn alloc_iss(&mut self) -> u32 {
        let iss = self.next_iss;
        self.next_iss = self.next_iss.wrapping_add(64_000);
        iss
    }

    fn insert_flow(&mut self, flow: Flow) {
        self.tuples.insert((flow.guest, flow.remote), flow.conn);
        self.flows.insert(flow.conn, flow);
    }

    fn flush_flow(
        &mut self,
        conn: ConnId,
        out: Vec<TcpSegment>,
        actions: Vec<HostAction>,
        disposition: Disposition,
    ) {
        let Some(flow) = self.flows.get(&conn) else {
            return;
        };
        let (guest, remote, mac) = (flow.guest, flow.remote, flow.guest_mac);
        for seg in out {
            let bytes = seg.encode(*remote.ip(), *guest.ip());
            self.queue_ipv4(
                mac,
                Ipv4Packet::new(*remote.ip(), *guest.ip(), PROTO_TCP, bytes),
            );
        }
        self.actions.extend(actions);
        if disposition == Disposition::Remove {
            self.flows.remove(&conn);
            self.tuples.remove(&(guest, remote));
        }
    }

    fn with_flow(
        &mut self,
        conn: ConnId,
        f: impl FnOnce(&mut Flow, &mut Vec<TcpSegment>, &mut Vec<HostAction>) -> Disposition,
    ) {
        let Some(flow) = self.flows.get_mut(&conn) else {
            return;
        };
        let mut out = Vec::new();
        let mut actions = Vec::new();
        let d = f(flow, &mut out, &mut actions);
        self.flush_flow(conn, out, actions, d);
    }

    /// A host client connected to the listener for `rule`. Starts the
    /// handshake toward the guest from the gateway address.
    pub fn host_connection_in(
        &mut self,
        rule: &ForwardRule,
        now: Instant,
    ) -> Result<ConnId, UsernetError> {
        if !self.config.forwards.contains(rule) {
            return Err(UsernetError::UnknownRule(rule.to_string()));
        }
        if rule.proto != Proto::Tcp {
            return Err(UsernetError::UnsupportedProto(rule.to_string()));
        }
        let guest_ip = rule
            .guest_addr
            .or_else(|| self.first_lease())
            .ok_or_else(|| UsernetError::NoGuest(rule.to_string()))?;
        let guest_mac = self
            .arp
            .get(&guest_ip)
            .copied()
            .or_else(|| self.leases.by_ip(guest_ip).map(|l| l.mac))
            .ok_or_else(|| UsernetError::NoGuest(rule.to_string()))?;
        let guest = SocketAddrV4::new(guest_ip, rule.guest_port);
        let remote = self.alloc_port(guest)?;
        let conn = self.alloc_conn();
        let iss = self.alloc_iss();
        let flow = Flow::inbound(conn, guest, remote, guest_mac, iss, now);
        self.insert_flow(flow);
        self.counters.inbound_flows += 1;
        self.with_flow(conn, |f, out, _| {
            f.open(now, out);
            Disposition::Keep
        });
        Ok(conn)
    }

    fn alloc_port(&mut self, guest: SocketAddrV4) -> Result<SocketAddrV4, UsernetError> {
        let span = u32::from(u16::MAX - EPHEMERAL_START) + 1;
        for _ in 0..span {
            let port = self.next_port;
            self.next_port = if port == u16::MAX {
                EPHEMERAL_START
            } else {
                port + 1
            };
            let remote = SocketAddrV4::new(self.plan.gateway_ip, port);
            if !self.tuples.contains_key(&(guest, remote)) {
                return Ok(remote);
            }
        }
        Err(UsernetError::PortsExhausted(*guest.ip()))
    }

    pub fn host_connected(&mut self, conn: ConnId, now: Instant) {
        self.with_flow(conn, |f, out, _| {
            f.host_connected(now, out);
            Disposition::Keep
        });
    }

    pub fn host_connect_failed(&mut self, conn: ConnId) {
        self.with_flow(conn, |f, out, actions| f.abort(out, actions));
    }

    pub fn host_data(&mut self, conn: ConnId, data: &[u8], now: Instant) {
        self.with_flow(conn, |f, out, _| {
            f.host_data(data, now, out);
            Disposition::Keep
        });
    }

    pub fn host_eof(&mut self, conn: ConnId, now: Instant) {
        self.with_flow(conn, |f, out, _| {
            f.host_eof(now, out);
            Disposition::Keep
        });
    }

    /// The host side failed or was reset; the guest side is reset too.
    pub fn host_reset(&mut self, conn: ConnId) {
        self.with_flow(conn, |f, out, actions| f.abort(out, actions));
    }

    /// A frame arriving from outside the segment rather than through a host
    /// socket. The relay terminates every connection on the host, so nothing
    /// from outside is ever delivered to the guest directly.
    pub fn external_frame_in(&mut self, raw: &[u8]) {
        let _ = raw;
        self.counters.unsolicited += 1;
        self.counters.dropped += 1;
    }

    pub fn tick(&mut self, now: Instant) {
        let due: Vec<ConnId> = self
            .flows
            .values()
            .filter(|f| f.deadline().is_some_and(|d| d <= now))
            .map(|f| f.conn)
            .collect();
        for conn in due {
            self.with_flow(conn, |f, out, actions| f.tick(now, out, actions));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wire::{encode_frame, TcpFlags};

    const GUEST_MAC: MacAddress = MacAddress([0x52, 0x54, 0x00, 0x12, 0x34, 0x56]);

    fn stack() -> UserNet {
        let cfg = parse_nic_config("user,model=open_eth,id=lo0,hostfwd=tcp::8000-:80").unwrap();
        UserNet::new(SubnetPlan::default(), &cfg)
    }

    fn discover(mac: MacAddress, xid: u32) -> DhcpMessage {
        DhcpMessage::new(DhcpOp::Request, DhcpMessageType::Discover, xid, mac)
    }

    fn bind(net: &mut UserNet, mac: MacAddress) -> Ipv4Addr {
        let offer = net.dhcp_step(&discover(mac, 1)).unwrap();
        let mut req = DhcpMessage::new(DhcpOp::Request, DhcpMessageType::Request, 1, mac);
        req.requested_ip = Some(offer.your_ip);
        req.server_id = Some(Ipv4Addr::new(10, 0, 2, 2));
        let ack = net.dhcp_step(&req).unwrap();
        assert_eq!(ack.message_type, DhcpMessageType::Ack);
        net.poll_frames_out();
        ack.your_ip
    }

    fn tcp_frame(
        src: SocketAddrV4,
        dst: SocketAddrV4,
        seq: u32,
        ack: u32,
        flags: TcpFlags,
        payload: &[u8],
    ) -> Vec<u8> {
        let seg = TcpSegment {
            src_port: src.port(),
            dst_port: dst.port(),
            seq,
            ack,
            flags,
            window: 8192,
            payload: payload.to_vec(),
        };
        let ip = Ipv4Packet::new(
            *src.ip(),
            *dst.ip(),
            PROTO_TCP,
            seg.encode(*src.ip(), *dst.ip()),
        );
        let f = EthernetFrame::new(
            SubnetPlan::default().gateway_mac,
            GUEST_MAC,
            ETHERTYPE_IPV4,
            ip.encode().unwrap(),
        );
        encode_frame(&f).unwrap()
    }

    fn segments(net: &mut UserNet) -> Vec<TcpSegment> {
        net.poll_frames_out()
            .into_iter()
            .map(|f| {
                let p = Ipv4Packet::decode(&f.payload).unwrap();
                TcpSegment::decode(p.src, p.dst, &p.payload).unwrap()
            })
            .collect()
    }

    #[test]
    fn leases_are_sequential_and_nak_unknown() {
        let mut net = stack();
        let a = net.dhcp_step(&discover(GUEST_MAC, 7)).unwrap();
        assert_eq!(a.your_ip, Ipv4Addr::new(10, 0, 2, 15));
        assert_eq!(net.poll_frames_out().len(), 1);
        let other = MacAddress([2, 0, 0, 0, 0, 9]);
        assert_eq!(
            net.dhcp_step(&discover(other, 8)).unwrap().your_ip,
            Ipv4Addr::new(10, 0, 2, 16)
        );
        let mut req = DhcpMessage::new(DhcpOp::Request, DhcpMessageType::Request, 9, GUEST_MAC);
        req.requested_ip = Some(Ipv4Addr::new(10, 0, 2, 99));
        assert_eq!(
            net.dhcp_step(&req).unwrap().message_type,
            DhcpMessageType::Nak
        );
        assert!(net.poll_frames_out().len() == 2);
        assert!(net.poll_frames_out().is_empty());
    }

    #[test]
    fn arp_for_gateway_is_answered() {
        let mut net = stack();
        let req = ArpPacket::request(
            GUEST_MAC,
            Ipv4Addr::new(10, 0, 2, 15),
            Ipv4Addr::new(10, 0, 2, 2),
        );
        let f = EthernetFrame::new(
            MacAddress::BROADCAST,
            GUEST_MAC,
            ETHERTYPE_ARP,
            req.encode(),
        );
        net.guest_frame_in(&encode_frame(&f).unwrap(), Instant::now());
        let out = net.poll_frames_out();
        assert_eq!(out.len(), 1);
        let reply = ArpPacket::decode(&out[0].payload).unwrap();
        assert_eq!(reply.operation, ArpOperation::Reply);
        assert_eq!(reply.sender_mac, net.plan().gateway_mac);
    }

    #[test]
    fn unsolicited_ack_is_dropped() {
        let mut net = stack();
        let g = SocketAddrV4::new(Ipv4Addr::new(10, 0, 2, 15), 80);
        let r = SocketAddrV4::new(Ipv4Addr::new(1, 2, 3, 4), 5555);
        net.guest_frame_in(&tcp_frame(g, r, 1, 1, TcpFlags::ACK, b""), Instant::now());
        assert_eq!(net.counters().dropped, 1);
        assert!(net.poll_frames_out().is_empty());
        assert!(net.poll_host_actions().is_empty());
    }

    #[test]
    fn outbound_syn_connects_then_synthesizes_syn_ack() {
        let mut net = stack();
        let now = Instant::now();
        let g = SocketAddrV4::new(Ipv4Addr::new(10, 0, 2, 15), 40000);
        let r = SocketAddrV4::new(Ipv4Addr::new(93, 184, 216, 34), 80);
        net.guest_frame_in(&tcp_frame(g, r, 100, 0, TcpFlags::SYN, b""), now);
        let acts = net.poll_host_actions();
        let conn = match acts.as_slice() {
            [HostAction::Connect { conn, addr }] if *addr == r => *conn,
            other => panic!("{other:?}"),
        };
        assert!(net.poll_frames_out().is_empty());
        net.host_connected(conn, now);
        let segs = segments(&mut net);
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].flags, TcpFlags::SYN_ACK);
        assert_eq!(segs[0].ack, 101);
        let iss = segs[0].seq;
        net.guest_frame_in(&tcp_frame(g, r, 101, iss + 1, TcpFlags::ACK, b""), now);
        assert_eq!(net.flow_state(conn), Some(TcpState::Established));
        net.guest_frame_in(
            &tcp_frame(g, r, 101, iss + 1, TcpFlags::PSH_ACK, b"GET /"),
            now,
        );
        let acts = net.poll_host_actions();
        assert_eq!(
            acts,
            vec![HostAction::Send {
                conn,
                data: b"GET /".to_vec()
            }]
        );
        assert_eq!(segments(&mut net)[0].ack, 106);
    }

    #[test]
    fn inbound_forward_relays_both_directions_and_closes() {
        let mut net = stack();
        let ip = bind(&mut net, GUEST_MAC);
        let now = Instant::now();
        let rule = net.config().forwards[0].clone();
        let conn = net.host_connection_in(&rule, now).unwrap();
        let syn = segments(&mut net).remove(0);
        assert_eq!(syn.flags, TcpFlags::SYN);
        assert_eq!(syn.dst_port, 80);
        let g = SocketAddrV4::new(ip, 80);
        let r = SocketAddrV4::new(Ipv4Addr::new(10, 0, 2, 2), syn.src_port);
        net.guest_frame_in(
            &tcp_frame(g, r, 5000, syn.seq + 1, TcpFlags::SYN_ACK, b""),
            now,
        );
        assert_eq!(segments(&mut net)[0].flags, TcpFlags::ACK);
        assert_eq!(net.flow_state(conn), Some(TcpState::Established));

        net.host_data(conn, b"ping", now);
        let data = segments(&mut net).remove(0);
        assert_eq!(data.payload, b"ping");
        net.host_eof(conn, now);
        let fin = segments(&mut net).remove(0);
        assert!(fin.flags.fin);
        net.guest_frame_in(
            &tcp_frame(g, r, 5001, fin.seq + 1, TcpFlags::PSH_ACK, b"pong"),
            now,
        );
        net.guest_frame_in(
            &tcp_frame(g, r, 5005, fin.seq + 1, TcpFlags::FIN_ACK, b""),
            now,
        );
        let acts = net.poll_host_actions();
        assert_eq!(
            acts,
            vec![
                HostAction::Send {
                    conn,
                    data: b"pong".to_vec()
                },
                HostAction::ShutdownWrite { conn },
                HostAction::Close { conn },
            ]
        );
        assert_eq!(net.flow_count(), 0);
    }

    #[test]
    fn guest_rst_closes_host() {
        let mut net = stack();
        let ip = bind(&mut net, GUEST_MAC);
        let now = Instant::now();
        let rule = net.config().forwards[0].clone();
        let conn = net.host_connection_in(&rule, now).unwrap();
        let syn = segments(&mut net).remove(0);
        let g = SocketAddrV4::new(ip, 80);
        let r = SocketAddrV4::new(Ipv4Addr::new(10, 0, 2, 2), syn.src_port);
        net.guest_frame_in(
            &tcp_frame(g, r, 0, syn.seq + 1, TcpFlags::RST_ACK, b""),
            now,
        );
        assert_eq!(net.poll_host_actions(), vec![HostAction::Close { conn }]);
    }

    #[test]
    fn handshake_timeout_closes_host() {
        let mut net = stack();
        bind(&mut net, GUEST_MAC);
        let now = Instant::now();
        let rule = net.config().forwards[0].clone();
        let conn = net.host_connection_in(&rule, now).unwrap();
        let mut t = now;
        let mut syns = 0;
        while net.flow_count() > 0 {
            t = net.next_deadline().unwrap();
            net.tick(t);
            syns += segments(&mut net)
                .iter()
                .filter(|s| s.flags == TcpFlags::SYN)
                .count();
        }
        assert!(t <= now + HANDSHAKE_TIMEOUT);
        assert!(syns >= 1);
        assert_eq!(net.poll_host_actions(), vec![HostAction::Close { conn }]);
    }

    #[test]
    fn forward_without_lease_fails() {
        let mut net = stack();
        let rule = net.config().forwards[0].clone();
        assert!(matches!(
            net.host_connection_in(&rule, Instant::now()),
            Err(UsernetError::NoGuest(_))
        ));
        let stray = ForwardRule::tcp(9999, 80);
        assert!(matches!(
            net.host_connection_in(&stray, Instant::now()),
            Err(UsernetError::UnknownRule(_))
        ));
    }
}
