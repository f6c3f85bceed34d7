//! Guest-facing half of a relayed TCP connection.
//!
//! The stack terminates the guest's TCP locally and joins it to a host
//! socket; sequence numbers on the guest side are synthesized here.

use std::collections::VecDeque;
use std::net::SocketAddrV4;
use std::time::{Duration, Instant};

use super::{ConnId, HostAction};
use crate::wire::{MacAddress, TcpFlags, TcpSegment};

pub const WINDOW: u16 = 8192;
pub const MSS: usize = 1460;
pub const RETRANSMIT_TIMEOUT: Duration = Duration::from_millis(500);
pub const MAX_RETRIES: u32 = 5;
pub const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Host connected to a forwarded port; the stack dialed the guest.
    Inbound,
    /// Guest dialed out; the stack opened a host socket.
    Outbound,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TcpState {
    /// Inbound: SYN sent to the guest, awaiting SYN-ACK.
    SynSent,
    /// Outbound: guest SYN seen, host connect in progress.
    Connecting,
    /// Outbound: SYN-ACK sent to the guest, awaiting its ACK.
    SynReceived,
    Established,
    Closed,
}

fn seq_lt(a: u32, b: u32) -> bool {
    (a.wrapping_sub(b) as i32) < 0
}

#[derive(Debug)]
pub struct Flow {
    pub conn: ConnId,
    pub direction: Direction,
    pub guest: SocketAddrV4,
    pub remote: SocketAddrV4,
    pub guest_mac: MacAddress,
    pub state: TcpState,
    iss: u32,
    snd_una: u32,
    snd_nxt: u32,
    rcv_nxt: u32,
    peer_window: u16,
    /// Host-to-guest bytes starting at `snd_una`: in flight, then unsent.
    pending: VecDeque<u8>,
    host_eof: bool,
    fin_sent: bool,
    fin_acked: bool,
    guest_fin: bool,
    rto: Option<Instant>,
    retries: u32,
    created: Instant,
}

/// What the owning stack should do with a flow after an event.
#[derive(Debug, PartialEq, Eq)]
pub enum Disposition {
    Keep,
    Remove,
}

impl Flow {
    pub fn inbound(
        conn: ConnId,
        guest: SocketAddrV4,
        remote: SocketAddrV4,
        guest_mac: MacAddress,
        iss: u32,
        now: Instant,
    ) -> Self {
        Self::new(
            conn,
            Direction::Inbound,
            guest,
            remote,
            guest_mac,
            iss,
            TcpState::SynSent,
            now,
        )
    }

    pub fn outbound(
        conn: ConnId,
        guest: SocketAddrV4,
        remote: SocketAddrV4,
        guest_mac: MacAddress,
        iss: u32,
        guest_isn: u32,
        now: Instant,
    ) -> Self {
        let mut f = Self::new(
            conn,
            Direction::Outbound,
            guest,
            remote,
            guest_mac,
            iss,
            TcpState::Connecting,
            now,
        );
        f.rcv_nxt = guest_isn.wrapping_add(1);
        f
    }

    #[allow(clippy::too_many_arguments)]
    fn new(
        conn: ConnId,
        direction: Direction,
        guest: SocketAddrV4,
        remote: SocketAddrV4,
        guest_mac: MacAddress,
        iss: u32,
        state: TcpState,
        now: Instant,
    ) -> Self {
        Self {
            conn,
            direction,
            guest,
            remote,
            guest_mac,
            state,
            iss,
            snd_una: iss,
            snd_nxt: iss,
            rcv_nxt: 0,
            peer_window: WINDOW,
            pending: VecDeque::new(),
            host_eof: false,
            fin_sent: false,
            fin_acked: false,
            guest_fin: false,
            rto: None,
            retries: 0,
            created: now,
        }
    }

    fn segment(&self, seq: u32, flags: TcpFlags, payload: Vec<u8>) -> TcpSegment {
        TcpSegment {
            src_port: self.remote.port(),
            dst_port: self.guest.port(),
            seq,
            ack: if flags.ack { self.rcv_nxt } else { 0 },
            flags,
            window: WINDOW,
            payload,
        }
    }

    fn ack_segment(&self) -> TcpSegment {
        self.segment(self.snd_nxt, TcpFlags::ACK, Vec::new())
    }

    pub fn rst_segment(&self) -> TcpSegment {
        self.segment(self.snd_nxt, TcpFlags::RST_ACK, Vec::new())
    }

    pub fn deadline(&self) -> Option<Instant> {
        let handshake = matches!(
            self.state,
            TcpState::SynSent | TcpState::SynReceived | TcpState::Connecting
        )
        .then(|| self.created + HANDSHAKE_TIMEOUT);
        match (self.rto, handshake) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    /// Emits the initial SYN toward the guest (inbound flows).
    pub fn open(&mut self, now: Instant, out: &mut Vec<TcpSegment>) {
        out.push(self.segment(self.iss, TcpFlags::SYN, Vec::new()));
        self.snd_nxt = self.iss.wrapping_add(1);
        self.rto = Some(now + RETRANSMIT_TIMEOUT);
    }

    /// Host socket connected (outbound flows): answer the guest's SYN.
    pub fn host_connected(&mut self, now: Instant, out: &mut Vec<TcpSegment>) {
        if self.state == TcpState::Connecting {
            self.state = TcpState::SynReceived;
            out.push(self.segment(self.iss, TcpFlags::SYN_ACK, Vec::new()));
            self.snd_nxt = self.iss.wrapping_add(1);
            self.rto = Some(now + RETRANSMIT_TIMEOUT);
        }
    }

    pub fn host_data(&mut self, data: &[u8], now: Instant, out: &mut Vec<TcpSegment>) {
        self.pending.extend(data);
        self.flush(now, out);
    }

    pub fn host_eof(&mut self, now: Instant, out: &mut Vec<TcpSegment>) {
        self.host_eof = true;
        self.flush(now, out);
    }

    fn in_flight(&self) -> u32 {
        self.snd_nxt.wrapping_sub(self.snd_una)
    }

    /// Sends as much pending data as the window allows, then FIN once drained.
    pub fn flush(&mut self, now: Instant, out: &mut Vec<TcpSegment>) {
        if self.state != TcpState::Established {
            return;
        }
        let window = u32::from(self.peer_window.min(WINDOW));
        loop {
            let in_flight = self.in_flight();
            let fin_in_flight = self.fin_sent && !self.fin_acked;
            let sent = (in_flight - fin_in_flight as u32) as usize;
            let unsent = self.pending.len() - sent;
            if unsent > 0 && in_flight < window {
                let n = unsent.min(MSS).min((window - in_flight) as usize);
                let payload: Vec<u8> = self.pending.range(sent..sent + n).copied().collect();
                out.push(self.segment(self.snd_nxt, TcpFlags::PSH_ACK, payload));
                self.snd_nxt = self.snd_nxt.wrapping_add(n as u32);
                self.rto.get_or_insert(now + RETRANSMIT_TIMEOUT);
                continue;
            }
            if unsent == 0 && self.host_eof && !self.fin_sent {
                out.push(self.segment(self.snd_nxt, TcpFlags::FIN_ACK, Vec::new()));
                self.snd_nxt = self.snd_nxt.wrapping_add(1);
                self.fin_sent = true;
                self.rto.get_or_insert(now + RETRANSMIT_TIMEOUT);
            }
            break;
        }
    }

    fn process_ack(&mut self, ack: u32, now: Instant) {
        let acked = ack.wrapping_sub(self.snd_una);
        if acked == 0 || acked > self.in_flight() {
            return;
        }
        let data = (acked as usize).min(self.pending.len());
        self.pending.drain(..data);
        if self.fin_sent && ack == self.snd_nxt {
            self.fin_acked = true;
        }
        self.snd_una = ack;
        self.retries = 0;
        self.rto = (self.in_flight() > 0).then(|| now + RETRANSMIT_TIMEOUT);
    }

    /// Handles one segment from the guest.
    pub fn guest_segment(
        &mut self,
        seg: &TcpSegment,
        now: Instant,
        out: &mut Vec<TcpSegment>,
        actions: &mut Vec<HostAction>,
    ) -> Disposition {
        if seg.flags.rst {
            self.state = TcpState::Closed;
            actions.push(HostAction::Close { conn: self.conn });
            return Disposition::Remove;
        }
        match self.state {
            TcpState::SynSent => {
                if seg.flags.syn && seg.flags.ack && seg.ack == self.iss.wrapping_add(1) {
                    self.rcv_nxt = seg.seq.wrapping_add(1);
                    self.snd_una = seg.ack;
                    self.peer_window = seg.window;
                    self.state = TcpState::Established;
                    self.rto = None;
                    self.retries = 0;
                    out.push(self.ack_segment());
                    self.flush(now, out);
                }
                return Disposition::Keep;
            }
            TcpState::Connecting => return Disposition::Keep,
            TcpState::SynReceived => {
                if seg.flags.syn {
                    // retransmitted SYN: repeat our SYN-ACK
                    out.push(self.segment(self.iss, TcpFlags::SYN_ACK, Vec::new()));
                    return Disposition::Keep;
                }
                if !(seg.flags.ack && seg.ack == self.iss.wrapping_add(1)) {
                    return Disposition::Keep;
                }
                self.snd_una = seg.ack;
                self.state = TcpState::Established;
                self.rto = None;
                self.retries = 0;
            }
            TcpState::Established => {}
            TcpState::Closed => return Disposition::Remove,
        }

        if seg.flags.syn {
            // the guest lost our final handshake ACK
            out.push(self.ack_segment());
            return Disposition::Keep;
        }
        if seg.flags.ack {
            self.process_ack(seg.ack, now);
        }
        self.peer_window = seg.window;

        let mut payload: &[u8] = &seg.payload;
        let mut seq = seg.seq;
        if seq_lt(seq, self.rcv_nxt) {
            let skip = self.rcv_nxt.wrapping_sub(seq) as usize;
            if skip >= payload.len() + seg.flags.fin as usize {
                if seg.seq_len() > 0 {
                    out.push(self.ack_segment());
                }
                self.flush(now, out);
                return self.disposition(actions);
            }
            let skip = skip.min(payload.len());
            payload = &payload[skip..];
            seq = seq.wrapping_add(skip as u32);
        }
        if seq != self.rcv_nxt {
            // out of order: duplicate ACK, drop
            out.push(self.ack_segment());
            return self.disposition(actions);
        }
        let mut consumed = false;
        if !payload.is_empty() && !self.guest_fin {
            actions.push(HostAction::Send {
                conn: self.conn,
                data: payload.to_vec(),
            });
            self.rcv_nxt = self.rcv_nxt.wrapping_add(payload.len() as u32);
            consumed = true;
        }
        if seg.flags.fin && !self.guest_fin {
            self.rcv_nxt = self.rcv_nxt.wrapping_add(1);
            self.guest_fin = true;
            actions.push(HostAction::ShutdownWrite { conn: self.conn });
            consumed = true;
        }
        if consumed {
            out.push(self.ack_segment());
        }
        self.flush(now, out);
        self.disposition(actions)
    }

    fn disposition(&mut self, actions: &mut Vec<HostAction>) -> Disposition {
        if self.guest_fin && self.fin_acked {
            self.state = TcpState::Closed;
            actions.push(HostAction::Close { conn: self.conn });
            Disposition::Remove
        } else {
            Disposition::Keep
        }
    }

    /// Fires retransmission and handshake timers.
    pub fn tick(
        &mut self,
        now: Instant,
        out: &mut Vec<TcpSegment>,
        actions: &mut Vec<HostAction>,
    ) -> Disposition {
        let handshaking = matches!(
            self.state,
            TcpState::SynSent | TcpState::SynReceived | TcpState::Connecting
        );
        if handshaking && now >= self.created + HANDSHAKE_TIMEOUT {
            return self.abort(out, actions);
        }
        let Some(deadline) = self.rto else {
            return Disposition::Keep;
        };
        if now < deadline {
            return Disposition::Keep;
        }
        self.retries += 1;
        if self.retries > MAX_RETRIES {
            return self.abort(out, actions);
        }
        self.rto = Some(now + RETRANSMIT_TIMEOUT);
        match self.state {
            TcpState::SynSent => out.push(self.segment(self.iss, TcpFlags::SYN, Vec::new())),
            TcpState::SynReceived => {
                out.push(self.segment(self.iss, TcpFlags::SYN_ACK, Vec::new()))
            }
            TcpState::Established => {
                // go-back-N from the oldest unacknowledged byte
                self.snd_nxt = self.snd_una;
                self.fin_sent = false;
                self.rto = None;
                self.flush(now, out);
            }
            TcpState::Connecting | TcpState::Closed => {}
        }
        Disposition::Keep
    }

    /// Resets the guest side and closes the host socket.
    pub fn abort(
        &mut self,
        out: &mut Vec<TcpSegment>,
        actions: &mut Vec<HostAction>,
    ) -> Disposition {
        if self.state != TcpState::Connecting {
            out.push(self.rst_segment());
        } else {
            out.push(self.segment(0, TcpFlags::RST_ACK, Vec::new()));
        }
        self.state = TcpState::Closed;
        actions.push(HostAction::Close { conn: self.conn });
        Disposition::Remove
    }
}
