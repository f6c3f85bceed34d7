//! Reduced TCP for the guest: passive open only, one listener per port.

use std::collections::VecDeque;
use std::net::SocketAddrV4;
use std::time::{Duration, Instant};

use crate::wire::{TcpFlags, TcpSegment};

pub const WINDOW: u16 = 8192;
pub const MSS: usize = 1460;
pub const RETRANSMIT_TIMEOUT: Duration = Duration::from_millis(300);
pub const MAX_RETRIES: u32 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TcpState {
    Listen,
    SynRcvd,
    Established,
    /// Our FIN is queued or sent; waiting for it to be acknowledged and for
    /// the peer's FIN.
    FinWait,
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TcpListener {
    pub port: u16,
    pub state: TcpState,
}

impl TcpListener {
    pub fn new(port: u16) -> Self {
        Self {
            port,
            state: TcpState::Listen,
        }
    }
}

fn seq_lt(a: u32, b: u32) -> bool {
    (a.wrapping_sub(b) as i32) < 0
}

#[derive(Debug)]
pub struct TcpConnection {
    pub local: SocketAddrV4,
    pub remote: SocketAddrV4,
    pub state: TcpState,
    iss: u32,
    snd_una: u32,
    snd_nxt: u32,
    rcv_nxt: u32,
    peer_window: u16,
    /// Unacknowledged and unsent outbound bytes, starting at `snd_una + syn`.
    tx: VecDeque<u8>,
    /// Inbound bytes not yet consumed by the application.
    pub rx: Vec<u8>,
    close_requested: bool,
    fin_sent: bool,
    fin_acked: bool,
    pub peer_fin: bool,
    rto: Option<Instant>,
    retries: u32,
}

impl TcpConnection {
    /// Passive open on receipt of `syn`; queues the SYN-ACK.
    pub fn accept(
        local: SocketAddrV4,
        remote: SocketAddrV4,
        syn: &TcpSegment,
        iss: u32,
        now: Instant,
        out: &mut Vec<TcpSegment>,
    ) -> Self {
        let c = Self {
            local,
            remote,
            state: TcpState::SynRcvd,
            iss,
            snd_una: iss,
            snd_nxt: iss.wrapping_add(1),
            rcv_nxt: syn.seq.wrapping_add(1),
            peer_window: syn.window,
            tx: VecDeque::new(),
            rx: Vec::new(),
            close_requested: false,
            fin_sent: false,
            fin_acked: false,
            peer_fin: false,
            rto: Some(now + RETRANSMIT_TIMEOUT),
            retries: 0,
        };
        out.push(c.segment(iss, TcpFlags::SYN_ACK, Vec::new()));
        c
    }

    fn segment(&self, seq: u32, flags: TcpFlags, payload: Vec<u8>) -> TcpSegment {
        TcpSegment {
            src_port: self.local.port(),
            dst_port: self.remote.port(),
            seq,
            ack: self.rcv_nxt,
            flags,
            window: WINDOW,
            payload,
        }
    }

    pub fn deadline(&self) -> Option<Instant> {
        self.rto
    }

    pub fn is_closed(&self) -> bool {
        self.state == TcpState::Closed
    }

    fn in_flight_data(&self) -> usize {
        let syn = (self.snd_una == self.iss) as u32;
        let fin = (self.fin_sent && !self.fin_acked) as u32;
        (self.snd_nxt.wrapping_sub(self.snd_una) - syn - fin) as usize
    }

    /// Appends application bytes to the send stream.
    pub fn send(&mut self, data: &[u8], now: Instant, out: &mut Vec<TcpSegment>) {
        if self.close_requested {
            return;
        }
        self.tx.extend(data);
        self.flush(now, out);
    }

    /// Sends FIN once every queued byte has gone out.
    pub fn close(&mut self, now: Instant, out: &mut Vec<TcpSegment>) {
        self.close_requested = true;
        if self.state == TcpState::Established {
            self.state = TcpState::FinWait;
        }
        self.flush(now, out);
    }

    fn flush(&mut self, now: Instant, out: &mut Vec<TcpSegment>) {
        if !matches!(self.state, TcpState::Established | TcpState::FinWait) {
            return;
        }
        let window = usize::from(self.peer_window.min(WINDOW));
        loop {
            let sent = self.in_flight_data();
            let unsent = self.tx.len() - sent;
            if unsent > 0 && sent < window {
                let n = unsent.min(MSS).min(window - sent);
                let payload: Vec<u8> = self.tx.range(sent..sent + n).copied().collect();
                out.push(self.segment(self.snd_nxt, TcpFlags::PSH_ACK, payload));
                self.snd_nxt = self.snd_nxt.wrapping_add(n as u32);
                self.rto.get_or_insert(now + RETRANSMIT_TIMEOUT);
                continue;
            }
            if unsent == 0 && self.close_requested && !self.fin_sent {
                out.push(self.segment(self.snd_nxt, TcpFlags::FIN_ACK, Vec::new()));
                self.snd_nxt = self.snd_nxt.wrapping_add(1);
                self.fin_sent = true;
                self.rto.get_or_insert(now + RETRANSMIT_TIMEOUT);
            }
            return;
        }
    }

    fn ack_now(&self, out: &mut Vec<TcpSegment>) {
        out.push(self.segment(self.snd_nxt, TcpFlags::ACK, Vec::new()));
    }

    pub fn segment_in(&mut self, seg: &TcpSegment, now: Instant, out: &mut Vec<TcpSegment>) {
        if seg.flags.rst {
            self.state = TcpState::Closed;
            return;
        }
        if seg.flags.syn {
            if self.state == TcpState::SynRcvd && seg.seq.wrapping_add(1) == self.rcv_nxt {
                out.push(self.segment(self.iss, TcpFlags::SYN_ACK, Vec::new()));
            } else {
                self.ack_now(out);
            }
            return;
        }
        if !seg.flags.ack {
            return;
        }
        let acked = seg.ack.wrapping_sub(self.snd_una);
        if acked > 0 && acked <= self.snd_nxt.wrapping_sub(self.snd_una) {
            let mut data = acked;
            if self.snd_una == self.iss {
                data -= 1;
                if self.state == TcpState::SynRcvd {
                    self.state = if self.close_requested {
                        TcpState::FinWait
                    } else {
                        TcpState::Established
                    };
                }
            }
            if self.fin_sent && seg.ack == self.snd_nxt {
                self.fin_acked = true;
                data -= 1;
            }
            self.tx.drain(..data as usize);
            self.snd_una = seg.ack;
            self.retries = 0;
            self.rto = (self.snd_nxt != self.snd_una).then(|| now + RETRANSMIT_TIMEOUT);
        }
        if self.state == TcpState::SynRcvd {
            return;
        }
        self.peer_window = seg.window;

        let mut payload: &[u8] = &seg.payload;
        let mut seq = seg.seq;
        if seq_lt(seq, self.rcv_nxt) {
            let skip = self.rcv_nxt.wrapping_sub(seq) as usize;
            if skip >= payload.len() + seg.flags.fin as usize {
                if seg.seq_len() > 0 {
                    self.ack_now(out);
                }
                self.flush(now, out);
                self.check_closed();
                return;
            }
            let skip = skip.min(payload.len());
            payload = &payload[skip..];
            seq = seq.wrapping_add(skip as u32);
        }
        if seq != self.rcv_nxt {
            self.ack_now(out);
            return;
        }
        let mut advanced = false;
        if !payload.is_empty() && !self.peer_fin {
            self.rx.extend_from_slice(payload);
            self.rcv_nxt = self.rcv_nxt.wrapping_add(payload.len() as u32);
            advanced = true;
        }
        if seg.flags.fin && !self.peer_fin {
            self.peer_fin = true;
            self.rcv_nxt = self.rcv_nxt.wrapping_add(1);
            advanced = true;
        }
        let before = out.len();
        self.flush(now, out);
        if advanced && out.len() == before {
            self.ack_now(out);
        }
        self.check_closed();
    }

    fn check_closed(&mut self) {
        if self.fin_acked && self.peer_fin {
            self.state = TcpState::Closed;
        }
    }

    pub fn tick(&mut self, now: Instant, out: &mut Vec<TcpSegment>) {
        let Some(deadline) = self.rto else { return };
        if now < deadline {
            return;
        }
        self.retries += 1;
        if self.retries > MAX_RETRIES {
            out.push(self.segment(self.snd_nxt, TcpFlags::RST_ACK, Vec::new()));
            self.state = TcpState::Closed;
            self.rto = None;
            return;
        }
        self.rto = Some(now + RETRANSMIT_TIMEOUT);
        if self.state == TcpState::SynRcvd {
            out.push(self.segment(self.iss, TcpFlags::SYN_ACK, Vec::new()));
            return;
        }
        // go-back-N
        self.snd_nxt = self.snd_una;
        if self.fin_sent && !self.fin_acked {
            self.fin_sent = false;
        }
        self.rto = None;
        self.flush(now, out);
    }
}

/// Reset answering a segment that matched no connection.
pub fn reset_for(seg: &TcpSegment) -> Option<TcpSegment> {
    if seg.flags.rst {
        return None;
    }
    let (seq, ack, flags) = if seg.flags.ack {
        (seg.ack, 0, TcpFlags::RST)
    } else {
        (0, seg.seq.wrapping_add(seg.seq_len()), TcpFlags::RST_ACK)
    };
    Some(TcpSegment {
        src_port: seg.dst_port,
        dst_port: seg.src_port,
        seq,
        ack,
        flags,
        window: 0,
        payload: Vec::new(),
    })
}
