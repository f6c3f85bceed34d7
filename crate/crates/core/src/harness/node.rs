//! One emulated board: device, guest and user-mode stack on a single thread.

use std::net::Ipv4Addr;
use std::time::Instant;

use crate::guest::{Guest, GuestConfig, GuestError};
use crate::mac::OpenEth;
use crate::trace::Tracer;
use crate::usernet::{NicConfig, SubnetPlan, UserNet};
use crate::wire::encode_frame;

/// Frames moved in each direction, for conservation checks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LinkCounters {
    pub guest_to_net: u64,
    pub net_to_guest: u64,
    /// Frames the device refused (filtered or ring full).
    pub refused: u64,
}

pub struct Node {
    pub dev: OpenEth,
    pub guest: Guest,
    pub net: UserNet,
    link: LinkCounters,
}

impl Node {
    pub fn boot(
        guest: GuestConfig,
        nic: &NicConfig,
        tracer: &Tracer,
        now: Instant,
    ) -> Result<Self, GuestError> {
        let mut dev = OpenEth::new(tracer);
        let guest = Guest::boot(&mut dev, guest, now)?;
        let net = UserNet::new(SubnetPlan::default(), nic);
        let mut node = Node {
            dev,
            guest,
            net,
            link: LinkCounters::default(),
        };
        node.pump(now);
        Ok(node)
    }

    pub fn guest_ip(&self) -> Option<Ipv4Addr> {
        self.guest.ip()
    }

    pub fn link(&self) -> LinkCounters {
        self.link
    }

    /// Moves frames between guest and stack and runs due timers until
    /// neither side has anything left to say.
    pub fn pump(&mut self, now: Instant) {
        self.net.tick(now);
        self.guest.step(&mut self.dev, now);
        loop {
            let mut moved = false;
            for frame in self.dev.backend_mut().drain() {
                self.link.guest_to_net += 1;
                self.net.guest_frame_in(&frame, now);
                moved = true;
            }
            for frame in self.net.poll_frames_out() {
                moved = true;
                let Ok(raw) = encode_frame(&frame) else {
                    continue;
                };
                self.link.net_to_guest += 1;
                if !self.dev.receive(&raw) {
                    self.link.refused += 1;
                }
                if self.dev.irq_asserted() {
                    self.guest.step(&mut self.dev, now);
                }
            }
            if self.dev.irq_asserted() {
                self.guest.step(&mut self.dev, now);
                moved = true;
            }
            if !moved {
                break;
            }
        }
    }

    pub fn next_deadline(&self) -> Option<Instant> {
        match (self.net.next_deadline(), self.guest.next_deadline()) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }
}
