use std::collections::HashMap;
use std::net::Ipv4Addr;

use crate::wire::MacAddress;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeaseState {
    Offered,
    Bound,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lease {
    pub mac: MacAddress,
    pub ip: Ipv4Addr,
    pub state: LeaseState,
}

/// Address pool handing out consecutive addresses from `start`. Leases are
/// never reclaimed, so an address is never reused while leased.
#[derive(Debug, Clone)]
pub struct LeaseTable {
    start: u32,
    capacity: u32,
    by_mac: HashMap<MacAddress, Lease>,
    order: Vec<MacAddress>,
}

impl LeaseTable {
    pub fn new(start: Ipv4Addr, capacity: u32) -> Self {
        Self {
            start: u32::from(start),
            capacity,
            by_mac: HashMap::new(),
            order: Vec::new(),
        }
    }

    /// Existing lease for `mac`, or the next free address.
    pub fn offer(&mut self, mac: MacAddress) -> Option<Ipv4Addr> {
        if let Some(l) = self.by_mac.get(&mac) {
            return Some(l.ip);
        }
        let k = self.order.len() as u32;
        if k >= self.capacity {
            return None;
        }
        let ip = Ipv4Addr::from(self.start + k);
        self.by_mac.insert(
            mac,
            Lease {
                mac,
                ip,
                state: LeaseState::Offered,
            },
        );
        self.order.push(mac);
        Some(ip)
    }

    /// Binds the lease if `ip` is the address offered to `mac`.
    pub fn request(&mut self, mac: MacAddress, ip: Ipv4Addr) -> bool {
        match self.by_mac.get_mut(&mac) {
            Some(l) if l.ip == ip => {
                l.state = LeaseState::Bound;
                true
            }
            _ => false,
        }
    }

    pub fn get(&self, mac: &MacAddress) -> Option<&Lease> {
        self.by_mac.get(mac)
    }

    pub fn by_ip(&self, ip: Ipv4Addr) -> Option<&Lease> {
        self.by_mac.values().find(|l| l.ip == ip)
    }

    /// Leases in allocation order.
    pub fn leases(&self) -> impl Iterator<Item = &Lease> {
        self.order.iter().map(|m| &self.by_mac[m])
    }

    pub fn first(&self) -> Option<&Lease> {
        self.leases().next()
    }
}
