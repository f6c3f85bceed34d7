//! Guest-side Ethernet driver for the open_eth device.

use std::collections::VecDeque;

use crate::mac::phy::{BMCR, BMCR_ANENABLE, BMCR_ANRESTART, BMSR, BMSR_LSTATUS, PHYID1, PHYID2};
use crate::mac::regs::*;
use crate::mac::{NetBackend, OpenEth};
use crate::wire::{MacAddress, MAX_FRAME_LEN};

use super::GuestError;

/// Transmit descriptors programmed by the driver; the remainder are receive.
pub const TX_SLOTS: usize = 64;
pub const RX_SLOTS: usize = DESC_COUNT - TX_SLOTS;
/// Per-descriptor buffer stride in guest memory.
pub const BUFFER_STRIDE: u32 = 0x600;
pub const RX_BUFFER_BASE: u32 = 0x0001_0000;
pub const TX_BUFFER_BASE: u32 = RX_BUFFER_BASE + RX_SLOTS as u32 * BUFFER_STRIDE;
/// BMSR polls before init gives up on the link.
pub const LINK_POLLS: usize = 16;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DriverCounters {
    pub tx_frames: u64,
    pub rx_frames: u64,
    pub rx_errors: u64,
    pub interrupts: u64,
}

#[derive(Debug)]
pub struct DriverState {
    pub mac: MacAddress,
    pub phy_id: u32,
    pub tx_next: usize,
    pub rx_next: usize,
    /// Frames waiting for a free transmit descriptor.
    backlog: VecDeque<Vec<u8>>,
    pub counters: DriverCounters,
}

fn rx_buffer(slot: usize) -> u32 {
    RX_BUFFER_BASE + slot as u32 * BUFFER_STRIDE
}

fn tx_buffer(slot: usize) -> u32 {
    TX_BUFFER_BASE + slot as u32 * BUFFER_STRIDE
}

fn rx_flags(slot: usize) -> u32 {
    let wrap = if slot == RX_SLOTS - 1 { BD_WRAP } else { 0 };
    u32::from(BD_EMPTY | BD_IRQ | wrap)
}

/// Brings the device up: link check, PHY identity, MAC address, receive then
/// transmit rings, interrupt mask, and finally MODER enable.
pub fn driver_init<B: NetBackend>(
    dev: &mut OpenEth<B>,
    mac: MacAddress,
) -> Result<DriverState, GuestError> {
    let mut up = false;
    for _ in 0..LINK_POLLS {
        if dev.mii_read(BMSR) & BMSR_LSTATUS != 0 {
            up = true;
            break;
        }
    }
    if !up {
        return Err(GuestError::LinkDown(LINK_POLLS));
    }
    let phy_id = u32::from(dev.mii_read(PHYID1)) << 16 | u32::from(dev.mii_read(PHYID2));
    dev.mii_write(BMCR, BMCR_ANENABLE | BMCR_ANRESTART);

    let m = mac.0;
    dev.reg_write(MAC_ADDR0, u32::from_be_bytes([m[2], m[3], m[4], m[5]]));
    dev.reg_write(MAC_ADDR1, u32::from(m[0]) << 8 | u32::from(m[1]));
    dev.reg_write(TX_BD_NUM, TX_SLOTS as u32);

    for slot in 0..RX_SLOTS {
        dev.desc_write(TX_SLOTS + slot, rx_flags(slot), rx_buffer(slot))?;
    }
    for slot in 0..TX_SLOTS {
        let wrap = if slot == TX_SLOTS - 1 { BD_WRAP } else { 0 };
        dev.desc_write(slot, u32::from(wrap), tx_buffer(slot))?;
    }

    dev.reg_write(INT_MASK, INT_RXB | INT_TXB | INT_RXE | INT_TXE | INT_BUSY);
    dev.reg_write(
        MODER,
        MODER_RXEN | MODER_TXEN | MODER_BRO | MODER_PAD | MODER_FULLD | MODER_CRCEN,
    );

    Ok(DriverState {
        mac,
        phy_id,
        tx_next: 0,
        rx_next: 0,
        backlog: VecDeque::new(),
        counters: DriverCounters::default(),
    })
}

impl DriverState {
    /// Reads and acknowledges pending interrupt causes.
    pub fn service_irq<B: NetBackend>(&mut self, dev: &mut OpenEth<B>) -> u32 {
        let cause = dev.reg_read(INT_SOURCE);
        if cause != 0 {
            self.counters.interrupts += 1;
            dev.reg_write(INT_SOURCE, cause);
        }
        cause
    }

    /// Collects every filled receive descriptor and hands it back to the device.
    pub fn receive<B: NetBackend>(&mut self, dev: &mut OpenEth<B>) -> Vec<Vec<u8>> {
        let mut frames = Vec::new();
        for _ in 0..RX_SLOTS {
            let index = TX_SLOTS + self.rx_next;
            let Ok((len_flags, addr)) = dev.desc_read(index) else {
                break;
            };
            let flags = len_flags as u16;
            if flags & BD_EMPTY != 0 {
                break;
            }
            let len = (len_flags >> 16) as usize;
            if flags & RXD_STATUS & !RXD_M != 0 {
                self.counters.rx_errors += 1;
            } else if let Ok(bytes) = dev.memory().read(addr, len) {
                frames.push(bytes.to_vec());
                self.counters.rx_frames += 1;
            }
            let _ = dev.desc_write(index, rx_flags(self.rx_next), addr);
            self.rx_next = (self.rx_next + 1) % RX_SLOTS;
        }
        frames
    }

    /// Queues a frame and pushes as much of the backlog as free descriptors allow.
    pub fn transmit<B: NetBackend>(&mut self, dev: &mut OpenEth<B>, frame: Vec<u8>) {
        debug_assert!(frame.len() <= MAX_FRAME_LEN);
        self.backlog.push_back(frame);
        self.flush(dev);
    }

    pub fn backlog(&self) -> usize {
        self.backlog.len()
    }

    pub fn flush<B: NetBackend>(&mut self, dev: &mut OpenEth<B>) {
        while let Some(frame) = self.backlog.front() {
            let slot = self.tx_next;
            let Ok((len_flags, _)) = dev.desc_read(slot) else {
                return;
            };
            if len_flags as u16 & BD_READY != 0 {
                return;
            }
            let addr = tx_buffer(slot);
            if dev.memory_mut().write(addr, frame).is_err() {
                return;
            }
            let wrap = if slot == TX_SLOTS - 1 { BD_WRAP } else { 0 };
            let flags = BD_READY | BD_IRQ | TXD_PAD | TXD_CRC | wrap;
            let len_flags = (frame.len() as u32) << 16 | u32::from(flags);
            self.backlog.pop_front();
            let _ = dev.desc_write(slot, len_flags, addr);
            self.counters.tx_frames += 1;
            self.tx_next = (slot + 1) % TX_SLOTS;
        }
    }
}
