//! OpenCores-style Ethernet MAC ("open_eth") device model.
//!
//! The device exposes a 2 KiB memory-mapped window: 32-bit registers in the
//! first kilobyte and 128 buffer descriptors (8 bytes each) from `0x400`.
//! Descriptors `[0, TX_BD_NUM)` form the transmit ring and
//! `[TX_BD_NUM, 128)` the receive ring. Frame buffers live in
//! [`GuestMemory`] and are moved by DMA when descriptor ownership passes to
//! the device (READY for transmit, EMPTY for receive).
//!
//! Every entry point emits a trace event named after the corresponding
//! `open_eth_*` function. The interrupt line is level-triggered and always
//! equals `(INT_SOURCE & INT_MASK) != 0` once an operation returns.

mod memory;
pub mod phy;
pub mod regs;

use std::collections::VecDeque;

use thiserror::Error;

use crate::trace::{TracePoint, Tracer};
use crate::wire::MacAddress;

pub use memory::{GuestMemory, DEFAULT_MEMORY_SIZE};
pub use phy::Phy;
use regs::*;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DeviceError {
    #[error("descriptor index {0} out of range")]
    DescriptorIndex(usize),
    #[error("guest memory access of {len} bytes at {addr:#x} out of range")]
    OutOfRange { addr: u32, len: usize },
}

/// Trace event names, one per device entry point.
pub mod events {
    pub const REG_READ: &str = "open_eth_reg_read";
    pub const REG_WRITE: &str = "open_eth_reg_write";
    pub const MII_READ: &str = "open_eth_mii_read";
    pub const MII_WRITE: &str = "open_eth_mii_write";
    pub const DESC_READ: &str = "open_eth_desc_read";
    pub const DESC_WRITE: &str = "open_eth_desc_write";
    pub const START_XMIT: &str = "open_eth_start_xmit";
    pub const RECEIVE: &str = "open_eth_receive";
    pub const RECEIVE_DESC: &str = "open_eth_receive_desc";
    pub const RECEIVE_MCAST: &str = "open_eth_receive_mcast";
    pub const UPDATE_IRQ: &str = "open_eth_update_irq";
    pub const INVALID_ACCESS: &str = "open_eth_invalid_access";

    pub const ALL: [&str; 12] = [
        REG_READ,
        REG_WRITE,
        MII_READ,
        MII_WRITE,
        DESC_READ,
        DESC_WRITE,
        START_XMIT,
        RECEIVE,
        RECEIVE_DESC,
        RECEIVE_MCAST,
        UPDATE_IRQ,
        INVALID_ACCESS,
    ];
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BufferDescriptor {
    pub len: u16,
    pub flags: u16,
    pub addr: u32,
}

impl BufferDescriptor {
    pub fn from_words(len_flags: u32, addr: u32) -> Self {
        Self {
            len: (len_flags >> 16) as u16,
            flags: len_flags as u16,
            addr,
        }
    }

    pub fn len_flags(&self) -> u32 {
        u32::from(self.len) << 16 | u32::from(self.flags)
    }
}

/// Frame sink the device hands transmitted frames to.
pub trait NetBackend {
    fn send(&mut self, frame: Vec<u8>);
}

/// Backend that queues transmitted frames for the owning event loop to drain.
#[derive(Debug, Default)]
pub struct QueueBackend {
    queue: VecDeque<Vec<u8>>,
}

impl QueueBackend {
    pub fn drain(&mut self) -> Vec<Vec<u8>> {
        self.queue.drain(..).collect()
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }
}

impl NetBackend for QueueBackend {
    fn send(&mut self, frame: Vec<u8>) {
        self.queue.push_back(frame);
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DeviceStats {
    pub tx_frames: u64,
    pub tx_errors: u64,
    pub rx_accepted: u64,
    pub rx_filtered: u64,
    pub rx_busy: u64,
    pub rx_errors: u64,
}

struct DeviceTrace {
    reg_read: TracePoint,
    reg_write: TracePoint,
    mii_read: TracePoint,
    mii_write: TracePoint,
    desc_read: TracePoint,
    desc_write: TracePoint,
    start_xmit: TracePoint,
    receive: TracePoint,
    receive_desc: TracePoint,
    receive_mcast: TracePoint,
    update_irq: TracePoint,
    invalid: TracePoint,
}

impl DeviceTrace {
    fn new(t: &Tracer) -> Self {
        Self {
            reg_read: t.point(events::REG_READ),
            reg_write: t.point(events::REG_WRITE),
            mii_read: t.point(events::MII_READ),
            mii_write: t.point(events::MII_WRITE),
            desc_read: t.point(events::DESC_READ),
            desc_write: t.point(events::DESC_WRITE),
            start_xmit: t.point(events::START_XMIT),
            receive: t.point(events::RECEIVE),
            receive_desc: t.point(events::RECEIVE_DESC),
            receive_mcast: t.point(events::RECEIVE_MCAST),
            update_irq: t.point(events::UPDATE_IRQ),
            invalid: t.point(events::INVALID_ACCESS),
        }
    }
}

/// Six-bit multicast hash index used with HASH0/HASH1.
///
/// CRC-32 (polynomial 0x04C11DB7, MSB-first register fed LSB-first bits,
/// no final inversion) over the destination address; the top six bits select
/// the filter bit.
pub fn multicast_hash(mac: &MacAddress) -> u32 {
    let mut crc: u32 = 0xFFFF_FFFF;
    for &byte in &mac.0 {
        let mut b = byte;
        for _ in 0..8 {
            let carry = (crc >> 31) ^ u32::from(b & 1);
            crc <<= 1;
            b >>= 1;
            if carry != 0 {
                crc ^= 0x04C1_1DB7;
            }
        }
    }
    crc >> 26
}

pub struct OpenEth<B: NetBackend = QueueBackend> {
    regs: [u32; REG_COUNT],
    descs: [BufferDescriptor; DESC_COUNT],
    tx_cursor: usize,
    /// Offset into the receive region, i.e. slot `TX_BD_NUM + rx_cursor`.
    rx_cursor: usize,
    irq: bool,
    phy: Phy,
    mem: GuestMemory,
    backend: B,
    stats: DeviceStats,
    trace: DeviceTrace,
}

impl OpenEth<QueueBackend> {
    pub fn new(tracer: &Tracer) -> Self {
        Self::with_parts(GuestMemory::default(), QueueBackend::default(), tracer)
    }
}

impl<B: NetBackend> OpenEth<B> {
    pub fn with_parts(mem: GuestMemory, backend: B, tracer: &Tracer) -> Self {
        let mut dev = OpenEth {
            regs: [0; REG_COUNT],
            descs: [BufferDescriptor::default(); DESC_COUNT],
            tx_cursor: 0,
            rx_cursor: 0,
            irq: false,
            phy: Phy::default(),
            mem,
            backend,
            stats: DeviceStats::default(),
            trace: DeviceTrace::new(tracer),
        };
        dev.reset();
        dev
    }

    /// Returns the device to power-on state. Guest memory is left untouched.
    pub fn reset(&mut self) {
        self.regs = [0; REG_COUNT];
        self.regs[(TX_BD_NUM / 4) as usize] = 0x40;
        self.phy.reset();
        self.sync_linkfail();
        self.descs = [BufferDescriptor::default(); DESC_COUNT];
        self.tx_cursor = 0;
        self.rx_cursor = 0;
        self.irq = false;
    }

    pub fn irq_asserted(&self) -> bool {
        self.irq
    }

    pub fn tx_cursor(&self) -> usize {
        self.tx_cursor
    }

    pub fn rx_cursor(&self) -> usize {
        self.rx_cursor
    }

    pub fn descriptors(&self) -> &[BufferDescriptor; DESC_COUNT] {
        &self.descs
    }

    pub fn memory(&self) -> &GuestMemory {
        &self.mem
    }

    pub fn memory_mut(&mut self) -> &mut GuestMemory {
        &mut self.mem
    }

    pub fn backend(&self) -> &B {
        &self.backend
    }

    pub fn backend_mut(&mut self) -> &mut B {
        &mut self.backend
    }

    pub fn phy_mut(&mut self) -> &mut Phy {
        &mut self.phy
    }

    pub fn stats(&self) -> DeviceStats {
        self.stats
    }

    /// Register value without tracing, for inspection.
    pub fn peek(&self, offset: u32) -> u32 {
        Self::reg_index(offset).map(|i| self.regs[i]).unwrap_or(0)
    }

    pub fn mac_address(&self) -> MacAddress {
        let a0 = self.reg(MAC_ADDR0).to_be_bytes();
        let a1 = self.reg(MAC_ADDR1).to_be_bytes();
        MacAddress([a1[2], a1[3], a0[0], a0[1], a0[2], a0[3]])
    }

    fn tx_bd_num(&self) -> usize {
        self.reg(TX_BD_NUM) as usize
    }

    fn reg(&self, offset: u32) -> u32 {
        self.regs[(offset / 4) as usize]
    }

    fn reg_mut(&mut self, offset: u32) -> &mut u32 {
        &mut self.regs[(offset / 4) as usize]
    }

    fn reg_index(offset: u32) -> Option<usize> {
        (offset.is_multiple_of(4) && offset <= TXCTRL).then_some((offset / 4) as usize)
    }

    fn sync_linkfail(&mut self) {
        let fail = if self.phy.link_up() {
            0
        } else {
            MIISTATUS_LINKFAIL
        };
        *self.reg_mut(MIISTATUS) = (self.reg(MIISTATUS) & !MIISTATUS_LINKFAIL) | fail;
    }

    /// Bus read anywhere in the device window.
    pub fn mmio_read(&mut self, offset: u32) -> u32 {
        if (DESC_BASE..WINDOW_SIZE).contains(&offset) && offset.is_multiple_of(4) {
            let index = ((offset - DESC_BASE) / 8) as usize;
            let (len_flags, addr) = self.desc_read(index).unwrap_or((0, 0));
            if offset.is_multiple_of(8) {
                len_flags
            } else {
                addr
            }
        } else {
            self.reg_read(offset)
        }
    }

    /// Bus write anywhere in the device window. Descriptor words are written individually.
    pub fn mmio_write(&mut self, offset: u32, value: u32) {
        if (DESC_BASE..WINDOW_SIZE).contains(&offset) && offset.is_multiple_of(4) {
            let index = ((offset - DESC_BASE) / 8) as usize;
            let cur = self.descs[index];
            let (len_flags, addr) = if offset.is_multiple_of(8) {
                (value, cur.addr)
            } else {
                (cur.len_flags(), value)
            };
            // index is in range by construction
            let _ = self.desc_write(index, len_flags, addr);
        } else {
            self.reg_write(offset, value);
        }
    }

    pub fn reg_read(&mut self, offset: u32) -> u32 {
        let Some(i) = Self::reg_index(offset) else {
            self.trace
                .reg_read
                .emit(|| format!("offset={offset:#05x} value=0x00000000 unmapped"));
            self.trace
                .invalid
                .emit(|| format!("op=read offset={offset:#05x}"));
            return 0;
        };
        let value = self.regs[i];
        self.trace.reg_read.emit(|| {
            format!(
                "offset={offset:#05x} reg={} value={value:#010x}",
                name(offset)
            )
        });
        value
    }

    pub fn reg_write(&mut self, offset: u32, value: u32) {
        self.trace.reg_write.emit(|| {
            format!(
                "offset={offset:#05x} reg={} value={value:#010x}",
                name(offset)
            )
        });
        let Some(i) = Self::reg_index(offset) else {
            self.trace
                .invalid
                .emit(|| format!("op=write offset={offset:#05x} value={value:#010x}"));
            return;
        };
        match offset {
            MODER => {
                let old = self.regs[i];
                self.regs[i] = value;
                let rising = value & !old;
                if rising & MODER_RXEN != 0 {
                    self.rx_cursor = 0;
                }
                if rising & MODER_TXEN != 0 {
                    self.tx_cursor = 0;
                }
                if value & MODER_TXEN != 0 {
                    self.start_xmit();
                }
            }
            INT_SOURCE => {
                self.regs[i] &= !value;
                self.update_irq();
            }
            INT_MASK => {
                self.regs[i] = value;
                self.update_irq();
            }
            TX_BD_NUM => {
                if value == 0 || value as usize > DESC_COUNT {
                    self.trace
                        .invalid
                        .emit(|| format!("op=write reg=TX_BD_NUM value={value:#x} out of range"));
                    return;
                }
                self.regs[i] = value;
                self.tx_cursor = 0;
                self.rx_cursor = 0;
            }
            MIICOMMAND => {
                self.regs[i] = value;
                self.mii_command(value);
                // command bits complete immediately
                self.regs[i] = 0;
            }
            MIIRX_DATA | MIISTATUS => {}
            _ => self.regs[i] = value,
        }
    }

    fn mii_command(&mut self, cmd: u32) {
        let address = self.reg(MIIADDRESS);
        let (fiad, rgad) = (mii_fiad(address), mii_rgad(address));
        if cmd & MIICOMMAND_WCTRLDATA != 0 && fiad == phy::PHY_ADDRESS {
            let data = self.reg(MIITX_DATA) as u16;
            self.mii_write(rgad, data);
        }
        if cmd & MIICOMMAND_RSTAT != 0 {
            let data = if fiad == phy::PHY_ADDRESS {
                u32::from(self.mii_read(rgad))
            } else {
                0xFFFF
            };
            *self.reg_mut(MIIRX_DATA) = data;
            self.sync_linkfail();
        }
    }

    pub fn mii_read(&mut self, phy_reg: u32) -> u16 {
        let value = self.phy.read(phy_reg);
        self.trace
            .mii_read
            .emit(|| format!("reg={phy_reg} value={value:#06x}"));
        value
    }

    pub fn mii_write(&mut self, phy_reg: u32, value: u16) {
        self.trace
            .mii_write
            .emit(|| format!("reg={phy_reg} value={value:#06x}"));
        self.phy.write(phy_reg, value);
    }

    pub fn desc_read(&mut self, index: usize) -> Result<(u32, u32), DeviceError> {
        let Some(d) = self.descs.get(index).copied() else {
            self.trace
                .desc_read
                .emit(|| format!("index={index} out of range"));
            return Err(DeviceError::DescriptorIndex(index));
        };
        self.trace.desc_read.emit(|| {
            format!(
                "index={index} len_flags={:#010x} addr={:#010x}",
                d.len_flags(),
                d.addr
            )
        });
        Ok((d.len_flags(), d.addr))
    }

    pub fn desc_write(
        &mut self,
        index: usize,
        len_flags: u32,
        addr: u32,
    ) -> Result<(), DeviceError> {
        self.trace
            .desc_write
            .emit(|| format!("index={index} len_flags={len_flags:#010x} addr={addr:#010x}"));
        let slot = self
            .descs
            .get_mut(index)
            .ok_or(DeviceError::DescriptorIndex(index))?;
        *slot = BufferDescriptor::from_words(len_flags, addr);
        let ready = slot.flags & BD_READY != 0;
        if index < self.tx_bd_num() && ready && self.reg(MODER) & MODER_TXEN != 0 {
            self.start_xmit();
        }
        Ok(())
    }

    /// Transmits every READY descriptor from the TX cursor onward.
    pub fn start_xmit(&mut self) {
        if self.reg(MODER) & MODER_TXEN == 0 {
            return;
        }
        let ring = self.tx_bd_num();
        let mut sent = 0usize;
        // each pass consumes one READY slot, so the ring bounds the scan
        for _ in 0..ring {
            let index = self.tx_cursor;
            let d = self.descs[index];
            if d.flags & BD_READY == 0 {
                break;
            }
            let mut flags = d.flags & !(BD_READY | TXD_STATUS);
            match self.mem.read(d.addr, usize::from(d.len)) {
                Ok(bytes) => {
                    let mut frame = bytes.to_vec();
                    if d.flags & TXD_PAD != 0 && frame.len() < crate::wire::MIN_FRAME_LEN {
                        frame.resize(crate::wire::MIN_FRAME_LEN, 0);
                    }
                    self.trace
                        .start_xmit
                        .emit(|| format!("index={index} len={}", frame.len()));
                    self.backend.send(frame);
                    self.stats.tx_frames += 1;
                    if d.flags & BD_IRQ != 0 {
                        *self.reg_mut(INT_SOURCE) |= INT_TXB;
                    }
                }
                Err(_) => {
                    self.trace.start_xmit.emit(|| {
                        format!("index={index} len={} addr={:#x} dma-error", d.len, d.addr)
                    });
                    flags |= TXD_UR;
                    self.stats.tx_errors += 1;
                    if d.flags & BD_IRQ != 0 {
                        *self.reg_mut(INT_SOURCE) |= INT_TXE;
                    }
                }
            }
            self.descs[index].flags = flags;
            sent += 1;
            self.tx_cursor = if d.flags & BD_WRAP != 0 || index + 1 >= ring {
                0
            } else {
                index + 1
            };
        }
        if sent == 0 {
            let cursor = self.tx_cursor;
            self.trace
                .start_xmit
                .emit(|| format!("index={cursor} idle"));
        }
        self.update_irq();
    }

    fn accepts(&mut self, dst: &MacAddress) -> Option<bool> {
        let moder = self.reg(MODER);
        let matched = if *dst == self.mac_address() {
            true
        } else if dst.is_broadcast() {
            moder & MODER_BRO != 0
        } else if dst.is_multicast() {
            self.receive_mcast(dst)
        } else {
            false
        };
        if matched {
            Some(false)
        } else if moder & MODER_PRO != 0 {
            Some(true)
        } else {
            None
        }
    }

    /// Hash-filter lookup for a multicast destination.
    pub fn receive_mcast(&mut self, dst: &MacAddress) -> bool {
        let bit = multicast_hash(dst);
        let word = if bit < 32 {
            self.reg(HASH0)
        } else {
            self.reg(HASH1)
        };
        let hit = (word >> (bit & 31)) & 1 != 0;
        self.trace
            .receive_mcast
            .emit(|| format!("dst={dst} bit={bit} hit={}", hit as u8));
        hit
    }

    /// Offers a frame from the wire. Returns whether it was stored in an RX buffer.
    pub fn receive(&mut self, frame: &[u8]) -> bool {
        self.trace.receive.emit(|| {
            let dst = frame
                .get(..6)
                .map(|d| MacAddress(d.try_into().unwrap()).to_string());
            format!("len={} dst={}", frame.len(), dst.as_deref().unwrap_or("-"))
        });
        if self.reg(MODER) & MODER_RXEN == 0 || frame.len() < crate::wire::ETH_HEADER_LEN {
            self.stats.rx_filtered += 1;
            return false;
        }
        let dst = MacAddress(frame[..6].try_into().unwrap());
        let Some(miss) = self.accepts(&dst) else {
            self.stats.rx_filtered += 1;
            return false;
        };
        let base = self.tx_bd_num();
        let index = base + self.rx_cursor;
        let d = self.descs.get(index).copied().unwrap_or_default();
        self.trace.receive_desc.emit(|| {
            format!(
                "index={index} len_flags={:#010x} addr={:#010x}",
                d.len_flags(),
                d.addr
            )
        });
        if index >= DESC_COUNT || d.flags & BD_EMPTY == 0 {
            *self.reg_mut(INT_SOURCE) |= INT_BUSY;
            self.stats.rx_busy += 1;
            self.update_irq();
            return false;
        }
        let mut flags = d.flags & !(BD_EMPTY | RXD_STATUS);
        let stored = match self.mem.write(d.addr, frame) {
            Ok(()) => {
                if miss {
                    flags |= RXD_M;
                }
                if d.flags & BD_IRQ != 0 {
                    *self.reg_mut(INT_SOURCE) |= INT_RXB;
                }
                self.stats.rx_accepted += 1;
                true
            }
            Err(_) => {
                flags |= RXD_OR;
                if d.flags & BD_IRQ != 0 {
                    *self.reg_mut(INT_SOURCE) |= INT_RXE;
                }
                self.stats.rx_errors += 1;
                false
            }
        };
        let len = if stored { frame.len() as u16 } else { 0 };
        self.descs[index] = BufferDescriptor {
            len,
            flags,
            addr: d.addr,
        };
        self.rx_cursor = if d.flags & BD_WRAP != 0 || index + 1 >= DESC_COUNT {
            0
        } else {
            self.rx_cursor + 1
        };
        self.update_irq();
        stored
    }

    /// Recomputes the interrupt level; traces only when it changes.
    pub fn update_irq(&mut self) {
        let level = self.reg(INT_SOURCE) & self.reg(INT_MASK) != 0;
        if level != self.irq {
            self.irq = level;
            let (src, mask) = (self.reg(INT_SOURCE), self.reg(INT_MASK));
            self.trace
                .update_irq
                .emit(|| format!("level={} source={src:#x} mask={mask:#x}", level as u8));
        }
    }
}
