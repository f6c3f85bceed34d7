//! OpenCores ethmac register map.

pub const MODER: u32 = 0x00;
pub const INT_SOURCE: u32 = 0x04;
pub const INT_MASK: u32 = 0x08;
pub const IPGT: u32 = 0x0C;
pub const IPGR1: u32 = 0x10;
pub const IPGR2: u32 = 0x14;
pub const PACKETLEN: u32 = 0x18;
pub const COLLCONF: u32 = 0x1C;
pub const TX_BD_NUM: u32 = 0x20;
pub const CTRLMODER: u32 = 0x24;
pub const MIIMODER: u32 = 0x28;
pub const MIICOMMAND: u32 = 0x2C;
pub const MIIADDRESS: u32 = 0x30;
pub const MIITX_DATA: u32 = 0x34;
pub const MIIRX_DATA: u32 = 0x38;
pub const MIISTATUS: u32 = 0x3C;
pub const MAC_ADDR0: u32 = 0x40;
pub const MAC_ADDR1: u32 = 0x44;
pub const HASH0: u32 = 0x48;
pub const HASH1: u32 = 0x4C;
pub const TXCTRL: u32 = 0x50;

pub(crate) const REG_COUNT: usize = (TXCTRL as usize / 4) + 1;

/// Start of the buffer-descriptor window; 8 bytes per descriptor.
pub const DESC_BASE: u32 = 0x400;
pub const DESC_COUNT: usize = 128;
pub const WINDOW_SIZE: u32 = DESC_BASE + DESC_COUNT as u32 * 8;

pub const MODER_RXEN: u32 = 1 << 0;
pub const MODER_TXEN: u32 = 1 << 1;
pub const MODER_NOPRE: u32 = 1 << 2;
/// Broadcast frames are accepted while set.
pub const MODER_BRO: u32 = 1 << 3;
pub const MODER_IAM: u32 = 1 << 4;
pub const MODER_PRO: u32 = 1 << 5;
pub const MODER_FULLD: u32 = 1 << 10;
pub const MODER_PAD: u32 = 1 << 13;
pub const MODER_CRCEN: u32 = 1 << 15;

pub const INT_TXB: u32 = 1 << 0;
pub const INT_TXE: u32 = 1 << 1;
pub const INT_RXB: u32 = 1 << 2;
pub const INT_RXE: u32 = 1 << 3;
pub const INT_BUSY: u32 = 1 << 4;

pub const MIICOMMAND_SCANSTAT: u32 = 1 << 0;
pub const MIICOMMAND_RSTAT: u32 = 1 << 1;
pub const MIICOMMAND_WCTRLDATA: u32 = 1 << 2;

pub const MIISTATUS_LINKFAIL: u32 = 1 << 0;

/// `MIIADDRESS` field accessors: FIAD in bits 4:0, RGAD in bits 12:8.
pub fn mii_fiad(addr: u32) -> u32 {
    addr & 0x1F
}

pub fn mii_rgad(addr: u32) -> u32 {
    (addr >> 8) & 0x1F
}

pub fn mii_address(fiad: u32, rgad: u32) -> u32 {
    (fiad & 0x1F) | (rgad & 0x1F) << 8
}

// Descriptor flag bits shared by TX and RX.
pub const BD_READY: u16 = 1 << 15;
pub const BD_EMPTY: u16 = 1 << 15;
pub const BD_IRQ: u16 = 1 << 14;
pub const BD_WRAP: u16 = 1 << 13;

pub const TXD_PAD: u16 = 1 << 12;
pub const TXD_CRC: u16 = 1 << 11;
pub const TXD_UR: u16 = 1 << 8;
pub const TXD_STATUS: u16 = 0x01FF;

/// Frame accepted only because of promiscuous mode.
pub const RXD_M: u16 = 1 << 7;
pub const RXD_OR: u16 = 1 << 6;
pub const RXD_STATUS: u16 = 0x01FF;

pub fn name(offset: u32) -> &'static str {
    match offset {
        MODER => "MODER",
        INT_SOURCE => "INT_SOURCE",
        INT_MASK => "INT_MASK",
        IPGT => "IPGT",
        IPGR1 => "IPGR1",
        IPGR2 => "IPGR2",
        PACKETLEN => "PACKETLEN",
        COLLCONF => "COLLCONF",
        TX_BD_NUM => "TX_BD_NUM",
        CTRLMODER => "CTRLMODER",
        MIIMODER => "MIIMODER",
        MIICOMMAND => "MIICOMMAND",
        MIIADDRESS => "MIIADDRESS",
        MIITX_DATA => "MIITX_DATA",
        MIIRX_DATA => "MIIRX_DATA",
        MIISTATUS => "MIISTATUS",
        MAC_ADDR0 => "MAC_ADDR0",
        MAC_ADDR1 => "MAC_ADDR1",
        HASH0 => "HASH0",
        HASH1 => "HASH1",
        TXCTRL => "TXCTRL",
        _ => "?",
    }
}
