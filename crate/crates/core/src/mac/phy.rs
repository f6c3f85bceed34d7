//! MII PHY model: always negotiates instantly unless link is forced down.

pub const BMCR: u32 = 0;
pub const BMSR: u32 = 1;
pub const PHYID1: u32 = 2;
pub const PHYID2: u32 = 3;
pub const ANAR: u32 = 4;
pub const ANLPAR: u32 = 5;

pub const BMCR_RESET: u16 = 1 << 15;
pub const BMCR_ANENABLE: u16 = 1 << 12;
pub const BMCR_ANRESTART: u16 = 1 << 9;
pub const BMCR_FULLDPLX: u16 = 1 << 8;
pub const BMCR_SPEED100: u16 = 1 << 13;

pub const BMSR_LSTATUS: u16 = 1 << 2;
pub const BMSR_ANEGCOMPLETE: u16 = 1 << 5;
const BMSR_CAPS: u16 = 0x7809;

pub const PHY_ID1_VALUE: u16 = 0x2000;
pub const PHY_ID2_VALUE: u16 = 0x5C90;

/// PHY address answering on the management bus.
pub const PHY_ADDRESS: u32 = 1;

#[derive(Debug, Clone)]
pub struct Phy {
    regs: [u16; 32],
    link_up: bool,
}

impl Default for Phy {
    fn default() -> Self {
        let mut p = Phy {
            regs: [0; 32],
            link_up: true,
        };
        p.reset();
        p
    }
}

impl Phy {
    pub fn reset(&mut self) {
        self.regs = [0; 32];
        self.regs[BMCR as usize] = BMCR_SPEED100 | BMCR_ANENABLE | BMCR_FULLDPLX;
        self.regs[ANAR as usize] = 0x01E1;
    }

    pub fn link_up(&self) -> bool {
        self.link_up
    }

    /// Fault injection: forces the link state reported through BMSR and MIISTATUS.
    pub fn set_link(&mut self, up: bool) {
        self.link_up = up;
    }

    pub fn read(&self, reg: u32) -> u16 {
        match reg & 0x1F {
            BMSR => {
                if self.link_up {
                    BMSR_CAPS | BMSR_LSTATUS | BMSR_ANEGCOMPLETE
                } else {
                    BMSR_CAPS
                }
            }
            PHYID1 => PHY_ID1_VALUE,
            PHYID2 => PHY_ID2_VALUE,
            ANLPAR => {
                if self.link_up {
                    0x45E1
                } else {
                    0
                }
            }
            r => self.regs[r as usize],
        }
    }

    pub fn write(&mut self, reg: u32, value: u16) {
        match reg & 0x1F {
            BMCR => {
                if value & BMCR_RESET != 0 {
                    self.reset();
                } else {
                    self.regs[BMCR as usize] = value & !BMCR_ANRESTART;
                }
            }
            BMSR | PHYID1 | PHYID2 | ANLPAR => {}
            r => self.regs[r as usize] = value,
        }
    }
}
