//! Brute-force reference model of the descriptor rings, and a random
//! operation generator that drives both the model and the real device.

use rand::Rng;

use espemu::mac::regs::*;
use espemu::mac::OpenEth;
use espemu::trace::Tracer;

pub const MEM_SIZE: usize = 4 * 1024 * 1024;
const OWN_MAC: [u8; 6] = [0x52, 0x54, 0x00, 0x12, 0x34, 0x56];
/// Addresses that lie outside guest memory, forcing DMA errors.
const BAD_ADDR: u32 = 0xFFFF_F000;
const BUF_BASE: u32 = 0x2000;
const BUF_STRIDE: u32 = 0x100;

#[derive(Debug, Clone)]
pub enum Op {
    TxBdNum(u32),
    Moder(u32),
    Mask(u32),
    Ack(u32),
    Hash(u32, u32),
    /// Fill guest memory, then write a descriptor word pair.
    Desc {
        index: usize,
        len: u16,
        flags: u16,
        addr: u32,
        fill: Vec<u8>,
    },
    Receive(Vec<u8>),
}

/// Generates a random operation for a device whose rings span at most
/// `max_slots` descriptors each.
pub fn random_op(rng: &mut impl Rng, tx_slots: usize, max_slots: usize) -> Op {
    let flag = |rng: &mut dyn rand::RngCore, bit: u16| if rng.gen_bool(0.5) { bit } else { 0 };
    match rng.gen_range(0..100) {
        0..=1 => Op::TxBdNum(rng.gen_range(0..=max_slots as u32 + 1)),
        2..=5 => {
            let mut m = 0;
            for bit in [MODER_RXEN, MODER_TXEN, MODER_BRO, MODER_PRO, MODER_PAD] {
                if rng.gen_bool(0.7) {
                    m |= bit;
                }
            }
            Op::Moder(m)
        }
        6..=9 => Op::Mask(rng.gen_range(0..32)),
        10..=19 => Op::Ack(rng.gen_range(0..32)),
        20 => Op::Hash(rng.gen(), rng.gen()),
        21..=59 => {
            let tx = rng.gen_bool(0.5);
            let slot = rng.gen_range(0..max_slots);
            let index = if tx {
                slot.min(tx_slots.saturating_sub(1))
            } else {
                (tx_slots + slot).min(127)
            };
            let mut flags = flag(rng, BD_READY) | flag(rng, BD_IRQ);
            if rng.gen_ratio(1, 4) || slot + 1 == max_slots {
                flags |= BD_WRAP;
            }
            if tx {
                flags |= flag(rng, TXD_PAD);
            }
            let addr = if rng.gen_ratio(1, 20) {
                BAD_ADDR
            } else {
                BUF_BASE + index as u32 * BUF_STRIDE
            };
            let len = rng.gen_range(0..=BUF_STRIDE as u16);
            let fill = (0..len).map(|_| rng.gen()).collect();
            Op::Desc {
                index,
                len,
                flags,
                addr,
                fill,
            }
        }
        _ => {
            let len = rng.gen_range(0..=BUF_STRIDE as usize);
            let mut f: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
            if f.len() >= 6 {
                match rng.gen_range(0..4) {
                    0 => f[..6].copy_from_slice(&OWN_MAC),
                    1 => f[..6].fill(0xFF),
                    2 => f[0] |= 1,
                    _ => f[0] &= !1,
                }
            }
            Op::Receive(f)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snapshot {
    /// (len, flags, addr) for all 128 descriptors.
    pub descs: Vec<(u16, u16, u32)>,
    pub int_source: u32,
    pub irq: bool,
    pub tx_cursor: usize,
    pub rx_cursor: usize,
    pub sent: Vec<Vec<u8>>,
    pub buffers: Vec<u8>,
}

pub struct RefModel {
    descs: Vec<(u16, u16, u32)>,
    tx_bd_num: usize,
    moder: u32,
    int_source: u32,
    int_mask: u32,
    hash: [u32; 2],
    tx_at: usize,
    rx_at: usize,
    sent: Vec<Vec<u8>>,
    mem: Vec<u8>,
}

impl Default for RefModel {
    fn default() -> Self {
        RefModel {
            descs: vec![(0, 0, 0); 128],
            tx_bd_num: 64,
            moder: 0,
            int_source: 0,
            int_mask: 0,
            hash: [0, 0],
            tx_at: 0,
            rx_at: 0,
            sent: Vec::new(),
            mem: vec![0; MEM_SIZE],
        }
    }
}

impl RefModel {
    fn in_mem(&self, addr: u32, len: usize) -> bool {
        (addr as usize)
            .checked_add(len)
            .is_some_and(|end| end <= self.mem.len())
    }

    pub fn apply(&mut self, op: &Op) {
        match op {
            Op::TxBdNum(n) => {
                if *n >= 1 && *n <= 128 {
                    self.tx_bd_num = *n as usize;
                    self.tx_at = 0;
                    self.rx_at = 0;
                }
            }
            Op::Moder(v) => {
                let turned_on = *v & !self.moder;
                self.moder = *v;
                if turned_on & MODER_RXEN != 0 {
                    self.rx_at = 0;
                }
                if turned_on & MODER_TXEN != 0 {
                    self.tx_at = 0;
                }
                self.transmit();
            }
            Op::Mask(m) => self.int_mask = *m,
            Op::Ack(bits) => self.int_source &= !bits,
            Op::Hash(a, b) => self.hash = [*a, *b],
            Op::Desc {
                index,
                len,
                flags,
                addr,
                fill,
            } => {
                if self.in_mem(*addr, fill.len()) {
                    let a = *addr as usize;
                    self.mem[a..a + fill.len()].copy_from_slice(fill);
                }
                self.descs[*index] = (*len, *flags, *addr);
                if *index < self.tx_bd_num && flags & BD_READY != 0 {
                    self.transmit();
                }
            }
            Op::Receive(frame) => self.receive(frame),
        }
    }

    fn transmit(&mut self) {
        if self.moder & MODER_TXEN == 0 {
            return;
        }
        let mut budget = self.tx_bd_num;
        while budget > 0 {
            budget -= 1;
            let i = self.tx_at;
            let (len, flags, addr) = self.descs[i];
            if flags & BD_READY == 0 {
                break;
            }
            let mut status = 0;
            if self.in_mem(addr, len as usize) {
                let mut f = self.mem[addr as usize..addr as usize + len as usize].to_vec();
                if flags & TXD_PAD != 0 {
                    while f.len() < 60 {
                        f.push(0);
                    }
                }
                self.sent.push(f);
                if flags & BD_IRQ != 0 {
                    self.int_source |= INT_TXB;
                }
            } else {
                status = TXD_UR;
                if flags & BD_IRQ != 0 {
                    self.int_source |= INT_TXE;
                }
            }
            let kept = flags & (BD_IRQ | BD_WRAP | TXD_PAD | TXD_CRC | 0x0600);
            self.descs[i] = (len, kept | status, addr);
            let last = i + 1 == self.tx_bd_num;
            self.tx_at = if flags & BD_WRAP != 0 || last {
                0
            } else {
                i + 1
            };
        }
    }

    fn accepts(&self, dst: &[u8; 6]) -> Option<bool> {
        let hit = if *dst == OWN_MAC {
            true
        } else if dst.iter().all(|&b| b == 0xFF) {
            self.moder & MODER_BRO != 0
        } else if dst[0] & 1 == 1 {
            let bit = super::oracle_hash_bit(dst);
            self.hash[(bit / 32) as usize] >> (bit % 32) & 1 == 1
        } else {
            false
        };
        match (hit, self.moder & MODER_PRO != 0) {
            (true, _) => Some(false),
            (false, true) => Some(true),
            (false, false) => None,
        }
    }

    fn receive(&mut self, frame: &[u8]) {
        if self.moder & MODER_RXEN == 0 || frame.len() < 14 {
            return;
        }
        let dst: [u8; 6] = frame[..6].try_into().unwrap();
        let Some(promisc_only) = self.accepts(&dst) else {
            return;
        };
        let i = self.tx_bd_num + self.rx_at;
        if i >= 128 || self.descs[i].1 & BD_EMPTY == 0 {
            self.int_source |= INT_BUSY;
            return;
        }
        let (_, flags, addr) = self.descs[i];
        // ownership returns to the driver; status bits are rewritten
        let mut new_flags = flags & !BD_EMPTY & !0x01FF;
        let len = if self.in_mem(addr, frame.len()) {
            self.mem[addr as usize..addr as usize + frame.len()].copy_from_slice(frame);
            if promisc_only {
                new_flags |= RXD_M;
            }
            if flags & BD_IRQ != 0 {
                self.int_source |= INT_RXB;
            }
            frame.len() as u16
        } else {
            new_flags |= RXD_OR;
            if flags & BD_IRQ != 0 {
                self.int_source |= INT_RXE;
            }
            0
        };
        self.descs[i] = (len, new_flags, addr);
        self.rx_at = if flags & BD_WRAP != 0 || i + 1 >= 128 {
            0
        } else {
            self.rx_at + 1
        };
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            descs: self.descs.clone(),
            int_source: self.int_source,
            irq: self.int_source & self.int_mask != 0,
            tx_cursor: self.tx_at,
            rx_cursor: self.rx_at,
            sent: self.sent.clone(),
            buffers: self.mem[BUF_BASE as usize..(BUF_BASE + 128 * BUF_STRIDE) as usize].to_vec(),
        }
    }
}

pub fn fresh_device() -> OpenEth {
    let mut dev = OpenEth::new(&Tracer::disabled());
    dev.reg_write(
        MAC_ADDR0,
        u32::from_be_bytes([OWN_MAC[2], OWN_MAC[3], OWN_MAC[4], OWN_MAC[5]]),
    );
    dev.reg_write(
        MAC_ADDR1,
        u32::from(OWN_MAC[0]) << 8 | u32::from(OWN_MAC[1]),
    );
    dev
}

pub fn apply_device(dev: &mut OpenEth, op: &Op, sent: &mut Vec<Vec<u8>>) {
    match op {
        Op::TxBdNum(n) => dev.reg_write(TX_BD_NUM, *n),
        Op::Moder(v) => dev.reg_write(MODER, *v),
        Op::Mask(m) => dev.reg_write(INT_MASK, *m),
        Op::Ack(b) => dev.reg_write(INT_SOURCE, *b),
        Op::Hash(a, b) => {
            dev.reg_write(HASH0, *a);
            dev.reg_write(HASH1, *b);
        }
        Op::Desc {
            index,
            len,
            flags,
            addr,
            fill,
        } => {
            let _ = dev.memory_mut().write(*addr, fill);
            dev.desc_write(*index, u32::from(*len) << 16 | u32::from(*flags), *addr)
                .unwrap();
        }
        Op::Receive(f) => {
            dev.receive(f);
        }
    }
    sent.extend(dev.backend_mut().drain());
}

pub fn device_snapshot(dev: &OpenEth, sent: &[Vec<u8>]) -> Snapshot {
    Snapshot {
        descs: dev
            .descriptors()
            .iter()
            .map(|d| (d.len, d.flags, d.addr))
            .collect(),
        int_source: dev.peek(INT_SOURCE),
        irq: dev.irq_asserted(),
        tx_cursor: dev.tx_cursor(),
        rx_cursor: dev.rx_cursor(),
        sent: sent.to_vec(),
        buffers: dev
            .memory()
            .read(BUF_BASE, (128 * BUF_STRIDE) as usize)
            .unwrap()
            .to_vec(),
    }
}

/// Runs one seeded sequence through both implementations and returns their
/// final states.
pub fn run_seed(seed: u64, steps: usize, max_slots: usize) -> (Snapshot, Snapshot) {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut dev = fresh_device();
    let mut model = RefModel::default();
    let mut sent = Vec::new();
    let tx_slots = rng.gen_range(1..=max_slots);
    let setup = [
        Op::TxBdNum(tx_slots as u32),
        Op::Mask(INT_TXB | INT_TXE | INT_RXB | INT_RXE | INT_BUSY),
    ];
    let mut tx_now = tx_slots;
    for i in 0..setup.len() + steps {
        let op = match setup.get(i) {
            Some(op) => op.clone(),
            None => random_op(&mut rng, tx_now, max_slots),
        };
        if let Op::TxBdNum(n) = op {
            if (1..=128).contains(&n) {
                tx_now = n as usize;
            }
        }
        model.apply(&op);
        apply_device(&mut dev, &op, &mut sent);
    }
    (device_snapshot(&dev, &sent), model.snapshot())
}
