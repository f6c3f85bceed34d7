//! ESP32 application image container (magic 0xE9).
//!
//! Layout: 8-byte common header, 16-byte extended header, then segments of
//! `load_addr u32, len u32, data`. After the last segment the image is padded
//! so that a one-byte checksum (0xEF XOR every segment byte) ends on a
//! 16-byte boundary, optionally followed by a 32-byte SHA-256 digest.

use super::FlashError;

pub const IMAGE_MAGIC: u8 = 0xE9;
pub const HEADER_LEN: usize = 24;
const CHECKSUM_SEED: u8 = 0xEF;
const DIGEST_LEN: usize = 32;
const MAX_SEGMENTS: u8 = 16;
/// Load address for configuration segments (ESP32 DROM window).
pub const DROM_BASE: u32 = 0x3F40_0020;
pub const CHIP_ID_ESP32: u16 = 0x0000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub load_addr: u32,
    pub data: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AppImage {
    pub entry_addr: u32,
    pub segments: Vec<Segment>,
}

impl AppImage {
    /// Single-segment image carrying `payload`.
    pub fn with_payload(payload: &[u8]) -> Self {
        Self {
            entry_addr: DROM_BASE,
            segments: vec![Segment {
                load_addr: DROM_BASE,
                data: payload.to_vec(),
            }],
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = vec![0u8; HEADER_LEN];
        out[0] = IMAGE_MAGIC;
        out[1] = self.segments.len() as u8;
        out[2] = 0x02; // DIO
        out[3] = 0x20; // 4 MB, 40 MHz
        out[4..8].copy_from_slice(&self.entry_addr.to_le_bytes());
        out[8] = 0xEE; // WP pin unused
        out[12..14].copy_from_slice(&CHIP_ID_ESP32.to_le_bytes());
        let mut sum = CHECKSUM_SEED;
        for seg in &self.segments {
            out.extend_from_slice(&seg.load_addr.to_le_bytes());
            out.extend_from_slice(&(seg.data.len() as u32).to_le_bytes());
            out.extend_from_slice(&seg.data);
            sum = seg.data.iter().fold(sum, |s, &b| s ^ b);
        }
        while out.len() % 16 != 15 {
            out.push(0);
        }
        out.push(sum);
        out
    }

    /// Decodes and checksum-verifies an image at the start of `raw`, which
    /// may carry trailing bytes. Returns the image and its encoded length.
    pub fn decode(raw: &[u8]) -> Result<(Self, usize), FlashError> {
        let bad = |why: &'static str| FlashError::AppImage(why);
        if raw.first() != Some(&IMAGE_MAGIC) {
            return Err(FlashError::MissingMagic {
                segment: "app",
                found: raw.first().copied(),
            });
        }
        if raw.len() < HEADER_LEN {
            return Err(bad("truncated header"));
        }
        let count = raw[1];
        if count == 0 || count > MAX_SEGMENTS {
            return Err(bad("segment count out of range"));
        }
        let word = |i: usize| u32::from_le_bytes([raw[i], raw[i + 1], raw[i + 2], raw[i + 3]]);
        let entry_addr = word(4);
        let hash_appended = raw[23] == 1;
        let mut pos = HEADER_LEN;
        let mut segments = Vec::new();
        let mut sum = CHECKSUM_SEED;
        for _ in 0..count {
            if raw.len() < pos + 8 {
                return Err(bad("truncated segment header"));
            }
            let (load_addr, len) = (word(pos), word(pos + 4) as usize);
            pos += 8;
            let data = raw
                .get(pos..pos + len)
                .ok_or(bad("truncated segment data"))?;
            sum = data.iter().fold(sum, |s, &b| s ^ b);
            segments.push(Segment {
                load_addr,
                data: data.to_vec(),
            });
            pos += len;
        }
        let checksum_at = pos + (15 - pos % 16);
        let stored = *raw.get(checksum_at).ok_or(bad("truncated checksum"))?;
        if stored != sum {
            return Err(bad("checksum mismatch"));
        }
        let mut len = checksum_at + 1;
        if hash_appended {
            len += DIGEST_LEN;
            if raw.len() < len {
                return Err(bad("truncated digest"));
            }
        }
        Ok((
            Self {
                entry_addr,
                segments,
            },
            len,
        ))
    }
}
