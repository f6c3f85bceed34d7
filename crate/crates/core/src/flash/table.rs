//! ESP-IDF style partition table: 32-byte records, terminated by 0xFF.

use std::fmt;

use super::FlashError;

pub const ENTRY_LEN: usize = 32;
pub const ENTRY_MAGIC: [u8; 2] = [0xAA, 0x50];
/// Magic of the MD5 record ESP-IDF may append after the last entry. Parsing
/// stops there; the digest is not checked.
pub const MD5_MAGIC: [u8; 2] = [0xEB, 0xEB];
pub const LABEL_LEN: usize = 16;

pub const TYPE_APP: u8 = 0x00;
pub const TYPE_DATA: u8 = 0x01;

pub const SUBTYPE_FACTORY: u8 = 0x00;
pub const SUBTYPE_OTA_BASE: u8 = 0x10;
pub const SUBTYPE_TEST: u8 = 0x20;
pub const SUBTYPE_OTA_DATA: u8 = 0x00;
pub const SUBTYPE_PHY: u8 = 0x01;
pub const SUBTYPE_NVS: u8 = 0x02;
pub const SUBTYPE_COREDUMP: u8 = 0x03;
pub const SUBTYPE_FAT: u8 = 0x81;
pub const SUBTYPE_SPIFFS: u8 = 0x82;

/// Table used when none is given: NVS, PHY calibration data and one factory app.
pub const DEFAULT_TABLE: &str =
    "nvs,data,nvs,0x9000,0x6000;phy_init,data,phy,0xf000,0x1000;factory,app,factory,0x10000,1M";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionEntry {
    pub ptype: u8,
    pub subtype: u8,
    pub offset: u32,
    pub size: u32,
    /// At most 16 bytes; stored zero-padded.
    pub label: String,
    pub flags: u32,
}

impl PartitionEntry {
    pub fn new(label: &str, ptype: u8, subtype: u8, offset: u32, size: u32) -> Self {
        Self {
            ptype,
            subtype,
            offset,
            size,
            label: label.to_string(),
            flags: 0,
        }
    }

    pub fn end(&self) -> u64 {
        u64::from(self.offset) + u64::from(self.size)
    }

    pub fn is_app(&self) -> bool {
        self.ptype == TYPE_APP
    }

    pub fn encode(&self) -> Result<[u8; ENTRY_LEN], FlashError> {
        if self.label.len() > LABEL_LEN || self.label.as_bytes().contains(&0) {
            return Err(FlashError::Label(self.label.clone()));
        }
        let mut out = [0u8; ENTRY_LEN];
        out[0..2].copy_from_slice(&ENTRY_MAGIC);
        out[2] = self.ptype;
        out[3] = self.subtype;
        out[4..8].copy_from_slice(&self.offset.to_le_bytes());
        out[8..12].copy_from_slice(&self.size.to_le_bytes());
        out[12..12 + self.label.len()].copy_from_slice(self.label.as_bytes());
        out[28..32].copy_from_slice(&self.flags.to_le_bytes());
        Ok(out)
    }

    fn decode(index: usize, raw: &[u8]) -> Result<Self, FlashError> {
        if raw[0..2] != ENTRY_MAGIC {
            return Err(FlashError::EntryMagic {
                index,
                found: [raw[0], raw[1]],
            });
        }
        let word = |i: usize| u32::from_le_bytes([raw[i], raw[i + 1], raw[i + 2], raw[i + 3]]);
        let label_raw = &raw[12..28];
        let n = label_raw.iter().position(|&b| b == 0).unwrap_or(LABEL_LEN);
        // padding must be zero so that re-encoding reproduces the record
        if label_raw[n..].iter().any(|&b| b != 0) {
            return Err(FlashError::EntryLabel { index });
        }
        let label =
            std::str::from_utf8(&label_raw[..n]).map_err(|_| FlashError::EntryLabel { index })?;
        Ok(Self {
            ptype: raw[2],
            subtype: raw[3],
            offset: word(4),
            size: word(8),
            label: label.to_string(),
            flags: word(28),
        })
    }
}

fn type_name(t: u8) -> String {
    match t {
        TYPE_APP => "app".into(),
        TYPE_DATA => "data".into(),
        t => format!("{t:#04x}"),
    }
}

fn subtype_name(t: u8, s: u8) -> String {
    match (t, s) {
        (TYPE_APP, SUBTYPE_FACTORY) => "factory".into(),
        (TYPE_APP, SUBTYPE_TEST) => "test".into(),
        (TYPE_APP, s) if (SUBTYPE_OTA_BASE..SUBTYPE_OTA_BASE + 16).contains(&s) => {
            format!("ota_{}", s - SUBTYPE_OTA_BASE)
        }
        (TYPE_DATA, SUBTYPE_OTA_DATA) => "ota".into(),
        (TYPE_DATA, SUBTYPE_PHY) => "phy".into(),
        (TYPE_DATA, SUBTYPE_NVS) => "nvs".into(),
        (TYPE_DATA, SUBTYPE_COREDUMP) => "coredump".into(),
        (TYPE_DATA, SUBTYPE_FAT) => "fat".into(),
        (TYPE_DATA, SUBTYPE_SPIFFS) => "spiffs".into(),
        (_, s) => format!("{s:#04x}"),
    }
}

impl fmt::Display for PartitionEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<16} type={:<5} subtype={:<8} offset={:#08x} size={:#08x} flags={:#x}",
            self.label,
            type_name(self.ptype),
            subtype_name(self.ptype, self.subtype),
            self.offset,
            self.size,
            self.flags
        )
    }
}

/// Entries up to the terminator (or MD5 record). `raw` must be a whole
/// number of records.
pub fn parse_partition_table(raw: &[u8]) -> Result<Vec<PartitionEntry>, FlashError> {
    if !raw.len().is_multiple_of(ENTRY_LEN) {
        return Err(FlashError::TableLength(raw.len()));
    }
    let mut entries = Vec::new();
    for (index, rec) in raw.chunks_exact(ENTRY_LEN).enumerate() {
        if rec.iter().all(|&b| b == 0xFF) || rec[0..2] == MD5_MAGIC {
            return Ok(entries);
        }
        entries.push(PartitionEntry::decode(index, rec)?);
    }
    Ok(entries)
}

/// Records followed by one all-0xFF terminator.
pub fn serialize_partition_table(entries: &[PartitionEntry]) -> Result<Vec<u8>, FlashError> {
    let mut out = Vec::with_capacity((entries.len() + 1) * ENTRY_LEN);
    for e in entries {
        out.extend_from_slice(&e.encode()?);
    }
    out.extend_from_slice(&[0xFF; ENTRY_LEN]);
    Ok(out)
}

/// Rejects overlapping partitions and partitions running past `flash_size`.
pub fn check_entries(entries: &[PartitionEntry], flash_size: u32) -> Result<(), FlashError> {
    let mut sorted: Vec<&PartitionEntry> = entries.iter().collect();
    sorted.sort_by_key(|e| e.offset);
    for e in &sorted {
        if e.end() > u64::from(flash_size) {
            return Err(FlashError::PartitionBeyondFlash {
                label: e.label.clone(),
                end: e.end(),
                flash_size,
            });
        }
    }
    for w in sorted.windows(2) {
        if w[0].end() > u64::from(w[1].offset) {
            return Err(FlashError::PartitionOverlap {
                first: w[0].label.clone(),
                second: w[1].label.clone(),
            });
        }
    }
    Ok(())
}

/// Parses a number as hex (`0x`), or decimal with an optional `K`/`M` suffix.
pub fn parse_size(text: &str) -> Option<u32> {
    let t = text.trim();
    if let Some(hex) = t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
        return u32::from_str_radix(hex, 16).ok();
    }
    let (digits, mult) = match t.chars().last()? {
        'k' | 'K' => (&t[..t.len() - 1], 1024),
        'm' | 'M' => (&t[..t.len() - 1], 1024 * 1024),
        _ => (t, 1),
    };
    digits.parse::<u32>().ok()?.checked_mul(mult)
}

fn parse_type(text: &str) -> Option<u8> {
    match text {
        "app" => Some(TYPE_APP),
        "data" => Some(TYPE_DATA),
        t => parse_size(t).and_then(|v| u8::try_from(v).ok()),
    }
}

fn parse_subtype(ptype: u8, text: &str) -> Option<u8> {
    let named = match (ptype, text) {
        (TYPE_APP, "factory") => Some(SUBTYPE_FACTORY),
        (TYPE_APP, "test") => Some(SUBTYPE_TEST),
        (TYPE_APP, t) if t.starts_with("ota_") => t[4..]
            .parse::<u8>()
            .ok()
            .filter(|&n| n < 16)
            .map(|n| SUBTYPE_OTA_BASE + n),
        (TYPE_DATA, "ota") => Some(SUBTYPE_OTA_DATA),
        (TYPE_DATA, "phy") => Some(SUBTYPE_PHY),
        (TYPE_DATA, "nvs") => Some(SUBTYPE_NVS),
        (TYPE_DATA, "coredump") => Some(SUBTYPE_COREDUMP),
        (TYPE_DATA, "fat") => Some(SUBTYPE_FAT),
        (TYPE_DATA, "spiffs") => Some(SUBTYPE_SPIFFS),
        _ => None,
    };
    named.or_else(|| parse_size(text).and_then(|v| u8::try_from(v).ok()))
}

/// Table from `label,type,subtype,offset,size` records separated by `;`, or
/// the word `default`.
pub fn generate_table(spec: &str) -> Result<Vec<PartitionEntry>, FlashError> {
    let spec = if spec.trim() == "default" {
        DEFAULT_TABLE
    } else {
        spec
    };
    let mut entries = Vec::new();
    for rec in spec.split(';').map(str::trim).filter(|r| !r.is_empty()) {
        let bad = |why: &str| FlashError::TableSpec {
            record: rec.to_string(),
            reason: why.to_string(),
        };
        let fields: Vec<&str> = rec.split(',').map(str::trim).collect();
        let [label, t, s, offset, size] = fields[..] else {
            return Err(bad("expected 5 comma-separated fields"));
        };
        if label.is_empty() || label.len() > LABEL_LEN {
            return Err(bad("label must be 1 to 16 bytes"));
        }
        let ptype = parse_type(t).ok_or_else(|| bad("unknown type"))?;
        let subtype = parse_subtype(ptype, s).ok_or_else(|| bad("unknown subtype"))?;
        let offset = parse_size(offset).ok_or_else(|| bad("bad offset"))?;
        let size = parse_size(size)
            .filter(|&s| s > 0)
            .ok_or_else(|| bad("bad size"))?;
        entries.push(PartitionEntry::new(label, ptype, subtype, offset, size));
    }
    Ok(entries)
}
