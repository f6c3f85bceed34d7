//! Merged flash images: bootloader, partition table and application placed
//! at fixed offsets, with erased (0xFF) flash everywhere else.

mod app;
mod table;

use std::fmt;

use thiserror::Error;

pub use app::{AppImage, Segment, DROM_BASE, HEADER_LEN, IMAGE_MAGIC};
pub use table::{
    check_entries, generate_table, parse_partition_table, parse_size, serialize_partition_table,
    PartitionEntry, DEFAULT_TABLE, ENTRY_LEN, ENTRY_MAGIC, LABEL_LEN, MD5_MAGIC, SUBTYPE_FACTORY,
    SUBTYPE_NVS, SUBTYPE_PHY, TYPE_APP, TYPE_DATA,
};

use crate::guest::GuestConfig;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FlashError {
    #[error("invalid layout: {0}")]
    Layout(String),
    #[error("{segment} is {len} bytes but only {room} fit at {offset:#x}")]
    Oversize {
        segment: &'static str,
        offset: u32,
        len: usize,
        room: usize,
    },
    #[error("{segment} does not start with image magic 0xe9 (found {})", found.map(|b| format!("{b:#04x}")).unwrap_or_else(|| "nothing".into()))]
    MissingMagic {
        segment: &'static str,
        found: Option<u8>,
    },
    #[error("app image: {0}")]
    AppImage(&'static str),
    #[error("partition table length {0} is not a multiple of 32")]
    TableLength(usize),
    #[error("partition table entry {index}: bad magic {:02x}{:02x}", found[0], found[1])]
    EntryMagic { index: usize, found: [u8; 2] },
    #[error("partition table entry {index}: label is not zero-padded UTF-8")]
    EntryLabel { index: usize },
    #[error("partition label `{0}` is longer than 16 bytes or contains NUL")]
    Label(String),
    #[error("partitions `{first}` and `{second}` overlap")]
    PartitionOverlap { first: String, second: String },
    #[error("partition `{label}` ends at {end:#x}, beyond flash size {flash_size:#x}")]
    PartitionBeyondFlash {
        label: String,
        end: u64,
        flash_size: u32,
    },
    #[error("table has no app partition at {0:#x}")]
    NoAppPartition(u32),
    #[error("app partition `{label}` ({size:#x} bytes) is smaller than the {len}-byte app")]
    AppPartitionTooSmall {
        label: String,
        size: u32,
        len: usize,
    },
    #[error("no table found at {0:#x}")]
    NoTable(u32),
    #[error("image is {len} bytes, expected flash size {flash_size}")]
    ImageSize { len: usize, flash_size: u32 },
    #[error("table spec record `{record}`: {reason}")]
    TableSpec { record: String, reason: String },
    #[error("app configuration: {0}")]
    AppConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlashLayout {
    pub bootloader_offset: u32,
    pub table_offset: u32,
    pub app_offset: u32,
    pub flash_size: u32,
}

impl Default for FlashLayout {
    fn default() -> Self {
        Self {
            bootloader_offset: 0x1000,
            table_offset: 0x8000,
            app_offset: 0x10000,
            flash_size: 4 << 20,
        }
    }
}

impl FlashLayout {
    /// `boot,table,app,size` with each field as accepted by [`parse_size`].
    pub fn parse(text: &str) -> Result<Self, FlashError> {
        let fields: Vec<&str> = text.split(',').collect();
        let [a, b, c, d] = fields[..] else {
            return Err(FlashError::Layout(format!(
                "expected 4 comma-separated values, got `{text}`"
            )));
        };
        let num =
            |s: &str| parse_size(s).ok_or_else(|| FlashError::Layout(format!("bad number `{s}`")));
        let layout = Self {
            bootloader_offset: num(a)?,
            table_offset: num(b)?,
            app_offset: num(c)?,
            flash_size: num(d)?,
        };
        layout.validate()?;
        Ok(layout)
    }

    pub fn validate(&self) -> Result<(), FlashError> {
        if !(self.bootloader_offset < self.table_offset && self.table_offset < self.app_offset) {
            return Err(FlashError::Layout(
                "offsets must be strictly increasing".into(),
            ));
        }
        if self.app_offset >= self.flash_size {
            return Err(FlashError::Layout(
                "app offset lies beyond flash size".into(),
            ));
        }
        Ok(())
    }

    fn room(&self, segment: &'static str) -> (u32, usize) {
        match segment {
            "bootloader" => (
                self.bootloader_offset,
                (self.table_offset - self.bootloader_offset) as usize,
            ),
            "partition table" => (
                self.table_offset,
                (self.app_offset - self.table_offset) as usize,
            ),
            _ => (
                self.app_offset,
                (self.flash_size - self.app_offset) as usize,
            ),
        }
    }
}

impl fmt::Display for FlashLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:#x},{:#x},{:#x},{:#x}",
            self.bootloader_offset, self.table_offset, self.app_offset, self.flash_size
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlashImage {
    pub bytes: Vec<u8>,
    pub layout: FlashLayout,
    pub entries: Vec<PartitionEntry>,
}

fn fits(layout: &FlashLayout, segment: &'static str, len: usize) -> Result<u32, FlashError> {
    let (offset, room) = layout.room(segment);
    if len > room {
        return Err(FlashError::Oversize {
            segment,
            offset,
            len,
            room,
        });
    }
    Ok(offset)
}

pub fn merge(
    bootloader: &[u8],
    table: &[PartitionEntry],
    app: &[u8],
    layout: FlashLayout,
) -> Result<FlashImage, FlashError> {
    layout.validate()?;
    if app.first() != Some(&IMAGE_MAGIC) {
        return Err(FlashError::MissingMagic {
            segment: "app",
            found: app.first().copied(),
        });
    }
    check_entries(table, layout.flash_size)?;
    let part = table
        .iter()
        .find(|e| e.is_app() && e.offset == layout.app_offset)
        .ok_or(FlashError::NoAppPartition(layout.app_offset))?;
    if (part.size as usize) < app.len() {
        return Err(FlashError::AppPartitionTooSmall {
            label: part.label.clone(),
            size: part.size,
            len: app.len(),
        });
    }
    let raw_table = serialize_partition_table(table)?;
    let mut bytes = vec![0xFF; layout.flash_size as usize];
    for (segment, data) in [
        ("bootloader", bootloader),
        ("partition table", &raw_table[..]),
        ("app", app),
    ] {
        let at = fits(&layout, segment, data.len())? as usize;
        bytes[at..at + data.len()].copy_from_slice(data);
    }
    Ok(FlashImage {
        bytes,
        layout,
        entries: table.to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentReport {
    pub name: &'static str,
    pub offset: u32,
    pub len: usize,
    pub crc32: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InspectReport {
    pub layout: FlashLayout,
    pub entries: Vec<PartitionEntry>,
    pub segments: Vec<SegmentReport>,
}

impl fmt::Display for InspectReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "layout {}", self.layout)?;
        for s in &self.segments {
            writeln!(
                f,
                "segment {:<16} offset={:#08x} len={:<8} crc32={:08x}",
                s.name, s.offset, s.len, s.crc32
            )?;
        }
        writeln!(f, "partitions {}", self.entries.len())?;
        for (i, e) in self.entries.iter().enumerate() {
            writeln!(f, "  [{i}] {e}")?;
        }
        Ok(())
    }
}

/// Extent of an image-format blob, or of the data before trailing erased bytes.
fn extent(region: &[u8]) -> usize {
    match AppImage::decode(region) {
        Ok((_, len)) => len,
        Err(_) => region.iter().rposition(|&b| b != 0xFF).map_or(0, |p| p + 1),
    }
}

pub fn inspect(image: &[u8], layout: FlashLayout) -> Result<InspectReport, FlashError> {
    layout.validate()?;
    if image.len() != layout.flash_size as usize {
        return Err(FlashError::ImageSize {
            len: image.len(),
            flash_size: layout.flash_size,
        });
    }
    let region = |segment| {
        let (offset, room) = layout.room(segment);
        (offset, &image[offset as usize..offset as usize + room])
    };
    let (table_at, table_raw) = region("partition table");
    // the whole table region is a record array; it may hold up to region/32 records
    let usable = table_raw.len() - table_raw.len() % ENTRY_LEN;
    let entries = parse_partition_table(&table_raw[..usable])?;
    if entries.is_empty() {
        return Err(FlashError::NoTable(table_at));
    }
    let (boot_at, boot_raw) = region("bootloader");
    let (app_at, app_raw) = region("app");
    let (_, app_len) = AppImage::decode(app_raw)?;
    let table_len = (entries.len() + 1) * ENTRY_LEN;
    let boot_len = extent(boot_raw);
    let seg = |name, offset: u32, data: &[u8]| SegmentReport {
        name,
        offset,
        len: data.len(),
        crc32: crc32fast::hash(data),
    };
    Ok(InspectReport {
        layout,
        segments: vec![
            seg("bootloader", boot_at, &boot_raw[..boot_len]),
            seg("partition-table", table_at, &table_raw[..table_len]),
            seg("app", app_at, &app_raw[..app_len]),
        ],
        entries,
    })
}

/// What the harness needs from a valid image to start the guest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BootInfo {
    pub report: InspectReport,
    pub guest: GuestConfig,
}

/// Validates an image and extracts the guest configuration from its app.
pub fn boot_info(image: &[u8], layout: FlashLayout) -> Result<BootInfo, FlashError> {
    let report = inspect(image, layout)?;
    let app_at = layout.app_offset as usize;
    let (app, _) = AppImage::decode(&image[app_at..])?;
    let payload = &app.segments[0].data;
    let text = std::str::from_utf8(payload)
        .map_err(|_| FlashError::AppConfig("payload is not UTF-8".into()))?;
    let guest = GuestConfig::parse(text).map_err(FlashError::AppConfig)?;
    Ok(BootInfo { report, guest })
}

const BOOTLOADER_STUB: &[u8] = b"espemu second-stage bootloader\n";

/// A minimal bootloader image (image format, no executable content).
pub fn bootloader_image() -> Vec<u8> {
    AppImage::with_payload(BOOTLOADER_STUB).encode()
}

/// App image carrying a guest configuration.
pub fn app_image(guest: &GuestConfig) -> Vec<u8> {
    AppImage::with_payload(guest.to_text().as_bytes()).encode()
}

/// Complete bootable image with the default layout and table.
pub fn sample_image(guest: &GuestConfig) -> Vec<u8> {
    let table = generate_table("default").expect("default table spec is valid");
    merge(
        &bootloader_image(),
        &table,
        &app_image(guest),
        FlashLayout::default(),
    )
    .expect("default layout holds the sample segments")
    .bytes
}
