use super::DeviceError;

pub const DEFAULT_MEMORY_SIZE: usize = 4 * 1024 * 1024;

/// Flat guest RAM used as the DMA target of descriptor buffers.
#[derive(Clone)]
pub struct GuestMemory {
    bytes: Vec<u8>,
}

impl std::fmt::Debug for GuestMemory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "GuestMemory({} bytes)", self.bytes.len())
    }
}

impl Default for GuestMemory {
    fn default() -> Self {
        Self::new(DEFAULT_MEMORY_SIZE)
    }
}

impl GuestMemory {
    pub fn new(size: usize) -> Self {
        Self {
            bytes: vec![0; size],
        }
    }

    pub fn size(&self) -> usize {
        self.bytes.len()
    }

    fn range(&self, addr: u32, len: usize) -> Result<std::ops::Range<usize>, DeviceError> {
        let start = addr as usize;
        match start.checked_add(len) {
            Some(end) if end <= self.bytes.len() => Ok(start..end),
            _ => Err(DeviceError::OutOfRange { addr, len }),
        }
    }

    pub fn read(&self, addr: u32, len: usize) -> Result<&[u8], DeviceError> {
        let r = self.range(addr, len)?;
        Ok(&self.bytes[r])
    }

    pub fn write(&mut self, addr: u32, data: &[u8]) -> Result<(), DeviceError> {
        let r = self.range(addr, data.len())?;
        self.bytes[r].copy_from_slice(data);
        Ok(())
    }
}
