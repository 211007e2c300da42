//! Flat physical memory with a per-page attribute map.
//!
//! Zicfiss instructions may only touch `ShadowStack` pages and every other
//! access may only touch `Normal` pages. The policy check runs before any
//! byte is transferred, so a rejected access leaves memory untouched.

use serde::Serialize;
use std::collections::BTreeMap;
use thiserror::Error;

pub const PAGE_SIZE: u64 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PageAttr {
    Normal,
    ShadowStack,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AccessKind {
    Read,
    Write,
    Swap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum MemFault {
    #[error("unmapped address {addr:#x}")]
    Unmapped { addr: u64 },
    #[error("{attr:?} page at {addr:#x} not accessible to this instruction class")]
    Policy { addr: u64, attr: PageAttr },
    #[error("misaligned shadow-stack access at {addr:#x}")]
    Misaligned { addr: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MapError {
    #[error("region {base:#x}+{len:#x} is not page aligned")]
    Unaligned { base: u64, len: u64 },
    #[error("region {base:#x}+{len:#x} overlaps an existing mapping")]
    Overlap { base: u64, len: u64 },
    #[error("empty region at {base:#x}")]
    Empty { base: u64 },
    #[error("load of {len} bytes at {addr:#x} falls outside mapped memory")]
    LoadOutside { addr: u64, len: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    pub name: String,
    pub base: u64,
    pub bytes: Vec<u8>,
}

impl Region {
    pub fn end(&self) -> u64 {
        self.base + self.bytes.len() as u64
    }

    fn contains(&self, addr: u64, len: u64) -> bool {
        addr >= self.base && addr.checked_add(len).is_some_and(|end| end <= self.end())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MemoryImage {
    regions: Vec<Region>,
    page_attrs: BTreeMap<u64, PageAttr>,
}

impl MemoryImage {
    pub fn new() -> Self {
        Self::default()
    }

    /// Maps a zero-filled, page-aligned region with the given attribute.
    pub fn map(
        &mut self,
        name: impl Into<String>,
        base: u64,
        len: u64,
        attr: PageAttr,
    ) -> Result<(), MapError> {
        if len == 0 {
            return Err(MapError::Empty { base });
        }
        if !base.is_multiple_of(PAGE_SIZE) || !len.is_multiple_of(PAGE_SIZE) {
            return Err(MapError::Unaligned { base, len });
        }
        let end = base
            .checked_add(len)
            .ok_or(MapError::Overlap { base, len })?;
        if self.regions.iter().any(|r| base < r.end() && r.base < end) {
            return Err(MapError::Overlap { base, len });
        }
        let region = Region {
            name: name.into(),
            base,
            bytes: vec![0; len as usize],
        };
        let at = self.regions.partition_point(|r| r.base < base);
        self.regions.insert(at, region);
        for page in base / PAGE_SIZE..end / PAGE_SIZE {
            self.page_attrs.insert(page, attr);
        }
        Ok(())
    }

    pub fn map_shadow_stack(&mut self, base: u64, len: u64) -> Result<(), MapError> {
        self.map("shadow-stack", base, len, PageAttr::ShadowStack)
    }

    /// Copies bytes into already-mapped memory, bypassing the access policy.
    pub fn load(&mut self, addr: u64, bytes: &[u8]) -> Result<(), MapError> {
        let region = self
            .region_mut(addr, bytes.len() as u64)
            .ok_or(MapError::LoadOutside {
                addr,
                len: bytes.len(),
            })?;
        let off = (addr - region.base) as usize;
        region.bytes[off..off + bytes.len()].copy_from_slice(bytes);
        Ok(())
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn page_attr(&self, addr: u64) -> Option<PageAttr> {
        self.page_attrs.get(&(addr / PAGE_SIZE)).copied()
    }

    fn region(&self, addr: u64, len: u64) -> Option<&Region> {
        let at = self.regions.partition_point(|r| r.base <= addr);
        let region = self.regions.get(at.checked_sub(1)?)?;
        region.contains(addr, len).then_some(region)
    }

    fn region_mut(&mut self, addr: u64, len: u64) -> Option<&mut Region> {
        let at = self.regions.partition_point(|r| r.base <= addr);
        let region = self.regions.get_mut(at.checked_sub(1)?)?;
        region.contains(addr, len).then_some(region)
    }

    /// Checks mapping, alignment and page attribute for every page the access
    /// touches. No data moves.
    pub fn check(&self, addr: u64, width: u64, is_zicfiss: bool) -> Result<(), MemFault> {
        if self.region(addr, width).is_none() {
            return Err(MemFault::Unmapped { addr });
        }
        if is_zicfiss && !addr.is_multiple_of(width) {
            return Err(MemFault::Misaligned { addr });
        }
        let wanted = if is_zicfiss {
            PageAttr::ShadowStack
        } else {
            PageAttr::Normal
        };
        let last = addr + width - 1;
        for page in addr / PAGE_SIZE..=last / PAGE_SIZE {
            let attr = self
                .page_attrs
                .get(&page)
                .copied()
                .ok_or(MemFault::Unmapped { addr })?;
            if attr != wanted {
                return Err(MemFault::Policy { addr, attr });
            }
        }
        Ok(())
    }

    /// Single entry point for data accesses. `value` is the store/swap operand.
    /// Returns the loaded value (old value for swaps, 0 for writes).
    pub fn access(
        &mut self,
        addr: u64,
        width: u64,
        kind: AccessKind,
        is_zicfiss: bool,
        value: u64,
    ) -> Result<u64, MemFault> {
        debug_assert!(matches!(width, 1 | 2 | 4 | 8));
        self.check(addr, width, is_zicfiss)?;
        let region = self.region_mut(addr, width).expect("checked above");
        let off = (addr - region.base) as usize;
        let slot = &mut region.bytes[off..off + width as usize];
        let mut buf = [0u8; 8];
        buf[..slot.len()].copy_from_slice(slot);
        let old = u64::from_le_bytes(buf);
        match kind {
            AccessKind::Read => Ok(old),
            AccessKind::Write | AccessKind::Swap => {
                slot.copy_from_slice(&value.to_le_bytes()[..width as usize]);
                Ok(if kind == AccessKind::Swap { old } else { 0 })
            }
        }
    }

    pub fn read(&mut self, addr: u64, width: u64, is_zicfiss: bool) -> Result<u64, MemFault> {
        self.access(addr, width, AccessKind::Read, is_zicfiss, 0)
    }

    pub fn write(
        &mut self,
        addr: u64,
        width: u64,
        value: u64,
        is_zicfiss: bool,
    ) -> Result<(), MemFault> {
        self.access(addr, width, AccessKind::Write, is_zicfiss, value)
            .map(|_| ())
    }

    /// Instruction fetch: returns the first 16-bit parcel and, when mapped, the
    /// following one. Shadow-stack pages are never executable.
    pub fn fetch(&self, addr: u64) -> Result<u32, MemFault> {
        let lo = self.fetch_parcel(addr)?;
        if lo & 0b11 != 0b11 {
            return Ok(u32::from(lo));
        }
        let hi = self.fetch_parcel(addr + 2)?;
        Ok(u32::from(lo) | u32::from(hi) << 16)
    }

    fn fetch_parcel(&self, addr: u64) -> Result<u16, MemFault> {
        match self.page_attr(addr) {
            Some(PageAttr::Normal) => {}
            Some(attr) => return Err(MemFault::Policy { addr, attr }),
            None => return Err(MemFault::Unmapped { addr }),
        }
        let region = self.region(addr, 2).ok_or(MemFault::Unmapped { addr })?;
        let off = (addr - region.base) as usize;
        Ok(u16::from_le_bytes([
            region.bytes[off],
            region.bytes[off + 1],
        ]))
    }

    /// Reads without policy checks (inspection and tests).
    pub fn peek(&self, addr: u64, width: u64) -> Option<u64> {
        let region = self.region(addr, width)?;
        let off = (addr - region.base) as usize;
        let mut buf = [0u8; 8];
        buf[..width as usize].copy_from_slice(&region.bytes[off..off + width as usize]);
        Some(u64::from_le_bytes(buf))
    }

    /// Writes without policy checks (attack setup and tests).
    pub fn poke(&mut self, addr: u64, width: u64, value: u64) -> Option<()> {
        let region = self.region_mut(addr, width)?;
        let off = (addr - region.base) as usize;
        region.bytes[off..off + width as usize]
            .copy_from_slice(&value.to_le_bytes()[..width as usize]);
        Some(())
    }

    /// FNV-1a over every mapped byte, in address order.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for region in &self.regions {
            for b in region.base.to_le_bytes().iter().chain(&region.bytes) {
                h ^= u64::from(*b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }
}
