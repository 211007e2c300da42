//! Program ingestion and static analysis.

pub mod asm;
pub mod elf;
pub mod size;

use std::collections::BTreeMap;
use std::ops::Range;
use thiserror::Error;

pub use asm::{assemble, assemble_program, AsmError, Assembly};
pub use elf::{load_elf, write_elf, ElfError};
pub use size::{analyze_size, CfiCounts, SizeReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SegmentFlags {
    pub read: bool,
    pub write: bool,
    pub exec: bool,
}

impl SegmentFlags {
    pub const RX: SegmentFlags = SegmentFlags {
        read: true,
        write: false,
        exec: true,
    };
    pub const RW: SegmentFlags = SegmentFlags {
        read: true,
        write: true,
        exec: false,
    };
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub vaddr: u64,
    /// Memory image of the segment, already zero-extended to its memory size.
    pub bytes: Vec<u8>,
    pub flags: SegmentFlags,
}

impl Segment {
    pub fn range(&self) -> Range<u64> {
        self.vaddr..self.vaddr + self.bytes.len() as u64
    }
}

/// A program ready to be placed in memory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadedProgram {
    pub entry: u64,
    pub segments: Vec<Segment>,
    pub symbols: BTreeMap<String, u64>,
    pub text_ranges: Vec<Range<u64>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProgramError {
    #[error("segments {0:#x} and {1:#x} overlap")]
    Overlap(u64, u64),
    #[error("entry point {0:#x} is not inside an executable range")]
    EntryOutsideText(u64),
}

impl LoadedProgram {
    pub fn validate(&self) -> Result<(), ProgramError> {
        let mut segs: Vec<_> = self.segments.iter().map(Segment::range).collect();
        segs.sort_by_key(|r| r.start);
        for pair in segs.windows(2) {
            if pair[0].end > pair[1].start {
                return Err(ProgramError::Overlap(pair[0].start, pair[1].start));
            }
        }
        if !self.text_ranges.iter().any(|r| r.contains(&self.entry)) {
            return Err(ProgramError::EntryOutsideText(self.entry));
        }
        Ok(())
    }

    pub fn symbol(&self, name: &str) -> Option<u64> {
        self.symbols.get(name).copied()
    }

    /// Bytes of `range` if it lies within one segment.
    pub fn bytes_at(&self, range: &Range<u64>) -> Option<&[u8]> {
        self.segments.iter().find_map(|s| {
            let r = s.range();
            (range.start >= r.start && range.end <= r.end)
                .then(|| &s.bytes[(range.start - r.start) as usize..(range.end - r.start) as usize])
        })
    }

    /// Total bytes of executable code.
    pub fn text_bytes(&self) -> u64 {
        self.text_ranges.iter().map(|r| r.end - r.start).sum()
    }
}
