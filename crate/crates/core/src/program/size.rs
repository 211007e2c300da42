//! Static code-size analysis by linear-sweep decode of the text ranges.

use serde::Serialize;

use super::LoadedProgram;
use crate::isa::decode::{decode, instruction_len, CfiEnables};
use crate::isa::op::CfiTag;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CfiCounts {
    pub lpad: u64,
    pub sspush: u64,
    pub sspopchk: u64,
    pub ssrdp: u64,
    pub ssamoswap: u64,
}

impl CfiCounts {
    pub fn total(&self) -> u64 {
        self.lpad + self.sspush + self.sspopchk + self.ssrdp + self.ssamoswap
    }

    fn bump(&mut self, tag: CfiTag) {
        match tag {
            CfiTag::Lpad => self.lpad += 1,
            CfiTag::SsPush => self.sspush += 1,
            CfiTag::SsPopChk => self.sspopchk += 1,
            CfiTag::SsRdp => self.ssrdp += 1,
            CfiTag::SsAmoSwapW | CfiTag::SsAmoSwapD => self.ssamoswap += 1,
            CfiTag::None => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SizeReport {
    pub report: &'static str,
    pub program: String,
    pub total_text_bytes: u64,
    pub cfi_bytes: u64,
    pub counts: CfiCounts,
    /// Parcels that did not decode and were stepped over.
    pub skipped_words: u64,
    /// Text growth over the paired baseline, in percent.
    pub overhead_pct: Option<f64>,
    pub delta_bytes: Option<i64>,
}

/// Column order of [`SizeReport::csv_row`].
pub const SIZE_CSV_HEADER: [&str; 11] = [
    "program",
    "total_text_bytes",
    "cfi_bytes",
    "counts.lpad",
    "counts.sspush",
    "counts.sspopchk",
    "counts.ssrdp",
    "counts.ssamoswap",
    "skipped_words",
    "overhead_pct",
    "delta_bytes",
];

impl SizeReport {
    pub fn csv_row(&self) -> Vec<String> {
        let opt = |v: Option<String>| v.unwrap_or_default();
        vec![
            self.program.clone(),
            self.total_text_bytes.to_string(),
            self.cfi_bytes.to_string(),
            self.counts.lpad.to_string(),
            self.counts.sspush.to_string(),
            self.counts.sspopchk.to_string(),
            self.counts.ssrdp.to_string(),
            self.counts.ssamoswap.to_string(),
            self.skipped_words.to_string(),
            opt(self.overhead_pct.map(|p| format!("{p:.6}"))),
            opt(self.delta_bytes.map(|d| d.to_string())),
        ]
    }
}

struct Sweep {
    text: u64,
    cfi_bytes: u64,
    counts: CfiCounts,
    skipped: u64,
}

fn sweep(prog: &LoadedProgram) -> Sweep {
    let mut s = Sweep {
        text: 0,
        cfi_bytes: 0,
        counts: CfiCounts::default(),
        skipped: 0,
    };
    for range in &prog.text_ranges {
        let Some(bytes) = prog.bytes_at(range) else {
            continue;
        };
        s.text += bytes.len() as u64;
        let mut i = 0usize;
        while i + 2 <= bytes.len() {
            let lo = u16::from_le_bytes([bytes[i], bytes[i + 1]]);
            let len = instruction_len(lo) as usize;
            if i + len > bytes.len() {
                s.skipped += 1;
                break;
            }
            let raw = if len == 2 {
                u32::from(lo)
            } else {
                u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap())
            };
            match decode(raw, CfiEnables::ALL) {
                Ok(op) => {
                    if op.cfi_tag.is_cfi() {
                        s.cfi_bytes += u64::from(op.size_bytes);
                        s.counts.bump(op.cfi_tag);
                    }
                }
                Err(_) => s.skipped += 1,
            }
            i += len;
        }
    }
    s
}

/// Counts CFI instructions in `prog` and, given a baseline, the text growth.
pub fn analyze_size(
    name: &str,
    prog: &LoadedProgram,
    baseline: Option<&LoadedProgram>,
) -> SizeReport {
    let s = sweep(prog);
    let (overhead_pct, delta_bytes) = match baseline {
        Some(b) => {
            let base = b.text_bytes();
            let delta = s.text as i64 - base as i64;
            let pct = if base == 0 {
                0.0
            } else {
                delta as f64 / base as f64 * 100.0
            };
            (Some(pct), Some(delta))
        }
        None => (None, None),
    };
    SizeReport {
        report: "size",
        program: name.to_string(),
        total_text_bytes: s.text,
        cfi_bytes: s.cfi_bytes,
        counts: s.counts,
        skipped_words: s.skipped,
        overhead_pct,
        delta_bytes,
    }
}
