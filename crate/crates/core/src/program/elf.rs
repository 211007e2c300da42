//! Static ELF64 (little-endian, RISC-V) loading and a minimal writer.

use std::collections::BTreeMap;
use std::ops::Range;
use thiserror::Error;

use super::{LoadedProgram, Segment, SegmentFlags};

pub const EM_RISCV: u16 = 243;
const ET_EXEC: u16 = 2;
const ET_DYN: u16 = 3;
const PT_LOAD: u32 = 1;
const PT_DYNAMIC: u32 = 2;
const PT_INTERP: u32 = 3;
const PF_X: u32 = 1;
const PF_W: u32 = 2;
const PF_R: u32 = 4;
const SHT_PROGBITS: u32 = 1;
const SHT_SYMTAB: u32 = 2;
const SHT_STRTAB: u32 = 3;
const SHF_WRITE: u64 = 1;
const SHF_ALLOC: u64 = 2;
const SHF_EXECINSTR: u64 = 4;
const EHDR_SIZE: usize = 64;
const PHDR_SIZE: usize = 56;
const SHDR_SIZE: usize = 64;
const SYM_SIZE: usize = 24;
/// Largest in-memory segment accepted.
const MAX_SEGMENT: u64 = 256 << 20;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ElfError {
    #[error("not an ELF file")]
    BadMagic,
    #[error("unsupported ELF: {0}")]
    Unsupported(String),
    #[error("dynamically linked executables are not supported")]
    Dynamic,
    #[error("truncated or malformed ELF: {0}")]
    Malformed(String),
}

struct Reader<'a>(&'a [u8]);

impl Reader<'_> {
    fn bytes(&self, off: u64, len: u64, what: &str) -> Result<&[u8], ElfError> {
        let end = off
            .checked_add(len)
            .filter(|e| *e <= self.0.len() as u64)
            .ok_or_else(|| ElfError::Malformed(format!("{what} out of bounds")))?;
        Ok(&self.0[off as usize..end as usize])
    }
    fn u16(&self, off: u64) -> Result<u16, ElfError> {
        Ok(u16::from_le_bytes(
            self.bytes(off, 2, "field")?.try_into().unwrap(),
        ))
    }
    fn u32(&self, off: u64) -> Result<u32, ElfError> {
        Ok(u32::from_le_bytes(
            self.bytes(off, 4, "field")?.try_into().unwrap(),
        ))
    }
    fn u64(&self, off: u64) -> Result<u64, ElfError> {
        Ok(u64::from_le_bytes(
            self.bytes(off, 8, "field")?.try_into().unwrap(),
        ))
    }
    fn cstr(&self, off: u64) -> Result<String, ElfError> {
        let start = off as usize;
        let end = self
            .0
            .get(start..)
            .ok_or_else(|| ElfError::Malformed("string out of bounds".into()))?
            .iter()
            .position(|b| *b == 0)
            .ok_or_else(|| ElfError::Malformed("unterminated string".into()))?;
        Ok(String::from_utf8_lossy(&self.0[start..start + end]).into_owned())
    }
}

fn offset(base: u64, index: u64, stride: u64) -> Result<u64, ElfError> {
    index
        .checked_mul(stride)
        .and_then(|o| base.checked_add(o))
        .ok_or_else(|| ElfError::Malformed("offset overflows".into()))
}

fn span(start: u64, len: u64) -> Result<Range<u64>, ElfError> {
    Ok(start..offset(start, len, 1)?)
}

struct Shdr {
    kind: u32,
    flags: u64,
    addr: u64,
    offset: u64,
    size: u64,
    link: u32,
}

pub fn load_elf(bytes: &[u8]) -> Result<LoadedProgram, ElfError> {
    let r = Reader(bytes);
    if bytes.len() < EHDR_SIZE || &bytes[..4] != b"\x7fELF" {
        return Err(ElfError::BadMagic);
    }
    if bytes[4] != 2 {
        return Err(ElfError::Unsupported("not ELFCLASS64".into()));
    }
    if bytes[5] != 1 {
        return Err(ElfError::Unsupported("not little-endian".into()));
    }
    let e_type = r.u16(16)?;
    let machine = r.u16(18)?;
    if machine != EM_RISCV {
        return Err(ElfError::Unsupported(format!(
            "machine {machine} is not RISC-V"
        )));
    }
    match e_type {
        ET_EXEC => {}
        ET_DYN => return Err(ElfError::Dynamic),
        t => return Err(ElfError::Unsupported(format!("ELF type {t}"))),
    }
    let entry = r.u64(24)?;
    let phoff = r.u64(32)?;
    let shoff = r.u64(40)?;
    let phentsize = u64::from(r.u16(54)?);
    let phnum = u64::from(r.u16(56)?);
    let shentsize = u64::from(r.u16(58)?);
    let shnum = u64::from(r.u16(60)?);

    let mut segments = Vec::new();
    let mut exec_segments = Vec::new();
    for i in 0..phnum {
        let ph = offset(phoff, i, phentsize)?;
        match r.u32(ph)? {
            PT_INTERP | PT_DYNAMIC => return Err(ElfError::Dynamic),
            PT_LOAD => {}
            _ => continue,
        }
        let flags = r.u32(ph + 4)?;
        let offset = r.u64(ph + 8)?;
        let vaddr = r.u64(ph + 16)?;
        let filesz = r.u64(ph + 32)?;
        let memsz = r.u64(ph + 40)?;
        if filesz > memsz || memsz > MAX_SEGMENT {
            return Err(ElfError::Malformed(format!(
                "segment at {vaddr:#x} has filesz {filesz:#x}, memsz {memsz:#x}"
            )));
        }
        if memsz == 0 {
            continue;
        }
        let mut data = r.bytes(offset, filesz, "segment data")?.to_vec();
        data.resize(memsz as usize, 0);
        let flags = SegmentFlags {
            read: flags & PF_R != 0,
            write: flags & PF_W != 0,
            exec: flags & PF_X != 0,
        };
        let range = span(vaddr, memsz)?;
        if flags.exec {
            exec_segments.push(range);
        }
        segments.push(Segment {
            vaddr,
            bytes: data,
            flags,
        });
    }
    if segments.is_empty() {
        return Err(ElfError::Malformed("no loadable segments".into()));
    }

    let mut shdrs = Vec::new();
    if shoff != 0 {
        for i in 0..shnum {
            let sh = offset(shoff, i, shentsize)?;
            shdrs.push(Shdr {
                kind: r.u32(sh + 4)?,
                flags: r.u64(sh + 8)?,
                addr: r.u64(sh + 16)?,
                offset: r.u64(sh + 24)?,
                size: r.u64(sh + 32)?,
                link: r.u32(sh + 40)?,
            });
        }
    }
    let mut text_ranges: Vec<Range<u64>> = shdrs
        .iter()
        .filter(|s| s.kind == SHT_PROGBITS && s.flags & SHF_EXECINSTR != 0 && s.size > 0)
        .map(|s| span(s.addr, s.size))
        .collect::<Result<_, _>>()?;
    if text_ranges.is_empty() {
        text_ranges = exec_segments;
    }
    text_ranges.sort_by_key(|t| t.start);

    let mut symbols = BTreeMap::new();
    for s in shdrs.iter().filter(|s| s.kind == SHT_SYMTAB) {
        let strtab = shdrs
            .get(s.link as usize)
            .ok_or_else(|| ElfError::Malformed("symtab string table missing".into()))?;
        for k in 0..s.size / SYM_SIZE as u64 {
            let sym = offset(s.offset, k, SYM_SIZE as u64)?;
            let name_off = u64::from(r.u32(sym)?);
            let shndx = r.u16(sym + 6)?;
            let value = r.u64(sym + 8)?;
            if name_off == 0 || shndx == 0 {
                continue;
            }
            let name = r.cstr(offset(strtab.offset, name_off, 1)?)?;
            if !name.is_empty() {
                symbols.entry(name).or_insert(value);
            }
        }
    }

    let prog = LoadedProgram {
        entry,
        segments,
        symbols,
        text_ranges,
    };
    prog.validate()
        .map_err(|e| ElfError::Malformed(e.to_string()))?;
    Ok(prog)
}

fn push_str(tab: &mut Vec<u8>, s: &str) -> u32 {
    let off = tab.len() as u32;
    tab.extend_from_slice(s.as_bytes());
    tab.push(0);
    off
}

fn pad_to(buf: &mut Vec<u8>, align: usize) {
    while !buf.len().is_multiple_of(align) {
        buf.push(0);
    }
}

/// Serializes `prog` as a static ELF64 executable with one section per
/// segment and a symbol table.
pub fn write_elf(prog: &LoadedProgram) -> Vec<u8> {
    let nseg = prog.segments.len();
    let mut out = vec![0u8; EHDR_SIZE + PHDR_SIZE * nseg];
    let mut seg_offsets = Vec::new();
    for seg in &prog.segments {
        pad_to(&mut out, 16);
        seg_offsets.push(out.len() as u64);
        out.extend_from_slice(&seg.bytes);
    }

    let mut shstr = vec![0u8];
    let mut strtab = vec![0u8];
    let mut symtab = vec![0u8; SYM_SIZE];
    let seg_names: Vec<u32> = prog
        .segments
        .iter()
        .map(|s| push_str(&mut shstr, if s.flags.exec { ".text" } else { ".data" }))
        .collect();
    for (name, value) in &prog.symbols {
        let shndx = prog
            .segments
            .iter()
            .position(|s| s.range().contains(value) || s.range().end == *value)
            .map_or(0xfff1, |i| i as u16 + 1);
        let mut sym = [0u8; SYM_SIZE];
        sym[..4].copy_from_slice(&push_str(&mut strtab, name).to_le_bytes());
        sym[4] = 0x10; // STB_GLOBAL, STT_NOTYPE
        sym[6..8].copy_from_slice(&shndx.to_le_bytes());
        sym[8..16].copy_from_slice(&value.to_le_bytes());
        symtab.extend_from_slice(&sym);
    }
    let symtab_name = push_str(&mut shstr, ".symtab");
    let strtab_name = push_str(&mut shstr, ".strtab");
    let shstr_name = push_str(&mut shstr, ".shstrtab");

    pad_to(&mut out, 8);
    let symtab_off = out.len() as u64;
    out.extend_from_slice(&symtab);
    let strtab_off = out.len() as u64;
    out.extend_from_slice(&strtab);
    let shstr_off = out.len() as u64;
    out.extend_from_slice(&shstr);
    pad_to(&mut out, 8);
    let shoff = out.len() as u64;

    let mut shdr = |name: u32,
                    kind: u32,
                    flags: u64,
                    addr: u64,
                    off: u64,
                    size: u64,
                    link: u32,
                    entsize: u64| {
        let mut h = [0u8; SHDR_SIZE];
        h[..4].copy_from_slice(&name.to_le_bytes());
        h[4..8].copy_from_slice(&kind.to_le_bytes());
        h[8..16].copy_from_slice(&flags.to_le_bytes());
        h[16..24].copy_from_slice(&addr.to_le_bytes());
        h[24..32].copy_from_slice(&off.to_le_bytes());
        h[32..40].copy_from_slice(&size.to_le_bytes());
        h[40..44].copy_from_slice(&link.to_le_bytes());
        if kind == SHT_SYMTAB {
            h[44..48].copy_from_slice(&1u32.to_le_bytes());
        }
        h[48..56].copy_from_slice(&8u64.to_le_bytes());
        h[56..64].copy_from_slice(&entsize.to_le_bytes());
        out.extend_from_slice(&h);
    };
    shdr(0, 0, 0, 0, 0, 0, 0, 0);
    for (i, seg) in prog.segments.iter().enumerate() {
        let mut flags = SHF_ALLOC;
        if seg.flags.exec {
            flags |= SHF_EXECINSTR;
        }
        if seg.flags.write {
            flags |= SHF_WRITE;
        }
        shdr(
            seg_names[i],
            SHT_PROGBITS,
            flags,
            seg.vaddr,
            seg_offsets[i],
            seg.bytes.len() as u64,
            0,
            0,
        );
    }
    let strtab_idx = nseg as u32 + 2;
    shdr(
        symtab_name,
        SHT_SYMTAB,
        0,
        0,
        symtab_off,
        symtab.len() as u64,
        strtab_idx,
        SYM_SIZE as u64,
    );
    shdr(
        strtab_name,
        SHT_STRTAB,
        0,
        0,
        strtab_off,
        strtab.len() as u64,
        0,
        0,
    );
    shdr(
        shstr_name,
        SHT_STRTAB,
        0,
        0,
        shstr_off,
        shstr.len() as u64,
        0,
        0,
    );
    let shnum = nseg as u16 + 4;

    let h = &mut out[..EHDR_SIZE];
    h[..4].copy_from_slice(b"\x7fELF");
    h[4] = 2;
    h[5] = 1;
    h[6] = 1;
    h[16..18].copy_from_slice(&ET_EXEC.to_le_bytes());
    h[18..20].copy_from_slice(&EM_RISCV.to_le_bytes());
    h[20..24].copy_from_slice(&1u32.to_le_bytes());
    h[24..32].copy_from_slice(&prog.entry.to_le_bytes());
    h[32..40].copy_from_slice(&(EHDR_SIZE as u64).to_le_bytes());
    h[40..48].copy_from_slice(&shoff.to_le_bytes());
    h[52..54].copy_from_slice(&(EHDR_SIZE as u16).to_le_bytes());
    h[54..56].copy_from_slice(&(PHDR_SIZE as u16).to_le_bytes());
    h[56..58].copy_from_slice(&(nseg as u16).to_le_bytes());
    h[58..60].copy_from_slice(&(SHDR_SIZE as u16).to_le_bytes());
    h[60..62].copy_from_slice(&shnum.to_le_bytes());
    h[62..64].copy_from_slice(&(shnum - 1).to_le_bytes());

    for (i, seg) in prog.segments.iter().enumerate() {
        let p = EHDR_SIZE + i * PHDR_SIZE;
        let mut flags = 0;
        if seg.flags.read {
            flags |= PF_R;
        }
        if seg.flags.write {
            flags |= PF_W;
        }
        if seg.flags.exec {
            flags |= PF_X;
        }
        let len = seg.bytes.len() as u64;
        let ph = &mut out[p..p + PHDR_SIZE];
        ph[..4].copy_from_slice(&PT_LOAD.to_le_bytes());
        ph[4..8].copy_from_slice(&flags.to_le_bytes());
        ph[8..16].copy_from_slice(&seg_offsets[i].to_le_bytes());
        ph[16..24].copy_from_slice(&seg.vaddr.to_le_bytes());
        ph[24..32].copy_from_slice(&seg.vaddr.to_le_bytes());
        ph[32..40].copy_from_slice(&len.to_le_bytes());
        ph[40..48].copy_from_slice(&len.to_le_bytes());
        ph[48..56].copy_from_slice(&0x1000u64.to_le_bytes());
    }
    out
}
