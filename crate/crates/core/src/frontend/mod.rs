//! Assembler, linker, image container and disassembler.

mod disasm;
mod image;
mod lexer;
mod linker;
mod parser;

pub use disasm::disassemble;
pub use image::{FormatError, JournalEntry, MemoryImage, RegionPayload};
pub use lexer::{tokenize, LexError, RelocKind, SpannedToken, Token};
pub use linker::{link, LinkError, LinkOptions};
pub use parser::{assemble, parse, AsmError, ObjectFile, Relocation, Section, SymbolDef};

use serde::{Deserialize, Serialize};
use std::fmt;

/// The four physical regions of a DPU.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RegionKind {
    Atomic,
    Iram,
    Wram,
    Mram,
}

impl RegionKind {
    pub fn code(self) -> u8 {
        match self {
            RegionKind::Atomic => 0,
            RegionKind::Iram => 1,
            RegionKind::Wram => 2,
            RegionKind::Mram => 3,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => RegionKind::Atomic,
            1 => RegionKind::Iram,
            2 => RegionKind::Wram,
            3 => RegionKind::Mram,
            _ => return None,
        })
    }

    /// Region named by a section, e.g. `text`, `wram.buf`, `mram`.
    pub fn from_section_name(name: &str) -> Option<Self> {
        let head = name.split('.').next().unwrap_or("");
        Some(match head {
            "text" | "iram" => RegionKind::Iram,
            "wram" | "data" => RegionKind::Wram,
            "mram" => RegionKind::Mram,
            "atomic" => RegionKind::Atomic,
            _ => return None,
        })
    }
}

impl fmt::Display for RegionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RegionKind::Atomic => "atomic",
            RegionKind::Iram => "iram",
            RegionKind::Wram => "wram",
            RegionKind::Mram => "mram",
        })
    }
}

/// Flat physical address map of one DPU.
///
/// ```text
/// 0x0000_0000  ATOMIC   32 B of lock bits
/// 0x0001_0000  WRAM     [data][heap][stack 0][stack 1]...
/// 0x0800_0000  MRAM     [user data ...][text mirror][page table]
/// 0x8000_0000  IRAM
/// ```
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AddressMap {
    pub atomic_size: u32,
    pub iram_size: u32,
    pub wram_size: u32,
    pub mram_size: u32,
    pub stack_size: u32,
    pub heap_size: u32,
}

impl Default for AddressMap {
    fn default() -> Self {
        AddressMap {
            atomic_size: 32,
            iram_size: 24 * 1024,
            wram_size: 64 * 1024,
            mram_size: 64 * 1024 * 1024,
            stack_size: 2 * 1024,
            heap_size: 4 * 1024,
        }
    }
}

impl AddressMap {
    pub const ATOMIC_BASE: u32 = 0x0000_0000;
    pub const WRAM_BASE: u32 = 0x0001_0000;
    pub const MRAM_BASE: u32 = 0x0800_0000;
    pub const IRAM_BASE: u32 = 0x8000_0000;
    /// Bytes at the top of MRAM holding the single-level page table.
    pub const PAGE_TABLE_BYTES: u32 = 128 * 1024;
    /// Bytes below the page table that mirror IRAM for instruction-cache fills.
    pub const TEXT_MIRROR_BYTES: u32 = 32 * 1024;

    pub fn base(kind: RegionKind) -> u32 {
        match kind {
            RegionKind::Atomic => Self::ATOMIC_BASE,
            RegionKind::Iram => Self::IRAM_BASE,
            RegionKind::Wram => Self::WRAM_BASE,
            RegionKind::Mram => Self::MRAM_BASE,
        }
    }

    pub fn size(&self, kind: RegionKind) -> u32 {
        match kind {
            RegionKind::Atomic => self.atomic_size,
            RegionKind::Iram => self.iram_size,
            RegionKind::Wram => self.wram_size,
            RegionKind::Mram => self.mram_size,
        }
    }

    pub fn contains(&self, kind: RegionKind, addr: u32, len: u32) -> bool {
        let base = Self::base(kind) as u64;
        let (a, l) = (addr as u64, len as u64);
        a >= base && a + l <= base + self.size(kind) as u64
    }

    pub fn region_of(&self, addr: u32) -> Option<RegionKind> {
        [RegionKind::Atomic, RegionKind::Wram, RegionKind::Mram, RegionKind::Iram]
            .into_iter()
            .find(|&k| self.contains(k, addr, 1))
    }

    pub fn page_table_base(&self) -> u32 {
        Self::MRAM_BASE + self.mram_size - Self::PAGE_TABLE_BYTES
    }

    pub fn text_mirror_base(&self) -> u32 {
        self.page_table_base() - Self::TEXT_MIRROR_BYTES
    }

    /// First MRAM address not available to programs and host buffers.
    pub fn mram_user_limit(&self) -> u32 {
        self.text_mirror_base()
    }

    /// WRAM bytes taken by heap and stacks for `threads` tasklets.
    pub fn wram_reserved(&self, threads: u32) -> u32 {
        self.heap_size + self.stack_size * threads
    }
}

pub(crate) fn align_up(v: u32, a: u32) -> u32 {
    v.div_ceil(a) * a
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regions_are_disjoint() {
        let m = AddressMap::default();
        let kinds = [RegionKind::Atomic, RegionKind::Iram, RegionKind::Wram, RegionKind::Mram];
        for a in kinds {
            for b in kinds {
                if a == b {
                    continue;
                }
                let (sa, ea) = (AddressMap::base(a) as u64, AddressMap::base(a) as u64 + m.size(a) as u64);
                let (sb, eb) = (AddressMap::base(b) as u64, AddressMap::base(b) as u64 + m.size(b) as u64);
                assert!(ea <= sb || eb <= sa, "{a} overlaps {b}");
            }
        }
    }

    #[test]
    fn region_decoding() {
        let m = AddressMap::default();
        assert_eq!(m.region_of(0x10), Some(RegionKind::Atomic));
        assert_eq!(m.region_of(0x40), None);
        assert_eq!(m.region_of(0x0001_fffc), Some(RegionKind::Wram));
        assert_eq!(m.region_of(0x0800_0000), Some(RegionKind::Mram));
        assert_eq!(m.region_of(0x8000_0006), Some(RegionKind::Iram));
        assert_eq!(m.page_table_base() - AddressMap::MRAM_BASE, 64 * 1024 * 1024 - 128 * 1024);
    }
}
