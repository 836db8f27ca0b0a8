use super::image::{JournalEntry, MemoryImage, RegionPayload};
use super::lexer::RelocKind;
use super::parser::ObjectFile;
use super::{align_up, AddressMap, RegionKind};
use crate::isa::{self, Operand, Shape};
use std::collections::{BTreeMap, HashMap};
use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LinkOptions {
    /// Move WRAM sections that do not fit into MRAM-backed space instead of failing.
    pub allow_overflow: bool,
    /// WRAM section names to move into MRAM-backed space unconditionally.
    pub relocations: Vec<String>,
    /// Tasklets whose stacks are carved out of WRAM.
    pub threads: u32,
}

impl Default for LinkOptions {
    fn default() -> Self {
        LinkOptions { allow_overflow: false, relocations: Vec::new(), threads: 24 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum LinkError {
    #[error("unresolved symbol `{symbol}` referenced from {object}")]
    UnresolvedSymbol { symbol: String, object: String },
    #[error("symbol `{0}` defined in more than one object")]
    DuplicateSymbol(String),
    #[error("{region} overflow: {used} bytes needed, {capacity} available")]
    RegionOverflow { region: RegionKind, used: u64, capacity: u64 },
    #[error("relocation of `{symbol}` ({value:#x}) does not fit its field")]
    RelocationRange { symbol: String, value: u32 },
    #[error("branch target `{0}` is not in IRAM")]
    BadBranchTarget(String),
    #[error("thread count {0} outside 1..=24")]
    Threads(u32),
    #[error("malformed object {0}: {1}")]
    Malformed(String, String),
}

/// Lay out objects over the physical regions and patch relocations.
pub fn link(
    objects: &[ObjectFile],
    map: &AddressMap,
    options: &LinkOptions,
) -> Result<MemoryImage, LinkError> {
    if !(1..=24).contains(&options.threads) {
        return Err(LinkError::Threads(options.threads));
    }
    let wram_capacity = map.wram_size.saturating_sub(map.wram_reserved(options.threads));

    // Placement.
    let mut addr: Vec<Vec<u32>> = objects.iter().map(|o| vec![0; o.sections.len()]).collect();
    let mut iram = AddressMap::IRAM_BASE;
    let mut wram = AddressMap::WRAM_BASE;
    let mut mram = AddressMap::MRAM_BASE;
    let mut atomic = AddressMap::ATOMIC_BASE;
    let mut remapped = Vec::new();
    for (oi, obj) in objects.iter().enumerate() {
        for (si, s) in obj.sections.iter().enumerate() {
            let len = s.data.len() as u32;
            match s.region {
                RegionKind::Iram => {
                    if !len.is_multiple_of(isa::INSTRUCTION_BYTES) {
                        return Err(LinkError::Malformed(obj.path.clone(), s.name.clone()));
                    }
                    addr[oi][si] = iram;
                    iram += len;
                }
                RegionKind::Atomic => {
                    addr[oi][si] = atomic;
                    atomic += len;
                }
                RegionKind::Mram => {
                    mram = align_up(mram, 8);
                    addr[oi][si] = mram;
                    mram += len;
                }
                RegionKind::Wram => {
                    let start = align_up(wram, 8);
                    let explicit = options.relocations.contains(&s.name);
                    let overflows = (start - AddressMap::WRAM_BASE + len) > wram_capacity;
                    if explicit || (overflows && options.allow_overflow) {
                        remapped.push((oi, si));
                    } else {
                        addr[oi][si] = start;
                        wram = start + len;
                    }
                }
            }
        }
    }
    let mut journal = Vec::new();
    for &(oi, si) in &remapped {
        let s = &objects[oi].sections[si];
        mram = align_up(mram, 64);
        addr[oi][si] = mram;
        journal.push(JournalEntry {
            section: format!("{}:{}", objects[oi].path, s.name),
            from: RegionKind::Wram,
            to: RegionKind::Mram,
            address: mram,
            size: s.data.len() as u32,
        });
        mram += s.data.len() as u32;
    }

    let check = |region, used: u64, capacity: u64| {
        if used > capacity {
            Err(LinkError::RegionOverflow { region, used, capacity })
        } else {
            Ok(())
        }
    };
    check(RegionKind::Iram, (iram - AddressMap::IRAM_BASE) as u64, map.iram_size as u64)?;
    check(RegionKind::Atomic, atomic as u64, map.atomic_size as u64)?;
    let wram_used = (wram - AddressMap::WRAM_BASE) as u64 + map.wram_reserved(options.threads) as u64;
    check(RegionKind::Wram, wram_used, map.wram_size as u64)?;
    check(
        RegionKind::Mram,
        (mram - AddressMap::MRAM_BASE) as u64,
        (map.mram_user_limit() - AddressMap::MRAM_BASE) as u64,
    )?;

    // Symbols.
    let heap_base = align_up(wram, 8);
    let stacks_base = heap_base + map.heap_size;
    let mut globals: BTreeMap<String, u32> = BTreeMap::new();
    globals.insert("__heap_base".into(), heap_base);
    globals.insert("__stacks_base".into(), stacks_base);
    globals.insert("__mram_heap".into(), align_up(mram, 1024));
    let mut locals: Vec<HashMap<&str, u32>> = Vec::new();
    for (oi, obj) in objects.iter().enumerate() {
        let mut l = HashMap::new();
        for (name, def) in &obj.symbols {
            let base = *addr[oi]
                .get(def.section)
                .ok_or_else(|| LinkError::Malformed(obj.path.clone(), name.clone()))?;
            let a = base + def.offset;
            l.insert(name.as_str(), a);
            if def.global && globals.insert(name.clone(), a).is_some() {
                return Err(LinkError::DuplicateSymbol(name.clone()));
            }
        }
        locals.push(l);
    }

    // Payloads.
    let mut iram_bytes = Vec::with_capacity((iram - AddressMap::IRAM_BASE) as usize);
    let mut wram_bytes = vec![0u8; (wram - AddressMap::WRAM_BASE) as usize];
    let mut mram_bytes = vec![0u8; (mram - AddressMap::MRAM_BASE) as usize];
    let mut atomic_bytes = vec![0u8; atomic as usize];
    let mut place = |kind: RegionKind, a: u32, data: &[u8], iram_bytes: &mut Vec<u8>| match kind {
        RegionKind::Iram => iram_bytes.extend_from_slice(data),
        RegionKind::Wram => {
            let o = (a - AddressMap::WRAM_BASE) as usize;
            wram_bytes[o..o + data.len()].copy_from_slice(data)
        }
        RegionKind::Mram => {
            let o = (a - AddressMap::MRAM_BASE) as usize;
            mram_bytes[o..o + data.len()].copy_from_slice(data)
        }
        RegionKind::Atomic => {
            atomic_bytes[a as usize..a as usize + data.len()].copy_from_slice(data)
        }
    };
    for (oi, obj) in objects.iter().enumerate() {
        let mut patched: Vec<Vec<u8>> = obj.sections.iter().map(|s| s.data.clone()).collect();
        for r in &obj.relocations {
            let target = locals[oi]
                .get(r.symbol.as_str())
                .copied()
                .or_else(|| globals.get(&r.symbol).copied())
                .ok_or_else(|| LinkError::UnresolvedSymbol {
                    symbol: r.symbol.clone(),
                    object: obj.path.clone(),
                })?;
            let section = obj
                .sections
                .get(r.section)
                .ok_or_else(|| LinkError::Malformed(obj.path.clone(), r.symbol.clone()))?;
            let value = match r.kind {
                RelocKind::Abs32 => target,
                RelocKind::Lo16 => target & 0xffff,
                RelocKind::Hi16 => target >> 16,
            };
            let data = &mut patched[r.section];
            let o = r.offset as usize;
            if section.region == RegionKind::Iram {
                patch_instruction(&mut data[o..o + 6], &r.symbol, target, value, map)?;
            } else {
                data[o..o + 4].copy_from_slice(&value.to_le_bytes());
            }
        }
        for (si, s) in obj.sections.iter().enumerate() {
            let kind = if s.region == RegionKind::Wram && remapped.contains(&(oi, si)) {
                RegionKind::Mram
            } else {
                s.region
            };
            place(kind, addr[oi][si], &patched[si], &mut iram_bytes);
        }
    }

    let mut regions = vec![RegionPayload {
        kind: RegionKind::Iram,
        base: AddressMap::IRAM_BASE,
        bytes: iram_bytes,
    }];
    for (kind, bytes) in [
        (RegionKind::Atomic, atomic_bytes),
        (RegionKind::Wram, wram_bytes),
        (RegionKind::Mram, mram_bytes),
    ] {
        if !bytes.is_empty() {
            regions.push(RegionPayload { kind, base: AddressMap::base(kind), bytes });
        }
    }

    let entry = ["main", "_start"]
        .iter()
        .find_map(|n| globals.get(*n).copied().or_else(|| locals.iter().find_map(|l| l.get(n).copied())))
        .unwrap_or(AddressMap::IRAM_BASE);
    if !map.contains(RegionKind::Iram, entry, 1) {
        return Err(LinkError::BadBranchTarget("entry".into()));
    }

    let mut symbols = globals;
    for l in &locals {
        let mut names: Vec<_> = l.iter().collect();
        names.sort();
        for (name, a) in names {
            let ambiguous = locals.iter().filter(|o| o.contains_key(name)).count() > 1;
            if !ambiguous {
                symbols.entry(name.to_string()).or_insert(*a);
            }
        }
    }

    Ok(MemoryImage { regions, entry, threads: options.threads, journal, symbols })
}

fn patch_instruction(
    bytes: &mut [u8],
    symbol: &str,
    target: u32,
    value: u32,
    map: &AddressMap,
) -> Result<(), LinkError> {
    let word = isa::word_from_bytes(bytes);
    let mut instr =
        isa::decode(word).map_err(|e| LinkError::Malformed(symbol.into(), e.to_string()))?;
    let range = || LinkError::RelocationRange { symbol: symbol.into(), value };
    match instr.opcode.shape() {
        Shape::Branch | Shape::Jump => {
            if !map.contains(RegionKind::Iram, target, 1) {
                return Err(LinkError::BadBranchTarget(symbol.into()));
            }
            instr.imm = (target & 0xffff) as i32;
        }
        Shape::LoadImm => instr.src2 = Some(Operand::Imm(value as i32)),
        Shape::Binary => {
            if value >= 1 << 28 {
                return Err(range());
            }
            instr.src2 = Some(Operand::Imm(value as i32));
        }
        Shape::Load | Shape::Store => {
            if value >= 1 << 28 {
                return Err(range());
            }
            instr.imm = value as i32;
        }
        _ => return Err(range()),
    }
    let w = isa::encode(&instr).map_err(|_| range())?;
    bytes.copy_from_slice(&isa::word_to_bytes(w));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::assemble;

    fn link1(src: &str, opts: &LinkOptions) -> Result<MemoryImage, LinkError> {
        let obj = assemble(src, "t.s").unwrap();
        link(&[obj], &AddressMap::default(), opts)
    }

    #[test]
    fn one_stop() {
        let img = link1("stop", &LinkOptions::default()).unwrap();
        assert_eq!(img.iram().len(), 6);
        assert_eq!(img.regions[0].base, AddressMap::IRAM_BASE);
        assert_eq!(img.entry, AddressMap::IRAM_BASE);
        assert!(img.region(RegionKind::Wram).is_none());
    }

    #[test]
    fn wram_overflow() {
        let src = format!(".section wram\n.space {}\nstop", 70 * 1024);
        let src = src.replace("\nstop", "\n.section text\nstop");
        let e = link1(&src, &LinkOptions::default()).unwrap_err();
        assert!(matches!(e, LinkError::RegionOverflow { region: RegionKind::Wram, .. }));
        let opts = LinkOptions { allow_overflow: true, ..Default::default() };
        let img = link1(&src, &opts).unwrap();
        assert_eq!(img.journal.len(), 1);
        assert_eq!(img.journal[0].from, RegionKind::Wram);
        assert_eq!(img.journal[0].to, RegionKind::Mram);
        assert_eq!(img.journal[0].size, 70 * 1024);
    }

    #[test]
    fn stacks_limit_data_budget() {
        // 24 stacks (48 KB) + heap (4 KB) leave 12 KB for data.
        let fits = ".section wram\n.space 12288\n.section text\nstop";
        assert!(link1(fits, &LinkOptions::default()).is_ok());
        let over = ".section wram\n.space 12296\n.section text\nstop";
        assert!(link1(over, &LinkOptions::default()).is_err());
        let fewer = LinkOptions { threads: 8, ..Default::default() };
        assert!(link1(over, &fewer).is_ok());
    }

    #[test]
    fn explicit_relocation_list() {
        let src = ".section wram.big\n.space 64\n.section wram\nx: .word 1\n.section text\nmovi r0, x\nstop";
        let opts = LinkOptions { relocations: vec!["wram.big".into()], ..Default::default() };
        let img = link1(src, &opts).unwrap();
        assert_eq!(img.journal[0].section, "t.s:wram.big");
        assert_eq!(img.symbol("x"), Some(AddressMap::WRAM_BASE));
    }

    #[test]
    fn cross_object_symbols() {
        let a = assemble(".global main\nmain: jmp helper\n", "a.s").unwrap();
        let b = assemble(".global helper\nhelper: stop\n", "b.s").unwrap();
        let img = link(&[a.clone(), b], &AddressMap::default(), &LinkOptions::default()).unwrap();
        let i0 = isa::decode(isa::word_from_bytes(&img.iram()[0..6])).unwrap();
        assert_eq!(i0.imm, 6);
        let e = link(&[a], &AddressMap::default(), &LinkOptions::default()).unwrap_err();
        assert!(matches!(e, LinkError::UnresolvedSymbol { .. }));
    }

    #[test]
    fn duplicate_globals() {
        let a = assemble(".global f\nf: stop\n", "a.s").unwrap();
        let e = link(&[a.clone(), a], &AddressMap::default(), &LinkOptions::default()).unwrap_err();
        assert_eq!(e, LinkError::DuplicateSymbol("f".into()));
    }

    #[test]
    fn deterministic() {
        let src = ".section wram\nd: .word 5\n.section text\nmain: movi r1, d\nlw r2, [r1]\nstop";
        let a = link1(src, &LinkOptions::default()).unwrap();
        let b = link1(src, &LinkOptions::default()).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert_eq!(a.symbol("__heap_base"), Some(AddressMap::WRAM_BASE + 8));
    }

    #[test]
    fn lo_hi_relocations() {
        let src = ".section mram\nbuf: .space 8\n.section text\nmovi r1, hi16(buf)\nmovi r2, lo16(buf)\nstop";
        let img = link1(src, &LinkOptions::default()).unwrap();
        let i0 = isa::decode(isa::word_from_bytes(&img.iram()[0..6])).unwrap();
        let i1 = isa::decode(isa::word_from_bytes(&img.iram()[6..12])).unwrap();
        assert_eq!(i0.src2, Some(Operand::Imm(0x0800)));
        assert_eq!(i1.src2, Some(Operand::Imm(0)));
    }
}
