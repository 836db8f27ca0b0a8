use super::image::MemoryImage;
use super::{AddressMap, RegionKind};
use crate::isa;
use std::collections::BTreeMap;
use std::fmt::Write;

/// Render the IRAM payload as assembly that reassembles to the same bytes.
/// Each instruction line carries its address in a trailing comment; words
/// that do not decode are written as `.word` escapes.
pub fn disassemble(image: &MemoryImage) -> String {
    let mut out = String::new();
    let map = AddressMap::default();
    let mut labels: BTreeMap<u32, Vec<&str>> = BTreeMap::new();
    for (name, &a) in &image.symbols {
        if map.contains(RegionKind::Iram, a, 1) && !name.starts_with('.') {
            labels.entry(a).or_default().push(name);
        }
    }
    for r in &image.regions {
        let _ = writeln!(out, "; {} {:#010x} {} bytes", r.kind, r.base, r.bytes.len());
    }
    let _ = writeln!(out, "; entry {:#010x} threads {}", image.entry, image.threads);
    out.push_str(".section text\n");
    for (i, chunk) in image.iram().chunks(6).enumerate() {
        let addr = AddressMap::IRAM_BASE + 6 * i as u32;
        for l in labels.get(&addr).into_iter().flatten() {
            let _ = writeln!(out, "{l}:");
        }
        if chunk.len() < 6 {
            let _ = writeln!(out, "; trailing {} bytes not shown", chunk.len());
            break;
        }
        let word = isa::word_from_bytes(chunk);
        let text = match isa::decode(word) {
            Ok(instr) => instr.to_string(),
            Err(_) => format!(".word {word:#014x}"),
        };
        let _ = writeln!(out, "    {text:<32} ; {addr:#010x}");
    }
    out
}
