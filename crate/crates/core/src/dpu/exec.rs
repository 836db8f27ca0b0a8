//! Pure instruction semantics shared by scalar and SIMT issue.

use crate::isa::Opcode;

/// Two's-complement 32-bit ALU. Shift amounts use the low five bits.
pub fn alu(op: Opcode, a: u32, b: u32) -> u32 {
    match op {
        Opcode::Add => a.wrapping_add(b),
        Opcode::Sub => a.wrapping_sub(b),
        Opcode::And => a & b,
        Opcode::Or => a | b,
        Opcode::Xor => a ^ b,
        Opcode::Lsl => a << (b & 31),
        Opcode::Lsr => a >> (b & 31),
        Opcode::Asr => ((a as i32) >> (b & 31)) as u32,
        Opcode::Mul => a.wrapping_mul(b),
        Opcode::CmpEq => (a == b) as u32,
        Opcode::CmpNe => (a != b) as u32,
        Opcode::CmpLt => ((a as i32) < (b as i32)) as u32,
        Opcode::CmpLtu => (a < b) as u32,
        other => panic!("{} is not an ALU operation", other.mnemonic()),
    }
}

pub fn branch_taken(op: Opcode, a: u32, b: u32) -> bool {
    match op {
        Opcode::Beq => a == b,
        Opcode::Bne => a != b,
        Opcode::Blt => (a as i32) < (b as i32),
        Opcode::Bge => (a as i32) >= (b as i32),
        other => panic!("{} is not a branch", other.mnemonic()),
    }
}

/// Widen a loaded value: bytes and halves are sign-extended.
pub fn extend_load(op: Opcode, raw: u64) -> u64 {
    match op {
        Opcode::Lb => raw as u8 as i8 as i32 as u32 as u64,
        Opcode::Lh => raw as u16 as i16 as i32 as u32 as u64,
        _ => raw,
    }
}
