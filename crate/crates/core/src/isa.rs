//! Instruction set: register model, opcode table, 48-bit encoding and validation.
//!
//! Every instruction is exactly six bytes. The word layout is
//!
//! ```text
//!  47      40 39   35 34   30  29  28                          0
//! +----------+-------+-------+----+------------------------------+
//! |  opcode  |   A   |   B   |  F |              C               |
//! +----------+-------+-------+----+------------------------------+
//! ```
//!
//! How the A/B/F/C fields are used depends on the opcode's [`Shape`]. Fields a
//! shape does not use are zero; a word with stray bits in an unused field does
//! not decode.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Number of architectural general-purpose registers per tasklet.
pub const NUM_REGISTERS: usize = 24;
/// Size of one encoded instruction in bytes (IRAM fetch granularity).
pub const INSTRUCTION_BYTES: u32 = 6;
/// Number of lock bits in the atomic region.
pub const NUM_LOCKS: usize = 256;
/// Largest byte count a single DMA instruction may move.
pub const DMA_MAX_BYTES: i32 = 2048;

const IMM29_MIN: i64 = -(1 << 28);
const IMM29_MAX: i64 = (1 << 28) - 1;
const MASK29: u64 = (1 << 29) - 1;

/// A general-purpose register. Values up to 31 are representable so that
/// out-of-range operands survive decoding and can be reported by [`validate`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Register(u8);

impl Register {
    /// Panics if `index` does not fit the 5-bit register field.
    pub const fn new(index: u8) -> Self {
        assert!(index < 32, "register field is 5 bits wide");
        Register(index)
    }

    pub const fn index(self) -> usize {
        self.0 as usize
    }

    pub const fn is_valid(self) -> bool {
        (self.0 as usize) < NUM_REGISTERS
    }

    /// 0 for the even bank, 1 for the odd bank.
    pub const fn parity(self) -> usize {
        (self.0 & 1) as usize
    }
}

impl fmt::Display for Register {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

/// A register or an immediate in the second source slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Operand {
    Reg(Register),
    Imm(i32),
}

/// Instruction categories used by the instruction-mix statistic.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    Alu,
    LoadStoreWram,
    Dma,
    Control,
    Sync,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::Alu,
        Category::LoadStoreWram,
        Category::Dma,
        Category::Control,
        Category::Sync,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Alu => "alu",
            Category::LoadStoreWram => "loadstore_wram",
            Category::Dma => "dma",
            Category::Control => "control",
            Category::Sync => "sync",
        }
    }
}

/// Operand layout of an opcode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    /// `nop`, `stop`
    None,
    /// `id rd`
    Dst,
    /// `add rd, ra, rb|imm29`
    Binary,
    /// `movi rd, imm32`
    LoadImm,
    /// `beq ra, rb, target`
    Branch,
    /// `jmp target`
    Jump,
    /// `lw rd, [ra + off]`
    Load,
    /// `sw rv, [ra + off]`
    Store,
    /// `ldma rw, rm, bytes`
    Dma,
    /// `acquire n`
    Lock,
}

macro_rules! opcodes {
    ($( $variant:ident = $num:literal, $mnemonic:literal, $shape:ident, $cat:ident; )*) => {
        /// Defined opcodes. The discriminant is the 8-bit opcode number.
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[repr(u8)]
        pub enum Opcode {
            $( $variant = $num, )*
        }

        impl Opcode {
            pub const ALL: &'static [Opcode] = &[$( Opcode::$variant, )*];

            pub fn from_number(n: u8) -> Option<Opcode> {
                match n {
                    $( $num => Some(Opcode::$variant), )*
                    _ => None,
                }
            }

            pub fn from_mnemonic(s: &str) -> Option<Opcode> {
                match s {
                    $( $mnemonic => Some(Opcode::$variant), )*
                    _ => None,
                }
            }

            pub fn mnemonic(self) -> &'static str {
                match self {
                    $( Opcode::$variant => $mnemonic, )*
                }
            }

            pub fn shape(self) -> Shape {
                match self {
                    $( Opcode::$variant => Shape::$shape, )*
                }
            }

            pub fn category(self) -> Category {
                match self {
                    $( Opcode::$variant => Category::$cat, )*
                }
            }
        }
    };
}

opcodes! {
    Nop = 0x00, "nop", None, Control;
    Stop = 0x01, "stop", None, Control;
    Id = 0x02, "id", Dst, Control;
    Add = 0x10, "add", Binary, Alu;
    Sub = 0x11, "sub", Binary, Alu;
    And = 0x12, "and", Binary, Alu;
    Or = 0x13, "or", Binary, Alu;
    Xor = 0x14, "xor", Binary, Alu;
    Lsl = 0x15, "lsl", Binary, Alu;
    Lsr = 0x16, "lsr", Binary, Alu;
    Asr = 0x17, "asr", Binary, Alu;
    Mul = 0x18, "mul", Binary, Alu;
    CmpEq = 0x19, "cmpeq", Binary, Alu;
    CmpNe = 0x1a, "cmpne", Binary, Alu;
    CmpLt = 0x1b, "cmplt", Binary, Alu;
    CmpLtu = 0x1c, "cmpltu", Binary, Alu;
    Movi = 0x1d, "movi", LoadImm, Alu;
    Beq = 0x20, "beq", Branch, Control;
    Bne = 0x21, "bne", Branch, Control;
    Blt = 0x22, "blt", Branch, Control;
    Bge = 0x23, "bge", Branch, Control;
    Jmp = 0x24, "jmp", Jump, Control;
    Lb = 0x30, "lb", Load, LoadStoreWram;
    Lh = 0x31, "lh", Load, LoadStoreWram;
    Lw = 0x32, "lw", Load, LoadStoreWram;
    Ld = 0x33, "ld", Load, LoadStoreWram;
    Sb = 0x38, "sb", Store, LoadStoreWram;
    Sh = 0x39, "sh", Store, LoadStoreWram;
    Sw = 0x3a, "sw", Store, LoadStoreWram;
    Sd = 0x3b, "sd", Store, LoadStoreWram;
    Ldma = 0x40, "ldma", Dma, Dma;
    Sdma = 0x41, "sdma", Dma, Dma;
    Acquire = 0x50, "acquire", Lock, Sync;
    Release = 0x51, "release", Lock, Sync;
}

/// Opcode number reserved as permanently illegal.
pub const RESERVED_OPCODE: u8 = 0xff;

impl Opcode {
    pub fn number(self) -> u8 {
        self as u8
    }

    /// Access size in bytes for WRAM loads/stores.
    pub fn access_size(self) -> Option<u32> {
        match self {
            Opcode::Lb | Opcode::Sb => Some(1),
            Opcode::Lh | Opcode::Sh => Some(2),
            Opcode::Lw | Opcode::Sw => Some(4),
            Opcode::Ld | Opcode::Sd => Some(8),
            _ => None,
        }
    }

    pub fn is_load(self) -> bool {
        self.shape() == Shape::Load
    }

    pub fn is_store(self) -> bool {
        self.shape() == Shape::Store
    }

    /// Instructions whose successor pc is only known after execute.
    pub fn redirects(self) -> bool {
        matches!(self.shape(), Shape::Branch | Shape::Jump) || self == Opcode::Acquire
    }
}

/// A decoded instruction.
///
/// Field use per shape: `Binary` uses `dst`, `src1`, `src2`; `LoadImm` keeps its
/// constant in `src2`; `Branch` compares `src1` against `src2` and jumps to
/// `imm`; `Load`/`Store` address `[src1 + imm]` (stores take the value from
/// `src2`); `Dma` moves `imm` bytes between WRAM `[src1]` and MRAM `[src2]`;
/// `Lock` names lock `imm`. Branch and jump targets hold the low 16 bits of
/// the absolute IRAM address.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Instruction {
    pub opcode: Opcode,
    pub dst: Option<Register>,
    pub src1: Option<Register>,
    pub src2: Option<Operand>,
    pub imm: i32,
}

impl Instruction {
    pub fn new(opcode: Opcode) -> Self {
        Instruction { opcode, dst: None, src1: None, src2: None, imm: 0 }
    }

    pub fn nop() -> Self {
        Self::new(Opcode::Nop)
    }

    pub fn stop() -> Self {
        Self::new(Opcode::Stop)
    }

    pub fn id(dst: Register) -> Self {
        Instruction { dst: Some(dst), ..Self::new(Opcode::Id) }
    }

    pub fn binary(opcode: Opcode, dst: Register, src1: Register, src2: Operand) -> Self {
        Instruction { dst: Some(dst), src1: Some(src1), src2: Some(src2), ..Self::new(opcode) }
    }

    pub fn movi(dst: Register, value: i32) -> Self {
        Instruction { dst: Some(dst), src2: Some(Operand::Imm(value)), ..Self::new(Opcode::Movi) }
    }

    pub fn branch(opcode: Opcode, a: Register, b: Register, target: i32) -> Self {
        Instruction {
            src1: Some(a),
            src2: Some(Operand::Reg(b)),
            imm: target,
            ..Self::new(opcode)
        }
    }

    pub fn jump(target: i32) -> Self {
        Instruction { imm: target, ..Self::new(Opcode::Jmp) }
    }

    pub fn load(opcode: Opcode, dst: Register, base: Register, offset: i32) -> Self {
        Instruction { dst: Some(dst), src1: Some(base), imm: offset, ..Self::new(opcode) }
    }

    pub fn store(opcode: Opcode, value: Register, base: Register, offset: i32) -> Self {
        Instruction {
            src1: Some(base),
            src2: Some(Operand::Reg(value)),
            imm: offset,
            ..Self::new(opcode)
        }
    }

    pub fn dma(opcode: Opcode, wram: Register, mram: Register, bytes: i32) -> Self {
        Instruction {
            src1: Some(wram),
            src2: Some(Operand::Reg(mram)),
            imm: bytes,
            ..Self::new(opcode)
        }
    }

    pub fn lock(opcode: Opcode, index: i32) -> Self {
        Instruction { imm: index, ..Self::new(opcode) }
    }

    pub fn category(&self) -> Category {
        self.opcode.category()
    }

    /// Registers read by this instruction, in operand order. A register named
    /// twice is read once.
    pub fn reads(&self) -> ReadSet {
        let mut set = ReadSet::default();
        let second = match self.src2 {
            Some(Operand::Reg(r)) => Some(r),
            _ => None,
        };
        match self.opcode.shape() {
            Shape::Binary | Shape::Branch | Shape::Store | Shape::Dma => {
                if let Some(a) = self.src1 {
                    set.push(a);
                }
                if let Some(b) = second {
                    set.push(b);
                }
            }
            Shape::Load => {
                if let Some(a) = self.src1 {
                    set.push(a);
                }
            }
            _ => {}
        }
        // 64-bit stores read the odd partner of the value register as well.
        if self.opcode == Opcode::Sd {
            if let Some(v) = second {
                if v.index() + 1 < 32 {
                    set.push(Register::new(v.0 + 1));
                }
            }
        }
        set
    }

    /// Registers written by this instruction.
    pub fn writes(&self) -> ReadSet {
        let mut set = ReadSet::default();
        if let Some(d) = self.dst {
            set.push(d);
            if self.opcode == Opcode::Ld && d.index() + 1 < 32 {
                set.push(Register::new(d.0 + 1));
            }
        }
        set
    }

    /// True when two reads fall in the same register-file bank.
    pub fn has_parity_conflict(&self) -> bool {
        let reads = self.reads();
        let mut banks = [0u8; 2];
        for r in reads.iter() {
            banks[r.parity()] += 1;
        }
        banks[0] > 1 || banks[1] > 1
    }
}

/// Small fixed-capacity register set (at most three entries).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ReadSet {
    regs: [Option<Register>; 3],
    len: usize,
}

impl ReadSet {
    fn push(&mut self, r: Register) {
        if self.iter().any(|x| x == r) {
            return;
        }
        self.regs[self.len] = Some(r);
        self.len += 1;
    }

    pub fn iter(&self) -> impl Iterator<Item = Register> + '_ {
        self.regs[..self.len].iter().flatten().copied()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn contains(&self, r: Register) -> bool {
        self.iter().any(|x| x == r)
    }
}

/// Absolute IRAM address reconstructed from a branch target field.
pub fn target_address(iram_base: u32, target: i32) -> u32 {
    iram_base | (target as u32 & 0xffff)
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = self.opcode.mnemonic();
        let reg = |r: Option<Register>| r.map(|r| r.to_string()).unwrap_or_else(|| "r?".into());
        let op2 = |o: Option<Operand>| match o {
            Some(Operand::Reg(r)) => r.to_string(),
            Some(Operand::Imm(i)) => i.to_string(),
            None => "?".into(),
        };
        let mem = |base: Option<Register>, off: i32| match off {
            0 => format!("[{}]", reg(base)),
            o if o < 0 => format!("[{} - {}]", reg(base), -(o as i64)),
            o => format!("[{} + {}]", reg(base), o),
        };
        let iram = crate::frontend::AddressMap::IRAM_BASE;
        match self.opcode.shape() {
            Shape::None => write!(f, "{m}"),
            Shape::Dst => write!(f, "{m} {}", reg(self.dst)),
            Shape::Binary => {
                write!(f, "{m} {}, {}, {}", reg(self.dst), reg(self.src1), op2(self.src2))
            }
            Shape::LoadImm => write!(f, "{m} {}, {}", reg(self.dst), op2(self.src2)),
            Shape::Branch => write!(
                f,
                "{m} {}, {}, {:#x}",
                reg(self.src1),
                op2(self.src2),
                target_address(iram, self.imm)
            ),
            Shape::Jump => write!(f, "{m} {:#x}", target_address(iram, self.imm)),
            Shape::Load => write!(f, "{m} {}, {}", reg(self.dst), mem(self.src1, self.imm)),
            Shape::Store => write!(f, "{m} {}, {}", op2(self.src2), mem(self.src1, self.imm)),
            Shape::Dma => {
                write!(f, "{m} {}, {}, {}", reg(self.src1), op2(self.src2), self.imm)
            }
            Shape::Lock => write!(f, "{m} {}", self.imm),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodingError {
    #[error("operand shape mismatch for `{0}`")]
    ShapeMismatch(&'static str),
    #[error("immediate {value} does not fit the field of `{mnemonic}`")]
    ImmediateRange { mnemonic: &'static str, value: i64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("illegal instruction: opcode {0:#04x} is undefined")]
    IllegalInstruction(u8),
    #[error("word {0:#014x} has nonzero bits in fields unused by its opcode")]
    ReservedBits(u64),
}

/// One problem found by [`validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation(pub String);

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

fn field(word: u64, lo: u32, width: u32) -> u64 {
    (word >> lo) & ((1 << width) - 1)
}

fn reg_bits(r: Option<Register>) -> Result<u64, ()> {
    r.map(|r| r.0 as u64).ok_or(())
}

fn imm29(value: i64, mnemonic: &'static str) -> Result<u64, EncodingError> {
    if !(IMM29_MIN..=IMM29_MAX).contains(&value) {
        return Err(EncodingError::ImmediateRange { mnemonic, value });
    }
    Ok(value as u64 & MASK29)
}

fn sext29(bits: u64) -> i32 {
    ((bits << 35) as i64 >> 35) as i32
}

/// Encode to a 48-bit word (held in the low bits of a `u64`).
pub fn encode(instr: &Instruction) -> Result<u64, EncodingError> {
    let m = instr.opcode.mnemonic();
    let mismatch = |_| EncodingError::ShapeMismatch(m);
    let op = (instr.opcode.number() as u64) << 40;
    let a = |r: Option<Register>| reg_bits(r).map(|v| v << 35).map_err(mismatch);
    let b = |r: Option<Register>| reg_bits(r).map(|v| v << 30).map_err(mismatch);
    let second_reg = match instr.src2 {
        Some(Operand::Reg(r)) => Some(r),
        _ => None,
    };
    let none_or = |cond: bool| if cond { Ok(()) } else { Err(EncodingError::ShapeMismatch(m)) };

    let word = match instr.opcode.shape() {
        Shape::None => {
            none_or(instr.dst.is_none() && instr.src1.is_none() && instr.src2.is_none())?;
            none_or(instr.imm == 0)?;
            op
        }
        Shape::Dst => {
            none_or(instr.src1.is_none() && instr.src2.is_none() && instr.imm == 0)?;
            op | a(instr.dst)?
        }
        Shape::Binary => {
            none_or(instr.imm == 0)?;
            let c = match instr.src2 {
                Some(Operand::Reg(r)) => r.0 as u64,
                Some(Operand::Imm(v)) => (1 << 29) | imm29(v as i64, m)?,
                None => return Err(EncodingError::ShapeMismatch(m)),
            };
            op | a(instr.dst)? | b(instr.src1)? | c
        }
        Shape::LoadImm => {
            none_or(instr.src1.is_none() && instr.imm == 0)?;
            let v = match instr.src2 {
                Some(Operand::Imm(v)) => v as u32 as u64,
                _ => return Err(EncodingError::ShapeMismatch(m)),
            };
            op | a(instr.dst)? | v
        }
        Shape::Branch => {
            none_or(instr.dst.is_none())?;
            target_range(instr.imm, m)?;
            op | a(instr.src1)? | b(second_reg)? | instr.imm as u64
        }
        Shape::Jump => {
            none_or(instr.dst.is_none() && instr.src1.is_none() && instr.src2.is_none())?;
            target_range(instr.imm, m)?;
            op | instr.imm as u64
        }
        Shape::Load => {
            none_or(instr.src2.is_none())?;
            op | a(instr.dst)? | b(instr.src1)? | (1 << 29) | imm29(instr.imm as i64, m)?
        }
        Shape::Store => {
            none_or(instr.dst.is_none())?;
            op | a(second_reg)? | b(instr.src1)? | (1 << 29) | imm29(instr.imm as i64, m)?
        }
        Shape::Dma => {
            none_or(instr.dst.is_none())?;
            op | a(instr.src1)? | b(second_reg)? | (1 << 29) | imm29(instr.imm as i64, m)?
        }
        Shape::Lock => {
            none_or(instr.dst.is_none() && instr.src1.is_none() && instr.src2.is_none())?;
            if !(0..NUM_LOCKS as i32).contains(&instr.imm) {
                return Err(EncodingError::ImmediateRange { mnemonic: m, value: instr.imm as i64 });
            }
            op | instr.imm as u64
        }
    };
    Ok(word)
}

fn target_range(target: i32, mnemonic: &'static str) -> Result<(), EncodingError> {
    if (0..=0xffff).contains(&target) {
        Ok(())
    } else {
        Err(EncodingError::ImmediateRange { mnemonic, value: target as i64 })
    }
}

/// Decode a 48-bit word. Bits above 47 are ignored.
pub fn decode(word: u64) -> Result<Instruction, DecodeError> {
    let word = word & 0xffff_ffff_ffff;
    let num = field(word, 40, 8) as u8;
    let opcode = Opcode::from_number(num).ok_or(DecodeError::IllegalInstruction(num))?;
    let a = Register(field(word, 35, 5) as u8);
    let b = Register(field(word, 30, 5) as u8);
    let flag = field(word, 29, 1) == 1;
    let c = field(word, 0, 29);
    let reserved = |cond: bool| if cond { Ok(()) } else { Err(DecodeError::ReservedBits(word)) };
    let low40 = word & ((1 << 40) - 1);

    let mut instr = Instruction::new(opcode);
    match opcode.shape() {
        Shape::None => reserved(low40 == 0)?,
        Shape::Dst => {
            reserved(low40 & ((1 << 35) - 1) == 0)?;
            instr.dst = Some(a);
        }
        Shape::Binary => {
            instr.dst = Some(a);
            instr.src1 = Some(b);
            if flag {
                instr.src2 = Some(Operand::Imm(sext29(c)));
            } else {
                reserved(c < 32)?;
                instr.src2 = Some(Operand::Reg(Register(c as u8)));
            }
        }
        Shape::LoadImm => {
            reserved(field(word, 32, 3) == 0)?;
            instr.dst = Some(a);
            instr.src2 = Some(Operand::Imm(field(word, 0, 32) as u32 as i32));
        }
        Shape::Branch => {
            reserved(!flag && c <= 0xffff)?;
            instr.src1 = Some(a);
            instr.src2 = Some(Operand::Reg(b));
            instr.imm = c as i32;
        }
        Shape::Jump => {
            reserved(field(word, 29, 11) == 0 && c <= 0xffff)?;
            instr.imm = c as i32;
        }
        Shape::Load => {
            reserved(flag)?;
            instr.dst = Some(a);
            instr.src1 = Some(b);
            instr.imm = sext29(c);
        }
        Shape::Store => {
            reserved(flag)?;
            instr.src2 = Some(Operand::Reg(a));
            instr.src1 = Some(b);
            instr.imm = sext29(c);
        }
        Shape::Dma => {
            reserved(flag)?;
            instr.src1 = Some(a);
            instr.src2 = Some(Operand::Reg(b));
            instr.imm = sext29(c);
        }
        Shape::Lock => {
            reserved(field(word, 29, 11) == 0 && c < NUM_LOCKS as u64)?;
            instr.imm = c as i32;
        }
    }
    Ok(instr)
}

/// Check architectural constraints. Never aborts; returns every violation.
pub fn validate(instr: &Instruction) -> Result<(), Vec<Violation>> {
    let mut errs = Vec::new();
    let regs = [
        instr.dst,
        instr.src1,
        match instr.src2 {
            Some(Operand::Reg(r)) => Some(r),
            _ => None,
        },
    ];
    for r in regs.into_iter().flatten() {
        if !r.is_valid() {
            errs.push(Violation(format!("register index out of range: {r}")));
        }
    }
    if let Err(e) = encode(instr) {
        errs.push(Violation(e.to_string()));
    }
    match instr.opcode {
        Opcode::Ldma | Opcode::Sdma => {
            if instr.imm % 8 != 0 {
                errs.push(Violation(format!("DMA size not multiple of 8: {}", instr.imm)));
            }
            if !(8..=DMA_MAX_BYTES).contains(&instr.imm) {
                errs.push(Violation(format!("DMA size out of range [8, 2048]: {}", instr.imm)));
            }
        }
        Opcode::Ld | Opcode::Sd => {
            let pair = if instr.opcode == Opcode::Ld {
                instr.dst
            } else {
                match instr.src2 {
                    Some(Operand::Reg(r)) => Some(r),
                    _ => None,
                }
            };
            if let Some(r) = pair {
                if r.parity() != 0 || r.index() + 1 >= NUM_REGISTERS {
                    errs.push(Violation(format!("64-bit access needs an even register pair, got {r}")));
                }
            }
        }
        _ => {}
    }
    if errs.is_empty() {
        Ok(())
    } else {
        Err(errs)
    }
}

/// Write a word as six little-endian bytes.
pub fn word_to_bytes(word: u64) -> [u8; 6] {
    let b = word.to_le_bytes();
    [b[0], b[1], b[2], b[3], b[4], b[5]]
}

pub fn word_from_bytes(bytes: &[u8]) -> u64 {
    let mut b = [0u8; 8];
    b[..6].copy_from_slice(&bytes[..6]);
    u64::from_le_bytes(b)
}
