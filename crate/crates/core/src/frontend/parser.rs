use super::lexer::{tokenize, LexError, RelocKind, SpannedToken, Token};
use super::{AddressMap, RegionKind};
use crate::isa::{self, Instruction, Opcode, Operand, Register, Shape, INSTRUCTION_BYTES};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub name: String,
    pub region: RegionKind,
    /// Encoded instructions for IRAM sections, raw bytes otherwise.
    pub data: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymbolDef {
    pub section: usize,
    pub offset: u32,
    pub global: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relocation {
    pub section: usize,
    pub offset: u32,
    pub symbol: String,
    pub kind: RelocKind,
}

/// Output of assembling one source unit.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectFile {
    pub path: String,
    pub sections: Vec<Section>,
    pub symbols: BTreeMap<String, SymbolDef>,
    pub relocations: Vec<Relocation>,
}

impl ObjectFile {
    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum AsmError {
    #[error("{path}:{err}")]
    Lex { path: String, err: LexError },
    #[error("{path}:{line}: syntax error: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("{path}:{line}: {msg}")]
    Semantic { path: String, line: usize, msg: String },
}

/// Tokenize and parse in one step.
pub fn assemble(source: &str, path: &str) -> Result<ObjectFile, AsmError> {
    let tokens = tokenize(source).map_err(|err| AsmError::Lex { path: path.into(), err })?;
    parse(&tokens, path)
}

enum Value {
    Int(i64),
    Sym(String, RelocKind),
}

enum Stmt {
    Instr { op: Opcode, operands: Vec<SpannedToken> },
    Word(Value),
    Space(u32),
}

struct Cursor<'a> {
    toks: &'a [SpannedToken],
    pos: usize,
    path: &'a str,
    line: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, msg: impl Into<String>) -> AsmError {
        AsmError::Parse { path: self.path.into(), line: self.line, msg: msg.into() }
    }

    fn peek(&self) -> Option<&Token> {
        self.toks.get(self.pos).map(|t| &t.token)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.toks.get(self.pos).map(|t| t.token.clone());
        self.pos += 1;
        t
    }

    fn expect(&mut self, want: Token, what: &str) -> Result<(), AsmError> {
        match self.next() {
            Some(t) if t == want => Ok(()),
            Some(t) => Err(self.err(format!("expected {what}, found {t}"))),
            None => Err(self.err(format!("expected {what}, found end of line"))),
        }
    }

    fn reg(&mut self) -> Result<Register, AsmError> {
        match self.next() {
            Some(Token::Reg(r)) => Ok(Register::new(r)),
            Some(t) => Err(self.err(format!("expected register, found {t}"))),
            None => Err(self.err("expected register, found end of line")),
        }
    }

    fn value(&mut self) -> Result<Value, AsmError> {
        match self.next() {
            Some(Token::Minus) => match self.next() {
                Some(Token::Int(v)) => Ok(Value::Int(-v)),
                _ => Err(self.err("expected integer after `-`")),
            },
            Some(Token::Int(v)) => Ok(Value::Int(v)),
            Some(Token::LabelRef(s)) => Ok(Value::Sym(s, RelocKind::Abs32)),
            Some(Token::Reloc(k, s)) => Ok(Value::Sym(s, k)),
            Some(t) => Err(self.err(format!("expected value, found {t}"))),
            None => Err(self.err("expected value, found end of line")),
        }
    }

    fn end(&self) -> Result<(), AsmError> {
        match self.peek() {
            None => Ok(()),
            Some(t) => Err(self.err(format!("unexpected {t}"))),
        }
    }
}

struct Builder {
    sections: Vec<Section>,
    current: usize,
    symbols: BTreeMap<String, SymbolDef>,
    relocations: Vec<Relocation>,
}

impl Builder {
    fn select(&mut self, name: &str) -> Option<usize> {
        if let Some(i) = self.sections.iter().position(|s| s.name == name) {
            return Some(i);
        }
        let region = RegionKind::from_section_name(name)?;
        self.sections.push(Section { name: name.into(), region, data: Vec::new() });
        Some(self.sections.len() - 1)
    }
}

/// Parse a token stream into an object file (two passes: layout, then encoding).
pub fn parse(tokens: &[SpannedToken], path: &str) -> Result<ObjectFile, AsmError> {
    let mut lines: Vec<&[SpannedToken]> = Vec::new();
    let mut start = 0;
    for i in 1..=tokens.len() {
        if i == tokens.len() || tokens[i].line != tokens[start].line {
            lines.push(&tokens[start..i]);
            start = i;
        }
    }

    let sem = |line: usize, msg: String| AsmError::Semantic { path: path.into(), line, msg };

    // Pass 1: statements, section offsets and label definitions.
    let mut b = Builder {
        sections: vec![Section { name: "text".into(), region: RegionKind::Iram, data: Vec::new() }],
        current: 0,
        symbols: BTreeMap::new(),
        relocations: Vec::new(),
    };
    let mut sizes = vec![0u32];
    let mut globals = Vec::new();
    let mut stmts: Vec<(usize, usize, u32, Stmt)> = Vec::new();

    for toks in lines {
        let line = toks[0].line;
        let mut cur = Cursor { toks, pos: 0, path, line };
        while let Some(Token::LabelDef(name)) = cur.peek().cloned() {
            cur.pos += 1;
            if b.symbols.contains_key(&name) {
                return Err(sem(line, format!("duplicate label `{name}`")));
            }
            let def = SymbolDef { section: b.current, offset: sizes[b.current], global: false };
            b.symbols.insert(name, def);
        }
        let Some(head) = cur.next() else { continue };
        let region = b.sections[b.current].region;
        match head {
            Token::Directive(d) => match d.as_str() {
                ".section" => {
                    let name = match cur.next() {
                        Some(Token::LabelRef(n)) | Some(Token::Ident(n)) => n,
                        _ => return Err(cur.err("expected section name")),
                    };
                    cur.end()?;
                    b.current = b
                        .select(&name)
                        .ok_or_else(|| sem(line, format!("unknown section region `{name}`")))?;
                    if sizes.len() < b.sections.len() {
                        sizes.push(0);
                    }
                }
                ".global" => {
                    match cur.next() {
                        Some(Token::LabelRef(n)) => globals.push((line, n)),
                        _ => return Err(cur.err("expected symbol name")),
                    }
                    cur.end()?;
                }
                ".word" => {
                    let v = cur.value()?;
                    cur.end()?;
                    let size = if region == RegionKind::Iram { INSTRUCTION_BYTES } else { 4 };
                    stmts.push((line, b.current, sizes[b.current], Stmt::Word(v)));
                    sizes[b.current] += size;
                }
                ".space" => {
                    let n = match cur.next() {
                        Some(Token::Int(n)) if (0..=u32::MAX as i64).contains(&n) => n as u32,
                        _ => return Err(cur.err("expected byte count")),
                    };
                    cur.end()?;
                    if region == RegionKind::Iram && n % INSTRUCTION_BYTES != 0 {
                        return Err(sem(line, ".space in text must be a multiple of 6".into()));
                    }
                    stmts.push((line, b.current, sizes[b.current], Stmt::Space(n)));
                    sizes[b.current] += n;
                }
                other => return Err(sem(line, format!("undefined directive `{other}`"))),
            },
            Token::Ident(m) => {
                let op = Opcode::from_mnemonic(&m)
                    .ok_or_else(|| sem(line, format!("unknown mnemonic `{m}`")))?;
                if region != RegionKind::Iram {
                    return Err(sem(line, format!("instruction in {region} section")));
                }
                let operands = toks[cur.pos..].to_vec();
                stmts.push((line, b.current, sizes[b.current], Stmt::Instr { op, operands }));
                sizes[b.current] += INSTRUCTION_BYTES;
            }
            t => return Err(cur.err(format!("unexpected {t} at start of statement"))),
        }
    }
    for (line, name) in globals {
        match b.symbols.get_mut(&name) {
            Some(s) => s.global = true,
            None => return Err(sem(line, format!(".global of undefined symbol `{name}`"))),
        }
    }

    // Pass 2: encoding.
    for (i, s) in b.sections.iter_mut().enumerate() {
        s.data = Vec::with_capacity(sizes[i] as usize);
    }
    for (line, sec, offset, stmt) in stmts {
        let region = b.sections[sec].region;
        let reloc = |sym: String, kind: RelocKind, b: &mut Builder| {
            b.relocations.push(Relocation { section: sec, offset, symbol: sym, kind });
        };
        match stmt {
            Stmt::Space(n) => {
                let d = &mut b.sections[sec].data;
                d.resize(d.len() + n as usize, 0);
            }
            Stmt::Word(v) => {
                let raw = match v {
                    Value::Int(x) => x,
                    Value::Sym(s, k) => {
                        if region == RegionKind::Iram {
                            return Err(sem(line, "symbolic .word in text".into()));
                        }
                        reloc(s, k, &mut b);
                        0
                    }
                };
                let d = &mut b.sections[sec].data;
                if region == RegionKind::Iram {
                    if !(0..1 << 48).contains(&raw) {
                        return Err(sem(line, "instruction word exceeds 48 bits".into()));
                    }
                    d.extend_from_slice(&isa::word_to_bytes(raw as u64));
                } else {
                    if !(i32::MIN as i64..=u32::MAX as i64).contains(&raw) {
                        return Err(sem(line, "data word exceeds 32 bits".into()));
                    }
                    d.extend_from_slice(&(raw as u32).to_le_bytes());
                }
            }
            Stmt::Instr { op, operands } => {
                let mut cur = Cursor { toks: &operands, pos: 0, path, line };
                let (instr, sym) = parse_operands(op, &mut cur)?;
                cur.end()?;
                if let Err(v) = isa::validate(&instr) {
                    let msgs: Vec<String> = v.iter().map(|x| x.to_string()).collect();
                    return Err(sem(line, msgs.join("; ")));
                }
                if let Some((s, k)) = sym {
                    reloc(s, k, &mut b);
                }
                let word = isa::encode(&instr).map_err(|e| sem(line, e.to_string()))?;
                b.sections[sec].data.extend_from_slice(&isa::word_to_bytes(word));
            }
        }
    }

    Ok(ObjectFile {
        path: path.into(),
        sections: b.sections,
        symbols: b.symbols,
        relocations: b.relocations,
    })
}

fn imm_field(v: i64, cur: &Cursor, lo: i64, hi: i64) -> Result<i32, AsmError> {
    if (lo..=hi).contains(&v) {
        Ok(v as i32)
    } else {
        Err(cur.err(format!("immediate {v} out of range [{lo}, {hi}]")))
    }
}

const I29: (i64, i64) = (-(1 << 28), (1 << 28) - 1);

type Parsed = (Instruction, Option<(String, RelocKind)>);

fn parse_operands(op: Opcode, cur: &mut Cursor) -> Result<Parsed, AsmError> {
    let mut sym = None;
    let comma = |cur: &mut Cursor| cur.expect(Token::Comma, "`,`");
    let instr = match op.shape() {
        Shape::None => Instruction::new(op),
        Shape::Dst => Instruction::id(cur.reg()?),
        Shape::Binary => {
            let d = cur.reg()?;
            comma(cur)?;
            let a = cur.reg()?;
            comma(cur)?;
            let src2 = if let Some(Token::Reg(_)) = cur.peek() {
                Operand::Reg(cur.reg()?)
            } else {
                match cur.value()? {
                    Value::Int(v) => Operand::Imm(imm_field(v, cur, I29.0, I29.1)?),
                    Value::Sym(s, k) => {
                        sym = Some((s, k));
                        Operand::Imm(0)
                    }
                }
            };
            Instruction::binary(op, d, a, src2)
        }
        Shape::LoadImm => {
            let d = cur.reg()?;
            comma(cur)?;
            let v = match cur.value()? {
                Value::Int(v) => {
                    imm_field(v, cur, i32::MIN as i64, u32::MAX as i64)?;
                    v as u32 as i32
                }
                Value::Sym(s, k) => {
                    sym = Some((s, k));
                    0
                }
            };
            Instruction::movi(d, v)
        }
        Shape::Branch | Shape::Jump => {
            let regs = if op.shape() == Shape::Branch {
                let a = cur.reg()?;
                comma(cur)?;
                let b = cur.reg()?;
                comma(cur)?;
                Some((a, b))
            } else {
                None
            };
            let target = match cur.value()? {
                Value::Int(v) => {
                    let map = AddressMap::default();
                    if v < 0 || v > u32::MAX as i64 || !map.contains(RegionKind::Iram, v as u32, 1) {
                        return Err(cur.err(format!("branch target {v:#x} is not an IRAM address")));
                    }
                    (v & 0xffff) as i32
                }
                Value::Sym(s, _) => {
                    sym = Some((s, RelocKind::Lo16));
                    0
                }
            };
            match regs {
                Some((a, b)) => Instruction::branch(op, a, b, target),
                None => Instruction::jump(target),
            }
        }
        Shape::Load | Shape::Store => {
            let r = cur.reg()?;
            comma(cur)?;
            cur.expect(Token::LBracket, "`[`")?;
            let base = cur.reg()?;
            let mut off = 0;
            match cur.peek() {
                Some(Token::Plus) | Some(Token::Minus) => {
                    let neg = matches!(cur.next(), Some(Token::Minus));
                    match cur.value()? {
                        Value::Int(v) => {
                            off = imm_field(if neg { -v } else { v }, cur, I29.0, I29.1)?;
                        }
                        Value::Sym(s, k) => {
                            if neg {
                                return Err(cur.err("cannot subtract a symbol"));
                            }
                            sym = Some((s, k));
                        }
                    }
                }
                _ => {}
            }
            cur.expect(Token::RBracket, "`]`")?;
            if op.shape() == Shape::Load {
                Instruction::load(op, r, base, off)
            } else {
                Instruction::store(op, r, base, off)
            }
        }
        Shape::Dma => {
            let w = cur.reg()?;
            comma(cur)?;
            let m = cur.reg()?;
            comma(cur)?;
            let n = match cur.value()? {
                Value::Int(v) => imm_field(v, cur, I29.0, I29.1)?,
                Value::Sym(..) => return Err(cur.err("DMA size must be a literal")),
            };
            Instruction::dma(op, w, m, n)
        }
        Shape::Lock => {
            let n = match cur.value()? {
                Value::Int(v) => imm_field(v, cur, i32::MIN as i64, i32::MAX as i64)?,
                Value::Sym(..) => return Err(cur.err("lock index must be a literal")),
            };
            Instruction::lock(op, n)
        }
    };
    Ok((instr, sym))
}
