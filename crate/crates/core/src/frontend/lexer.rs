use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Relocation kinds understood by the linker.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RelocKind {
    /// Full 32-bit address.
    Abs32,
    /// Low 16 bits of the address.
    Lo16,
    /// High 16 bits of the address.
    Hi16,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Token {
    /// Mnemonic: the first bare word of a line.
    Ident(String),
    Reg(u8),
    Int(i64),
    LabelDef(String),
    LabelRef(String),
    Directive(String),
    Reloc(RelocKind, String),
    Comma,
    LBracket,
    RBracket,
    Plus,
    Minus,
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Ident(s) => write!(f, "[IDENT {s}]"),
            Token::Reg(r) => write!(f, "[REG {r}]"),
            Token::Int(i) => write!(f, "[INT {i}]"),
            Token::LabelDef(s) => write!(f, "[LABELDEF {s}]"),
            Token::LabelRef(s) => write!(f, "[LABELREF {s}]"),
            Token::Directive(s) => write!(f, "[DIRECTIVE {s}]"),
            Token::Reloc(k, s) => write!(f, "[RELOC {k:?} {s}]"),
            Token::Comma => f.write_str("[COMMA]"),
            Token::LBracket => f.write_str("[LBRACKET]"),
            Token::RBracket => f.write_str("[RBRACKET]"),
            Token::Plus => f.write_str("[PLUS]"),
            Token::Minus => f.write_str("[MINUS]"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpannedToken {
    pub token: Token,
    /// 1-based line number.
    pub line: usize,
    /// 1-based column of the first character.
    pub col: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("{line}:{col}: {msg}")]
pub struct LexError {
    pub line: usize,
    pub col: usize,
    pub msg: String,
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_' || c == '.'
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '.'
}

fn register_name(word: &str) -> Option<u8> {
    if word == "sp" {
        return Some(23);
    }
    let digits = word.strip_prefix('r')?;
    if digits.is_empty() || digits.len() > 2 || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    if digits.len() > 1 && digits.starts_with('0') {
        return None;
    }
    digits.parse::<u8>().ok().filter(|&n| n < 32)
}

fn parse_int(text: &str) -> Option<i64> {
    let t = text.replace('_', "");
    if let Some(h) = t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
        i64::from_str_radix(h, 16).ok()
    } else if let Some(b) = t.strip_prefix("0b").or_else(|| t.strip_prefix("0B")) {
        i64::from_str_radix(b, 2).ok()
    } else if !t.is_empty() && t.bytes().all(|b| b.is_ascii_digit()) {
        t.parse().ok()
    } else {
        None
    }
}

/// Split assembly text into tokens. Comments start with `;` or `#`.
pub fn tokenize(source: &str) -> Result<Vec<SpannedToken>, LexError> {
    let mut out = Vec::new();
    for (ln, raw) in source.lines().enumerate() {
        let line = ln + 1;
        let chars: Vec<char> = raw.chars().collect();
        let mut i = 0;
        let mut seen_word = false;
        while i < chars.len() {
            let c = chars[i];
            let col = i + 1;
            let push = |out: &mut Vec<SpannedToken>, token| out.push(SpannedToken { token, line, col });
            match c {
                ';' | '#' => break,
                c if c.is_whitespace() => i += 1,
                ',' => {
                    push(&mut out, Token::Comma);
                    i += 1;
                }
                '[' => {
                    push(&mut out, Token::LBracket);
                    i += 1;
                }
                ']' => {
                    push(&mut out, Token::RBracket);
                    i += 1;
                }
                '+' => {
                    push(&mut out, Token::Plus);
                    i += 1;
                }
                '-' => {
                    push(&mut out, Token::Minus);
                    i += 1;
                }
                c if c.is_ascii_digit() => {
                    let start = i;
                    while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                        i += 1;
                    }
                    let text: String = chars[start..i].iter().collect();
                    let v = parse_int(&text).ok_or_else(|| LexError {
                        line,
                        col,
                        msg: format!("malformed integer literal `{text}`"),
                    })?;
                    push(&mut out, Token::Int(v));
                }
                c if is_ident_start(c) => {
                    let start = i;
                    while i < chars.len() && is_ident_char(chars[i]) {
                        i += 1;
                    }
                    let word: String = chars[start..i].iter().collect();
                    if i < chars.len() && chars[i] == ':' {
                        i += 1;
                        push(&mut out, Token::LabelDef(word));
                        continue;
                    }
                    if (word == "lo16" || word == "hi16") && i < chars.len() && chars[i] == '(' {
                        let kind = if word == "lo16" { RelocKind::Lo16 } else { RelocKind::Hi16 };
                        let close = chars[i..].iter().position(|&c| c == ')').ok_or_else(|| {
                            LexError { line, col, msg: format!("unterminated `{word}(`") }
                        })?;
                        let name: String = chars[i + 1..i + close].iter().collect::<String>();
                        let name = name.trim().to_string();
                        if name.is_empty() || !name.chars().all(is_ident_char) {
                            return Err(LexError {
                                line,
                                col,
                                msg: format!("bad symbol in `{word}(...)`"),
                            });
                        }
                        i += close + 1;
                        push(&mut out, Token::Reloc(kind, name));
                        seen_word = true;
                        continue;
                    }
                    let token = if !seen_word && word.starts_with('.') {
                        Token::Directive(word)
                    } else if !seen_word {
                        Token::Ident(word)
                    } else if let Some(r) = register_name(&word) {
                        Token::Reg(r)
                    } else {
                        Token::LabelRef(word)
                    };
                    seen_word = true;
                    push(&mut out, token);
                }
                other => {
                    return Err(LexError {
                        line,
                        col,
                        msg: format!("illegal character `{other}`"),
                    })
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(src: &str) -> Vec<Token> {
        tokenize(src).unwrap().into_iter().map(|t| t.token).collect()
    }

    #[test]
    fn alu_line_with_comment() {
        assert_eq!(
            kinds("add r0, r1, 4 ; sum"),
            vec![
                Token::Ident("add".into()),
                Token::Reg(0),
                Token::Comma,
                Token::Reg(1),
                Token::Comma,
                Token::Int(4)
            ]
        );
    }

    #[test]
    fn label_definition_and_reference() {
        assert_eq!(
            kinds("loop: bne r2, r3, loop"),
            vec![
                Token::LabelDef("loop".into()),
                Token::Ident("bne".into()),
                Token::Reg(2),
                Token::Comma,
                Token::Reg(3),
                Token::Comma,
                Token::LabelRef("loop".into())
            ]
        );
    }

    #[test]
    fn malformed_literal() {
        let e = tokenize("ld r0, 0x1g").unwrap_err();
        assert_eq!((e.line, e.col), (1, 8));
    }

    #[test]
    fn illegal_character() {
        let e = tokenize("nop\n  add r0, r1, $3").unwrap_err();
        assert_eq!((e.line, e.col), (2, 15));
    }

    #[test]
    fn directives_memory_operands_and_relocs() {
        assert_eq!(
            kinds(".section wram.buf"),
            vec![Token::Directive(".section".into()), Token::LabelRef("wram.buf".into())]
        );
        assert_eq!(
            kinds("lw r1, [sp - 0x10]"),
            vec![
                Token::Ident("lw".into()),
                Token::Reg(1),
                Token::Comma,
                Token::LBracket,
                Token::Reg(23),
                Token::Minus,
                Token::Int(16),
                Token::RBracket
            ]
        );
        assert_eq!(
            kinds("movi r2, hi16(table)"),
            vec![
                Token::Ident("movi".into()),
                Token::Reg(2),
                Token::Comma,
                Token::Reloc(RelocKind::Hi16, "table".into())
            ]
        );
    }

    #[test]
    fn register_lookalikes_are_labels() {
        assert_eq!(kinds("jmp r99")[1], Token::LabelRef("r99".into()));
        assert_eq!(kinds("jmp r01")[1], Token::LabelRef("r01".into()));
        assert_eq!(kinds("jmp r31")[1], Token::Reg(31));
    }
}
