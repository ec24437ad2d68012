//! Parser for the listings' assembly subset.

use std::collections::BTreeMap;

use super::{Gpr, Insn, Mem, MiniProgram, ShiftCount, Xmm, XMM_REGISTERS};
use crate::msr::parse_hex_u64;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Operand {
    Xmm(Xmm),
    Gpr(Gpr),
    Imm(i64),
    Mem(Mem),
    Label(String),
}

fn parse_number(text: &str) -> Option<i64> {
    let (neg, body) = match text.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, text),
    };
    let value = if body.starts_with("0x") || body.starts_with("0X") {
        parse_hex_u64(body)? as i64
    } else {
        body.parse::<i64>().ok()?
    };
    Some(if neg { -value } else { value })
}

fn parse_register(name: &str) -> Result<Operand, String> {
    if let Some(n) = name.strip_prefix("xmm") {
        let n: u8 = n.parse().map_err(|_| format!("bad vector register %{name}"))?;
        if usize::from(n) >= XMM_REGISTERS {
            return Err(format!("vector register %{name} out of range"));
        }
        return Ok(Operand::Xmm(Xmm(n)));
    }
    Gpr::from_name(name)
        .map(Operand::Gpr)
        .ok_or_else(|| format!("unknown register %{name}"))
}

fn is_label_name(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c == '_' || c == '.' || c.is_ascii_alphabetic())
        && chars.all(|c| c == '_' || c == '.' || c.is_ascii_alphanumeric())
}

fn parse_operand(text: &str) -> Result<Operand, String> {
    let text = text.trim();
    if let Some(reg) = text.strip_prefix('%') {
        return parse_register(reg);
    }
    if let Some(imm) = text.strip_prefix('$') {
        return parse_number(imm)
            .map(Operand::Imm)
            .ok_or_else(|| format!("bad immediate {text}"));
    }
    if let Some(open) = text.find('(') {
        let inner = text[open + 1..]
            .strip_suffix(')')
            .ok_or_else(|| format!("unterminated memory operand {text}"))?;
        let base = match parse_register(inner.trim().trim_start_matches('%'))? {
            Operand::Gpr(g) if inner.trim().starts_with('%') => g,
            _ => return Err(format!("memory base must be a general register: {text}")),
        };
        let disp_text = text[..open].trim();
        let disp = if disp_text.is_empty() {
            0
        } else {
            parse_number(disp_text).ok_or_else(|| format!("bad displacement {disp_text}"))?
        };
        return Ok(Operand::Mem(Mem { base: Some(base), disp }));
    }
    if let Some(addr) = parse_number(text) {
        return Ok(Operand::Mem(Mem { base: None, disp: addr }));
    }
    if is_label_name(text) {
        return Ok(Operand::Label(text.to_string()));
    }
    Err(format!("cannot parse operand {text:?}"))
}

/// Instruction with branch targets still symbolic.
enum Pending {
    Ready(Insn),
    Branch {
        a: Xmm,
        b: Xmm,
        if_equal: bool,
        label: String,
    },
    Jump(String),
}

fn build(mnemonic: &str, ops: Vec<Operand>) -> Result<Pending, String> {
    use Operand as O;
    let arity = |n: usize| {
        if ops.len() == n {
            Ok(())
        } else {
            Err(format!("{mnemonic} takes {n} operand(s), got {}", ops.len()))
        }
    };
    let insn = match mnemonic {
        "vmovdqu" | "movdqu" => {
            arity(2)?;
            match (&ops[0], &ops[1]) {
                (O::Mem(m), O::Xmm(x)) => Insn::Load { src: *m, dst: *x },
                (O::Xmm(x), O::Mem(m)) => Insn::Store { src: *x, dst: *m },
                _ => return Err(format!("{mnemonic} needs one vector register and one memory operand")),
            }
        }
        "vpxor" | "vpand" | "vpaddq" => {
            arity(3)?;
            let (a, b, dst) = match (&ops[0], &ops[1], &ops[2]) {
                (O::Xmm(a), O::Xmm(b), O::Xmm(d)) => (*a, *b, *d),
                _ => return Err(format!("{mnemonic} takes three vector registers")),
            };
            match mnemonic {
                "vpxor" => Insn::Pxor { a, b, dst },
                "vpand" => Insn::Pand { a, b, dst },
                _ => Insn::Paddq { a, b, dst },
            }
        }
        "vpsllq" => {
            arity(3)?;
            let count = match &ops[0] {
                O::Xmm(x) => ShiftCount::Reg(*x),
                O::Imm(n) if (0..=255).contains(n) => ShiftCount::Imm(*n as u8),
                _ => return Err("vpsllq count must be a vector register or $imm8".into()),
            };
            match (&ops[1], &ops[2]) {
                (O::Xmm(src), O::Xmm(dst)) => Insn::Psllq {
                    count,
                    src: *src,
                    dst: *dst,
                },
                _ => return Err("vpsllq source and destination must be vector registers".into()),
            }
        }
        "movntdq" | "vmovntdq" => {
            arity(2)?;
            match (&ops[0], &ops[1]) {
                (O::Xmm(x), O::Mem(m)) => Insn::StoreNt { src: *x, dst: *m },
                _ => return Err(format!("{mnemonic} stores a vector register to memory")),
            }
        }
        "sfence" => {
            arity(0)?;
            Insn::Sfence
        }
        "push" | "pushq" | "pop" | "popq" => {
            arity(1)?;
            let O::Gpr(r) = ops[0] else {
                return Err(format!("{mnemonic} takes a general register"));
            };
            if mnemonic.starts_with("push") {
                Insn::Push(r)
            } else {
                Insn::Pop(r)
            }
        }
        "cmpje" | "cmpjne" => {
            arity(3)?;
            match (&ops[0], &ops[1], &ops[2]) {
                (O::Xmm(a), O::Xmm(b), O::Label(l)) => {
                    return Ok(Pending::Branch {
                        a: *a,
                        b: *b,
                        if_equal: mnemonic == "cmpje",
                        label: l.clone(),
                    })
                }
                _ => return Err(format!("{mnemonic} takes two vector registers and a label")),
            }
        }
        "jmp" => {
            arity(1)?;
            let O::Label(l) = &ops[0] else {
                return Err("jmp takes a label".into());
            };
            return Ok(Pending::Jump(l.clone()));
        }
        "halt" | "hlt" => {
            arity(0)?;
            Insn::Halt
        }
        other => return Err(format!("unknown mnemonic {other:?}")),
    };
    Ok(Pending::Ready(insn))
}

fn strip_comment(line: &str) -> &str {
    let cut = [line.find("//"), line.find('#')].into_iter().flatten().min();
    match cut {
        Some(i) => &line[..i],
        None => line,
    }
}

/// Parses program text. Comments start with `//` or `#`, a trailing `;`
/// is ignored, and `name:` defines a label.
pub fn parse_program(text: &str) -> Result<MiniProgram, ParseError> {
    let mut pending: Vec<(usize, Pending)> = Vec::new();
    let mut labels = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let err = |message: String| ParseError { line: line_no, message };
        let mut line = strip_comment(raw).trim();
        line = line.strip_suffix(';').unwrap_or(line).trim();
        while let Some(colon) = line.find(':') {
            let name = line[..colon].trim();
            if !is_label_name(name) {
                return Err(err(format!("bad label {name:?}")));
            }
            if labels.insert(name.to_string(), pending.len()).is_some() {
                return Err(err(format!("label {name} defined twice")));
            }
            line = line[colon + 1..].trim();
        }
        if line.is_empty() {
            continue;
        }
        let (mnemonic, rest) = match line.find(char::is_whitespace) {
            Some(sp) => (&line[..sp], line[sp..].trim()),
            None => (line, ""),
        };
        let ops = if rest.is_empty() {
            Vec::new()
        } else {
            rest.split(',')
                .map(parse_operand)
                .collect::<Result<_, _>>()
                .map_err(err)?
        };
        pending.push((line_no, build(&mnemonic.to_ascii_lowercase(), ops).map_err(err)?));
    }
    let resolve = |line: usize, label: &str| {
        labels.get(label).copied().ok_or_else(|| ParseError {
            line,
            message: format!("undefined label {label}"),
        })
    };
    let insns = pending
        .into_iter()
        .map(|(line, p)| {
            Ok(match p {
                Pending::Ready(insn) => insn,
                Pending::Branch { a, b, if_equal, label } => Insn::CmpBranch {
                    a,
                    b,
                    if_equal,
                    target: resolve(line, &label)?,
                },
                Pending::Jump(label) => Insn::Jmp {
                    target: resolve(line, &label)?,
                },
            })
        })
        .collect::<Result<Vec<_>, ParseError>>()?;
    Ok(MiniProgram { insns, labels })
}
