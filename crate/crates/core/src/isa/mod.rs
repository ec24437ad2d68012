//! A small AT&T-flavoured vector ISA, just large enough to run the victim,
//! test and stressor programs.

mod interp;
mod parse;

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

pub use interp::{
    interpret, run, ExecError, ExecHook, Halt, Machine, NoFaults, RunSummary, StoreEvent, DEFAULT_STEP_LIMIT,
};
pub use parse::{parse_program, ParseError};

pub const XMM_REGISTERS: usize = 16;
pub const GPR_REGISTERS: usize = 16;

/// 128-bit vector register `%xmmN`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Xmm(pub u8);

/// 64-bit general purpose register, numbered like the hardware encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Gpr(pub u8);

const GPR_NAMES: [&str; GPR_REGISTERS] = [
    "rax", "rcx", "rdx", "rbx", "rsp", "rbp", "rsi", "rdi", "r8", "r9", "r10", "r11", "r12", "r13", "r14", "r15",
];

impl Gpr {
    pub const RSP: Gpr = Gpr(4);

    pub fn from_name(name: &str) -> Option<Self> {
        GPR_NAMES.iter().position(|n| *n == name).map(|i| Gpr(i as u8))
    }

    pub fn name(self) -> &'static str {
        GPR_NAMES[usize::from(self.0)]
    }
}

impl fmt::Display for Xmm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "%xmm{}", self.0)
    }
}

impl fmt::Display for Gpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "%{}", self.name())
    }
}

/// `disp(%base)` or an absolute address when `base` is `None`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct Mem {
    pub base: Option<Gpr>,
    pub disp: i64,
}

impl fmt::Display for Mem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.base, self.disp) {
            (None, d) if d < 0 => write!(f, "-{:#x}", -d),
            (None, d) => write!(f, "{d:#x}"),
            (Some(b), 0) => write!(f, "({b})"),
            (Some(b), d) => write!(f, "{d}({b})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum ShiftCount {
    Reg(Xmm),
    Imm(u8),
}

impl fmt::Display for ShiftCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ShiftCount::Reg(x) => x.fmt(f),
            ShiftCount::Imm(n) => write!(f, "${n}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Opcode {
    VmovdquLoad,
    VmovdquStore,
    Vpxor,
    Vpand,
    Vpaddq,
    Vpsllq,
    MovntStore,
    Sfence,
    Push,
    Pop,
    CmpBranch,
    Jmp,
    Halt,
}

/// Operand order follows AT&T: sources first, destination last.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Insn {
    Load {
        src: Mem,
        dst: Xmm,
    },
    Store {
        src: Xmm,
        dst: Mem,
    },
    Pxor {
        a: Xmm,
        b: Xmm,
        dst: Xmm,
    },
    Pand {
        a: Xmm,
        b: Xmm,
        dst: Xmm,
    },
    Paddq {
        a: Xmm,
        b: Xmm,
        dst: Xmm,
    },
    Psllq {
        count: ShiftCount,
        src: Xmm,
        dst: Xmm,
    },
    StoreNt {
        src: Xmm,
        dst: Mem,
    },
    Sfence,
    Push(Gpr),
    Pop(Gpr),
    /// `cmpje`/`cmpjne %xmmA, %xmmB, label`: compare two vector registers
    /// and branch on equality or inequality.
    CmpBranch {
        a: Xmm,
        b: Xmm,
        if_equal: bool,
        target: usize,
    },
    Jmp {
        target: usize,
    },
    Halt,
}

impl Insn {
    pub fn opcode(&self) -> Opcode {
        match self {
            Insn::Load { .. } => Opcode::VmovdquLoad,
            Insn::Store { .. } => Opcode::VmovdquStore,
            Insn::Pxor { .. } => Opcode::Vpxor,
            Insn::Pand { .. } => Opcode::Vpand,
            Insn::Paddq { .. } => Opcode::Vpaddq,
            Insn::Psllq { .. } => Opcode::Vpsllq,
            Insn::StoreNt { .. } => Opcode::MovntStore,
            Insn::Sfence => Opcode::Sfence,
            Insn::Push(_) => Opcode::Push,
            Insn::Pop(_) => Opcode::Pop,
            Insn::CmpBranch { .. } => Opcode::CmpBranch,
            Insn::Jmp { .. } => Opcode::Jmp,
            Insn::Halt => Opcode::Halt,
        }
    }

    /// Vector register written by this instruction.
    pub fn vector_dest(&self) -> Option<Xmm> {
        match *self {
            Insn::Load { dst, .. }
            | Insn::Pxor { dst, .. }
            | Insn::Pand { dst, .. }
            | Insn::Paddq { dst, .. }
            | Insn::Psllq { dst, .. } => Some(dst),
            _ => None,
        }
    }

    /// Register moved to memory by a 128-bit store.
    pub fn stored_register(&self) -> Option<Xmm> {
        match *self {
            Insn::Store { src, .. } | Insn::StoreNt { src, .. } => Some(src),
            _ => None,
        }
    }

    pub fn is_vector_store(&self) -> bool {
        self.stored_register().is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MiniProgram {
    pub insns: Vec<Insn>,
    /// Label name to the index of the instruction it precedes (may equal
    /// `insns.len()` for a label at the end).
    pub labels: BTreeMap<String, usize>,
}

impl MiniProgram {
    pub fn len(&self) -> usize {
        self.insns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.insns.is_empty()
    }

    fn label_at(&self, index: usize) -> impl Iterator<Item = &str> {
        self.labels
            .iter()
            .filter(move |(_, i)| **i == index)
            .map(|(n, _)| n.as_str())
    }

    fn target_name(&self, index: usize) -> String {
        self.label_at(index)
            .next()
            .map(str::to_owned)
            .unwrap_or_else(|| format!("_L{index}"))
    }

    fn fmt_insn(&self, insn: &Insn, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match insn {
            Insn::Load { src, dst } => write!(f, "vmovdqu {src}, {dst}"),
            Insn::Store { src, dst } => write!(f, "vmovdqu {src}, {dst}"),
            Insn::Pxor { a, b, dst } => write!(f, "vpxor {a}, {b}, {dst}"),
            Insn::Pand { a, b, dst } => write!(f, "vpand {a}, {b}, {dst}"),
            Insn::Paddq { a, b, dst } => write!(f, "vpaddq {a}, {b}, {dst}"),
            Insn::Psllq { count, src, dst } => write!(f, "vpsllq {count}, {src}, {dst}"),
            Insn::StoreNt { src, dst } => write!(f, "movntdq {src}, {dst}"),
            Insn::Sfence => f.write_str("sfence"),
            Insn::Push(r) => write!(f, "push {r}"),
            Insn::Pop(r) => write!(f, "pop {r}"),
            Insn::CmpBranch { a, b, if_equal, target } => {
                let m = if *if_equal { "cmpje" } else { "cmpjne" };
                write!(f, "{m} {a}, {b}, {}", self.target_name(*target))
            }
            Insn::Jmp { target } => write!(f, "jmp {}", self.target_name(*target)),
            Insn::Halt => f.write_str("halt"),
        }
    }
}

/// Prints the program back in the accepted source syntax. Branch targets
/// without a label get a synthetic `_L<index>` name.
impl fmt::Display for MiniProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut synthetic = std::collections::BTreeSet::new();
        for insn in &self.insns {
            if let Insn::CmpBranch { target, .. } | Insn::Jmp { target } = insn {
                if self.label_at(*target).next().is_none() {
                    synthetic.insert(*target);
                }
            }
        }
        for i in 0..=self.insns.len() {
            for name in self.label_at(i) {
                writeln!(f, "{name}:")?;
            }
            if synthetic.contains(&i) {
                writeln!(f, "_L{i}:")?;
            }
            if let Some(insn) = self.insns.get(i) {
                f.write_str("    ")?;
                self.fmt_insn(insn, f)?;
                f.write_str("\n")?;
            }
        }
        Ok(())
    }
}
