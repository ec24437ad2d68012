//! Reference interpreter. One executed instruction costs one time slice.

use super::{Gpr, Insn, Mem, MiniProgram, ShiftCount, Xmm, GPR_REGISTERS, XMM_REGISTERS};
use crate::mca::ProcessorException;
use crate::processor::CrashKind;

pub const DEFAULT_STEP_LIMIT: u64 = 1_000_000;

/// Reason a run was stopped from outside the program.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Halt {
    Crash(CrashKind),
    Exception(ProcessorException),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExecError {
    #[error("stopped at slice {slice}: {halt:?}")]
    Stopped { slice: u64, halt: Halt },
    #[error("access to {addr:#x} (+{len}) outside memory")]
    GeneralProtection { addr: i64, len: usize },
    #[error("step limit of {0} slices reached")]
    StepLimit(u64),
}

impl ExecError {
    /// Processor-visible exception, if this error is one.
    pub fn exception(&self) -> Option<ProcessorException> {
        match self {
            ExecError::Stopped {
                halt: Halt::Exception(e),
                ..
            } => Some(*e),
            ExecError::GeneralProtection { .. } => Some(ProcessorException::GeneralProtection),
            _ => None,
        }
    }
}

/// A store of a vector register that the fault model may corrupt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StoreEvent {
    pub pc: usize,
    /// `address / 16`.
    pub word_index: u64,
    pub value: u128,
}

/// Observer called once per slice, before the instruction's effect is
/// committed. Eligible stores are passed mutably so the hook can corrupt
/// the value written.
pub trait ExecHook {
    fn on_slice(&mut self, slice: u64, store: Option<&mut StoreEvent>) -> Result<(), Halt>;
}

/// Hook for fault-free execution.
pub struct NoFaults;

impl ExecHook for NoFaults {
    fn on_slice(&mut self, _: u64, _: Option<&mut StoreEvent>) -> Result<(), Halt> {
        Ok(())
    }
}

impl<F: FnMut(u64, Option<&mut StoreEvent>) -> Result<(), Halt>> ExecHook for F {
    fn on_slice(&mut self, slice: u64, store: Option<&mut StoreEvent>) -> Result<(), Halt> {
        self(slice, store)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Machine {
    pub xmm: [u128; XMM_REGISTERS],
    pub gpr: [u64; GPR_REGISTERS],
    pub mem: Vec<u8>,
}

impl Machine {
    /// Zeroed registers; `%rsp` points 64 bytes below the end of memory.
    pub fn new(mem: Vec<u8>) -> Self {
        let mut gpr = [0u64; GPR_REGISTERS];
        gpr[usize::from(Gpr::RSP.0)] = mem.len().saturating_sub(64) as u64;
        Machine {
            xmm: [0; XMM_REGISTERS],
            gpr,
            mem,
        }
    }

    fn x(&self, r: Xmm) -> u128 {
        self.xmm[usize::from(r.0)]
    }

    fn g(&self, r: Gpr) -> u64 {
        self.gpr[usize::from(r.0)]
    }

    fn address(&self, m: &Mem) -> i64 {
        m.base.map_or(0, |b| self.g(b) as i64).wrapping_add(m.disp)
    }

    fn range(&self, addr: i64, len: usize) -> Result<std::ops::Range<usize>, ExecError> {
        let start = usize::try_from(addr).map_err(|_| ExecError::GeneralProtection { addr, len })?;
        match start.checked_add(len) {
            Some(end) if end <= self.mem.len() => Ok(start..end),
            _ => Err(ExecError::GeneralProtection { addr, len }),
        }
    }

    pub fn read_u128(&self, addr: i64) -> Result<u128, ExecError> {
        let r = self.range(addr, 16)?;
        Ok(u128::from_le_bytes(self.mem[r].try_into().expect("16 bytes")))
    }

    pub fn write_u128(&mut self, addr: i64, value: u128) -> Result<(), ExecError> {
        let r = self.range(addr, 16)?;
        self.mem[r].copy_from_slice(&value.to_le_bytes());
        Ok(())
    }

    fn read_u64(&self, addr: i64) -> Result<u64, ExecError> {
        let r = self.range(addr, 8)?;
        Ok(u64::from_le_bytes(self.mem[r].try_into().expect("8 bytes")))
    }

    fn write_u64(&mut self, addr: i64, value: u64) -> Result<(), ExecError> {
        let r = self.range(addr, 8)?;
        self.mem[r].copy_from_slice(&value.to_le_bytes());
        Ok(())
    }
}

fn lanes(v: u128) -> [u64; 2] {
    [v as u64, (v >> 64) as u64]
}

fn join(l: [u64; 2]) -> u128 {
    u128::from(l[0]) | (u128::from(l[1]) << 64)
}

fn paddq(a: u128, b: u128) -> u128 {
    let (a, b) = (lanes(a), lanes(b));
    join([a[0].wrapping_add(b[0]), a[1].wrapping_add(b[1])])
}

fn psllq(v: u128, count: u64) -> u128 {
    if count > 63 {
        return 0;
    }
    let l = lanes(v);
    join([l[0] << count, l[1] << count])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunSummary {
    /// Slices (executed instructions) consumed by this run.
    pub slices: u64,
}

/// Executes `program` on `machine` from instruction 0. Slices are numbered
/// from `first_slice`; stores whose index is flagged in `eligible` are
/// offered to the hook for corruption. Running off the end halts.
pub fn run<H: ExecHook + ?Sized>(
    program: &MiniProgram,
    eligible: &[bool],
    machine: &mut Machine,
    hook: &mut H,
    first_slice: u64,
    step_limit: u64,
) -> Result<RunSummary, ExecError> {
    let mut pc = 0usize;
    let mut executed = 0u64;
    while let Some(insn) = program.insns.get(pc) {
        if executed >= step_limit {
            return Err(ExecError::StepLimit(step_limit));
        }
        let slice = first_slice + executed;
        executed += 1;
        let stop = |halt| ExecError::Stopped { slice, halt };
        let mut next = pc + 1;
        match insn {
            Insn::Store { src, dst } | Insn::StoreNt { src, dst } => {
                let addr = machine.address(dst);
                let mut event = StoreEvent {
                    pc,
                    word_index: (addr.max(0) as u64) / 16,
                    value: machine.x(*src),
                };
                if eligible.get(pc).copied().unwrap_or(false) {
                    hook.on_slice(slice, Some(&mut event)).map_err(stop)?;
                } else {
                    hook.on_slice(slice, None).map_err(stop)?;
                }
                machine.write_u128(addr, event.value)?;
            }
            other => {
                hook.on_slice(slice, None).map_err(stop)?;
                match other {
                    Insn::Load { src, dst } => {
                        let v = machine.read_u128(machine.address(src))?;
                        machine.xmm[usize::from(dst.0)] = v;
                    }
                    Insn::Pxor { a, b, dst } => machine.xmm[usize::from(dst.0)] = machine.x(*a) ^ machine.x(*b),
                    Insn::Pand { a, b, dst } => machine.xmm[usize::from(dst.0)] = machine.x(*a) & machine.x(*b),
                    Insn::Paddq { a, b, dst } => machine.xmm[usize::from(dst.0)] = paddq(machine.x(*a), machine.x(*b)),
                    Insn::Psllq { count, src, dst } => {
                        let n = match count {
                            ShiftCount::Reg(r) => machine.x(*r) as u64,
                            ShiftCount::Imm(n) => u64::from(*n),
                        };
                        machine.xmm[usize::from(dst.0)] = psllq(machine.x(*src), n);
                    }
                    Insn::Sfence => {}
                    Insn::Push(r) => {
                        let sp = machine.g(Gpr::RSP).wrapping_sub(8);
                        machine.write_u64(sp as i64, machine.g(*r))?;
                        machine.gpr[usize::from(Gpr::RSP.0)] = sp;
                    }
                    Insn::Pop(r) => {
                        let sp = machine.g(Gpr::RSP);
                        let v = machine.read_u64(sp as i64)?;
                        machine.gpr[usize::from(Gpr::RSP.0)] = sp.wrapping_add(8);
                        machine.gpr[usize::from(r.0)] = v;
                    }
                    Insn::CmpBranch { a, b, if_equal, target } => {
                        if (machine.x(*a) == machine.x(*b)) == *if_equal {
                            next = *target;
                        }
                    }
                    Insn::Jmp { target } => next = *target,
                    Insn::Halt => break,
                    Insn::Store { .. } | Insn::StoreNt { .. } => unreachable!(),
                }
            }
        }
        pc = next;
    }
    Ok(RunSummary { slices: executed })
}

/// Fault-free execution: a pure function of the program and input memory.
pub fn interpret(program: &MiniProgram, memory_in: &[u8]) -> Result<Vec<u8>, ExecError> {
    let mut m = Machine::new(memory_in.to_vec());
    run(program, &[], &mut m, &mut NoFaults, 0, DEFAULT_STEP_LIMIT)?;
    Ok(m.mem)
}
