//! Offline search for fault-susceptible vector patterns.
//!
//! VP1 is a parallel logic operation (`vpxor`, `vpand`) and VP2 a parallel
//! add (`vpaddq`), each followed within [`MAX_GAP`] instructions by a
//! 128-bit store of its destination register.

use serde::Serialize;

use crate::isa::{self, ExecError, ExecHook, Halt, Insn, Machine, MiniProgram, StoreEvent};

/// Largest number of instructions allowed between the vector operation and
/// its store.
pub const MAX_GAP: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum PatternKind {
    #[serde(rename = "VP1")]
    Vp1,
    #[serde(rename = "VP2")]
    Vp2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct PatternHit {
    pub kind: PatternKind,
    pub op_index: usize,
    pub store_index: usize,
    pub gap: usize,
}

pub fn pattern_kind(insn: &Insn) -> Option<PatternKind> {
    match insn {
        Insn::Pxor { .. } | Insn::Pand { .. } => Some(PatternKind::Vp1),
        Insn::Paddq { .. } => Some(PatternKind::Vp2),
        _ => None,
    }
}

/// All pattern hits in program order. A store counts when it moves the
/// operation's destination and no instruction in between rewrote it.
pub fn scan(program: &MiniProgram) -> Vec<PatternHit> {
    let insns = &program.insns;
    let mut hits = Vec::new();
    for (i, insn) in insns.iter().enumerate() {
        let (Some(kind), Some(dst)) = (pattern_kind(insn), insn.vector_dest()) else {
            continue;
        };
        for (j, next) in insns.iter().enumerate().take(i + 2 + MAX_GAP).skip(i + 1) {
            if next.stored_register() == Some(dst) {
                hits.push(PatternHit {
                    kind,
                    op_index: i,
                    store_index: j,
                    gap: j - i - 1,
                });
            }
            if next.vector_dest() == Some(dst) {
                break;
            }
        }
    }
    hits
}

/// Per-instruction flags marking the stores of any hit.
pub fn eligible_stores(program: &MiniProgram, hits: &[PatternHit]) -> Vec<bool> {
    let mut flags = vec![false; program.len()];
    for h in hits {
        flags[h.store_index] = true;
    }
    flags
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct WindowEstimate {
    /// Slice of the first execution of the hit's store, if it ever runs.
    pub first_slice: Option<u64>,
    pub last_slice: Option<u64>,
    /// Executions of the store across all iterations.
    pub duration_slices: u64,
    /// Slices for all iterations.
    pub total_slices: u64,
}

/// Interprets the program `iterations` times back to back from the same
/// input and traces when the store of `hit` executes.
pub fn estimate_window(
    program: &MiniProgram,
    hit: &PatternHit,
    memory_in: &[u8],
    iterations: u64,
) -> Result<WindowEstimate, ExecError> {
    struct Trace {
        first: Option<u64>,
        last: Option<u64>,
        count: u64,
    }
    impl ExecHook for Trace {
        fn on_slice(&mut self, slice: u64, store: Option<&mut StoreEvent>) -> Result<(), Halt> {
            if store.is_some() {
                self.first.get_or_insert(slice);
                self.last = Some(slice);
                self.count += 1;
            }
            Ok(())
        }
    }
    let mut only = vec![false; program.len()];
    only[hit.store_index] = true;
    let mut trace = Trace {
        first: None,
        last: None,
        count: 0,
    };
    let mut slice = 0;
    for _ in 0..iterations {
        let mut m = Machine::new(memory_in.to_vec());
        slice += isa::run(program, &only, &mut m, &mut trace, slice, isa::DEFAULT_STEP_LIMIT)?.slices;
    }
    Ok(WindowEstimate {
        first_slice: trace.first,
        last_slice: trace.last,
        duration_slices: trace.count,
        total_slices: slice,
    })
}
