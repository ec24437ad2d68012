//! Bundled mini-ISA programs and their input memory images.

use crate::isa::{parse_program, MiniProgram, ParseError};
use crate::scanner::{eligible_stores, scan, PatternHit};

pub const MEMORY_BYTES: usize = 4096;

/// Where the PoC program leaves its recovery marker.
pub const POC_MARKER_ADDR: usize = 0x60;
pub const TEST_OUTPUT_ADDR: usize = 0x20;

const SOURCES: [(&str, &str); 5] = [
    ("listing1_xor", include_str!("../../programs/listing1_xor.s")),
    ("listing1_add", include_str!("../../programs/listing1_add.s")),
    ("listing2_stressor", include_str!("../../programs/listing2_stressor.s")),
    ("listing3", include_str!("../../programs/listing3.s")),
    ("listing4_poc", include_str!("../../programs/listing4_poc.s")),
];

pub fn bundled_program_names() -> impl Iterator<Item = &'static str> {
    SOURCES.iter().map(|(n, _)| *n)
}

pub fn bundled_source(name: &str) -> Option<&'static str> {
    SOURCES.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn bundled_program(name: &str) -> Option<MiniProgram> {
    bundled_source(name).map(|s| parse_program(s).expect("bundled programs parse"))
}

fn put(mem: &mut [u8], addr: usize, value: u128) {
    mem[addr..addr + 16].copy_from_slice(&value.to_le_bytes());
}

/// Fixed input for the test-loop programs: two operands at 0x00 and 0x10.
pub fn test_loop_memory() -> Vec<u8> {
    let mut mem = vec![0; MEMORY_BYTES];
    put(&mut mem, 0x00, 0x0123_4567_89AB_CDEF_FEDC_BA98_7654_3210);
    put(&mut mem, 0x10, 0x0F1E_2D3C_4B5A_6978_8796_A5B4_C3D2_E1F0);
    mem
}

/// Input for one enclave call: `a = b = ULLONG_MAX` pairs, a zero counter,
/// increment 1 and the per-call iteration count.
pub fn poc_memory(iterations: u64) -> Vec<u8> {
    let mut mem = vec![0; MEMORY_BYTES];
    put(&mut mem, 0x00, u128::MAX);
    put(&mut mem, 0x10, u128::MAX);
    put(&mut mem, 0x30, 0);
    put(&mut mem, 0x40, 1);
    put(&mut mem, 0x50, u128::from(iterations));
    mem
}

/// A program ready to run under fault injection: its pattern hits and
/// the stores those hits make eligible.
#[derive(Debug, Clone)]
pub struct VictimProgram {
    pub program: MiniProgram,
    pub hits: Vec<PatternHit>,
    pub eligible: Vec<bool>,
    pub memory: Vec<u8>,
}

impl VictimProgram {
    pub fn new(program: MiniProgram, memory: Vec<u8>) -> Self {
        let hits = scan(&program);
        let eligible = eligible_stores(&program, &hits);
        VictimProgram {
            program,
            hits,
            eligible,
            memory,
        }
    }

    pub fn parse(text: &str, memory: Vec<u8>) -> Result<Self, ParseError> {
        Ok(Self::new(parse_program(text)?, memory))
    }

    pub fn test_loop_xor() -> Self {
        Self::new(bundled_program("listing1_xor").expect("bundled"), test_loop_memory())
    }

    pub fn test_loop_add() -> Self {
        Self::new(bundled_program("listing1_add").expect("bundled"), test_loop_memory())
    }

    pub fn poc() -> Self {
        Self::new(
            bundled_program("listing4_poc").expect("bundled"),
            poc_memory(crate::scenario::POC_ITERATIONS_PER_CALL as u64),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::interpret;
    use crate::scanner::PatternKind;

    #[test]
    fn every_bundled_program_parses() {
        for name in bundled_program_names() {
            assert!(bundled_program(name).is_some(), "{name}");
        }
    }

    #[test]
    fn hits_of_bundled_programs() {
        let kinds = |name| {
            scan(&bundled_program(name).unwrap())
                .iter()
                .map(|h| h.kind)
                .collect::<Vec<_>>()
        };
        assert_eq!(kinds("listing1_xor"), vec![PatternKind::Vp1]);
        assert_eq!(kinds("listing1_add"), vec![PatternKind::Vp2]);
        assert_eq!(kinds("listing3"), vec![PatternKind::Vp1]);
        assert_eq!(kinds("listing4_poc"), vec![PatternKind::Vp1]);
        assert!(kinds("listing2_stressor").is_empty());
    }

    #[test]
    fn poc_takes_the_normal_branch_without_faults() {
        let v = VictimProgram::poc();
        let out = interpret(&v.program, &v.memory).unwrap();
        assert_eq!(out[POC_MARKER_ADDR..POC_MARKER_ADDR + 16], [0; 16]);
        assert_eq!(out[0x20..0x30], [0xFF; 16]);
    }

    #[test]
    fn test_loop_programs_compute_their_operation() {
        let v = VictimProgram::test_loop_xor();
        let out = interpret(&v.program, &v.memory).unwrap();
        let word = |m: &[u8], a: usize| u128::from_le_bytes(m[a..a + 16].try_into().unwrap());
        assert_eq!(word(&out, TEST_OUTPUT_ADDR), word(&out, 0) ^ word(&out, 0x10));
    }
}
