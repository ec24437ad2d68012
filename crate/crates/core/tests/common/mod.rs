//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use undervolt_lab::isa::{Gpr, Insn, Mem, MiniProgram, ShiftCount, Xmm};
use undervolt_lab::scanner::{PatternHit, PatternKind};

/// Fault-prone voltage levels of the i7-7700K: ratio, measurement
/// temperature, then cores 0 to 3.
pub const FAULT_LEVELS_7700K: [(u8, f64, [f64; 4]); 6] = [
    (0x08, 32.0, [0.540, 0.545, 0.535, 0.545]),
    (0x10, 33.0, [0.585, 0.585, 0.580, 0.585]),
    (0x1B, 37.0, [0.700, 0.710, 0.705, 0.705]),
    (0x20, 41.0, [0.765, 0.775, 0.770, 0.775]),
    (0x24, 42.0, [0.825, 0.835, 0.835, 0.835]),
    (0x2A, 50.0, [0.930, 0.935, 0.930, 0.935]),
];

/// Published flip-count breakdown of 1000 faults: model, core, then one,
/// two and three-or-more flipped bits.
pub const FLIP_COUNTS: [(&str, usize, [u64; 3]); 14] = [
    ("i7-7700", 0, [905, 83, 12]),
    ("i7-7700", 1, [709, 199, 92]),
    ("i7-7700", 2, [405, 444, 151]),
    ("i7-7700", 3, [855, 122, 23]),
    ("i7-7700K", 0, [934, 66, 0]),
    ("i7-7700K", 1, [988, 7, 5]),
    ("i7-7700K", 2, [912, 67, 21]),
    ("i7-7700K", 3, [997, 3, 0]),
    ("i7-8700K", 0, [942, 32, 26]),
    ("i7-8700K", 1, [2, 0, 998]),
    ("i7-8700K", 2, [589, 275, 136]),
    ("i7-8700K", 3, [999, 1, 0]),
    ("i7-8700K", 4, [586, 410, 4]),
    ("i7-8700K", 5, [614, 239, 147]),
];

/// Published HMAC attack cells: model, core, payload bytes, successes per
/// 10 000 tries.
pub const HMAC_CELLS: [(&str, usize, usize, f64); 4] = [
    ("i7-8700K", 0, 32, 9621.6),
    ("i7-7700K", 1, 32, 1795.6),
    ("i7-7700K", 1, 1024, 1983.8),
    ("i7-8700K", 3, 32, 0.0),
];

/// Mailbox word assembled field by field from the register layout.
/// `payload` is `Ok(mv)` for offset mode, `Err(units)` for static mode.
pub fn mailbox_word(domain: u64, command: u64, payload: Result<i16, u16>) -> u64 {
    let body = match payload {
        Ok(mv) => {
            let field = if mv < 0 { 2048 + i64::from(mv) } else { i64::from(mv) } as u64;
            field << 21
        }
        Err(units) => (1 << 20) | (u64::from(units) << 8),
    };
    (1 << 63) | (domain << 40) | (command << 32) | body
}

pub fn sha256(data: &[u8]) -> [u8; 32] {
    Sha256::digest(data).as_slice().try_into().unwrap()
}

/// HMAC built from its definition on top of the reference hash.
pub fn hmac(key: &[u8], msg: &[u8]) -> [u8; 32] {
    let mut k0 = [0u8; 64];
    if key.len() > 64 {
        k0[..32].copy_from_slice(&sha256(key));
    } else {
        k0[..key.len()].copy_from_slice(key);
    }
    let mut inner: Vec<u8> = k0.iter().map(|b| b ^ 0x36).collect();
    inner.extend_from_slice(msg);
    let mut outer: Vec<u8> = k0.iter().map(|b| b ^ 0x5c).collect();
    outer.extend_from_slice(&sha256(&inner));
    sha256(&outer)
}

/// Key, message and MAC for RFC 4231 cases 1 to 4, 6 and 7.
pub fn rfc4231() -> Vec<(Vec<u8>, Vec<u8>, &'static str)> {
    vec![
        (
            vec![0x0b; 20],
            b"Hi There".to_vec(),
            "b0344c61d8db38535ca8afceaf0bf12b881dc200c9833da726e9376c2e32cff7",
        ),
        (
            b"Jefe".to_vec(),
            b"what do ya want for nothing?".to_vec(),
            "5bdcc146bf60754e6a042426089575c75a003f089d2739839dec58b964ec3843",
        ),
        (
            vec![0xaa; 20],
            vec![0xdd; 50],
            "773ea91e36800e46854db8ebd09181a72959098b3ef8c122d9635514ced565fe",
        ),
        (
            hex::decode("0102030405060708090a0b0c0d0e0f10111213141516171819").unwrap(),
            vec![0xcd; 50],
            "82558a389a443c0ea4cc819899f2083a85f0faa3e578f8077a2e3ff46729665b",
        ),
        (
            vec![0xaa; 131],
            b"Test Using Larger Than Block-Size Key - Hash Key First".to_vec(),
            "60e431591ee0b67f0d8a26aacbf5b77f8e0bc6213728c5140546040f0ee37f54",
        ),
        (
            vec![0xaa; 131],
            b"This is a test using a larger than block-size key and a larger than block-size data. The key needs to be hashed before being used by the HMAC algorithm.".to_vec(),
            "9b09ffa71b942fcb27635fbcd5b0e944bfdc63644f0713938a7f51535c3a35e2",
        ),
    ]
}

fn random_insn(rng: &mut ChaCha8Rng, len: usize) -> Insn {
    let x = |rng: &mut ChaCha8Rng| Xmm(rng.random_range(0..4));
    let mem = |rng: &mut ChaCha8Rng| Mem {
        base: None,
        disp: 16 * rng.random_range(0..8),
    };
    match rng.random_range(0..12) {
        0 | 1 => Insn::Load {
            src: mem(rng),
            dst: x(rng),
        },
        2 | 3 => Insn::Store {
            src: x(rng),
            dst: mem(rng),
        },
        4 => Insn::StoreNt {
            src: x(rng),
            dst: mem(rng),
        },
        5 => Insn::Pxor {
            a: x(rng),
            b: x(rng),
            dst: x(rng),
        },
        6 => Insn::Pand {
            a: x(rng),
            b: x(rng),
            dst: x(rng),
        },
        7 => Insn::Paddq {
            a: x(rng),
            b: x(rng),
            dst: x(rng),
        },
        8 => Insn::Psllq {
            count: ShiftCount::Imm(rng.random_range(0..64)),
            src: x(rng),
            dst: x(rng),
        },
        9 => Insn::Sfence,
        10 => Insn::Push(Gpr(rng.random_range(0..16))),
        _ => Insn::Jmp {
            target: rng.random_range(0..=len),
        },
    }
}

/// Up to 50 instructions over four vector registers, so that patterns,
/// redefinitions and near misses are all common.
pub fn random_program(rng: &mut ChaCha8Rng) -> MiniProgram {
    let len = rng.random_range(0..=50);
    MiniProgram {
        insns: (0..len).map(|_| random_insn(rng, len)).collect(),
        labels: Default::default(),
    }
}

pub fn op_kind(insn: &Insn) -> Option<(PatternKind, Xmm)> {
    match *insn {
        Insn::Pxor { dst, .. } | Insn::Pand { dst, .. } => Some((PatternKind::Vp1, dst)),
        Insn::Paddq { dst, .. } => Some((PatternKind::Vp2, dst)),
        _ => None,
    }
}

pub fn writes(insn: &Insn, r: Xmm) -> bool {
    match *insn {
        Insn::Load { dst, .. }
        | Insn::Pxor { dst, .. }
        | Insn::Pand { dst, .. }
        | Insn::Paddq { dst, .. }
        | Insn::Psllq { dst, .. } => dst == r,
        _ => false,
    }
}

pub fn stored(insn: &Insn) -> Option<Xmm> {
    match *insn {
        Insn::Store { src, .. } | Insn::StoreNt { src, .. } => Some(src),
        _ => None,
    }
}

/// Every (op, store) pair allowed by the pattern definition, by
/// exhaustive search over all pairs.
pub fn scan_oracle(p: &MiniProgram) -> BTreeSet<PatternHit> {
    let n = p.insns.len();
    let mut out = BTreeSet::new();
    for i in 0..n {
        let Some((kind, dst)) = op_kind(&p.insns[i]) else {
            continue;
        };
        for j in i + 1..n {
            let gap = j - i - 1;
            if gap > 3 || stored(&p.insns[j]) != Some(dst) {
                continue;
            }
            if (i + 1..j).any(|k| writes(&p.insns[k], dst)) {
                continue;
            }
            out.insert(PatternHit {
                kind,
                op_index: i,
                store_index: j,
                gap,
            });
        }
    }
    out
}
