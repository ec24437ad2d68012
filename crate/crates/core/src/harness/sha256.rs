//! SHA-256 and HMAC-SHA256 with the vector stores of the compression
//! function exposed to a fault hook.
//!
//! Per block the message schedule words `W[16..64]` are written in twelve
//! 128-bit stores of four words, and the feed-forward state in two more.
//! The hook sees each stored word (four `u32` lanes, lane `i` in bits
//! `32i..32i+32`) and may alter it before later rounds read it.

use crate::isa::Halt;
use crate::scenario::{SCHEDULE_STORES_PER_BLOCK, STATE_STORES_PER_BLOCK};

const K: [u32; 64] = [
    0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1, 0x923f82a4, 0xab1c5ed5, 0xd807aa98,
    0x12835b01, 0x243185be, 0x550c7dc3, 0x72be5d74, 0x80deb1fe, 0x9bdc06a7, 0xc19bf174, 0xe49b69c1, 0xefbe4786,
    0x0fc19dc6, 0x240ca1cc, 0x2de92c6f, 0x4a7484aa, 0x5cb0a9dc, 0x76f988da, 0x983e5152, 0xa831c66d, 0xb00327c8,
    0xbf597fc7, 0xc6e00bf3, 0xd5a79147, 0x06ca6351, 0x14292967, 0x27b70a85, 0x2e1b2138, 0x4d2c6dfc, 0x53380d13,
    0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85, 0xa2bfe8a1, 0xa81a664b, 0xc24b8b70, 0xc76c51a3, 0xd192e819,
    0xd6990624, 0xf40e3585, 0x106aa070, 0x19a4c116, 0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a,
    0x5b9cca4f, 0x682e6ff3, 0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208, 0x90befffa, 0xa4506ceb, 0xbef9a3f7,
    0xc67178f2,
];

const H0: [u32; 8] = [
    0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a, 0x510e527f, 0x9b05688c, 0x1f83d9ab, 0x5be0cd19,
];

pub const BLOCK_BYTES: usize = 64;

/// Receives the running store index and the 128-bit word being stored.
pub trait StoreHook {
    fn store(&mut self, index: u64, word: &mut u128) -> Result<(), Halt>;
}

impl<F: FnMut(u64, &mut u128) -> Result<(), Halt>> StoreHook for F {
    fn store(&mut self, index: u64, word: &mut u128) -> Result<(), Halt> {
        self(index, word)
    }
}

struct Clean;

impl StoreHook for Clean {
    fn store(&mut self, _: u64, _: &mut u128) -> Result<(), Halt> {
        Ok(())
    }
}

fn pack(w: &[u32]) -> u128 {
    w.iter()
        .enumerate()
        .fold(0u128, |acc, (i, x)| acc | (u128::from(*x) << (32 * i)))
}

fn unpack(v: u128, w: &mut [u32]) {
    for (i, x) in w.iter_mut().enumerate() {
        *x = (v >> (32 * i)) as u32;
    }
}

struct Hooked<'h, H: StoreHook + ?Sized> {
    hook: &'h mut H,
    next: u64,
}

impl<H: StoreHook + ?Sized> Hooked<'_, H> {
    fn store(&mut self, lanes: &mut [u32]) -> Result<(), Halt> {
        let mut word = pack(lanes);
        self.hook.store(self.next, &mut word)?;
        self.next += 1;
        unpack(word, lanes);
        Ok(())
    }
}

fn compress<H: StoreHook + ?Sized>(state: &mut [u32; 8], block: &[u8], hooked: &mut Hooked<'_, H>) -> Result<(), Halt> {
    let mut w = [0u32; 64];
    for (i, chunk) in block.chunks_exact(4).enumerate() {
        w[i] = u32::from_be_bytes(chunk.try_into().expect("4 bytes"));
    }
    for group in 0..SCHEDULE_STORES_PER_BLOCK {
        let base = 16 + 4 * group;
        for t in base..base + 4 {
            let s0 = w[t - 15].rotate_right(7) ^ w[t - 15].rotate_right(18) ^ (w[t - 15] >> 3);
            let s1 = w[t - 2].rotate_right(17) ^ w[t - 2].rotate_right(19) ^ (w[t - 2] >> 10);
            w[t] = w[t - 16].wrapping_add(s0).wrapping_add(w[t - 7]).wrapping_add(s1);
        }
        hooked.store(&mut w[base..base + 4])?;
    }
    let [mut a, mut b, mut c, mut d, mut e, mut f, mut g, mut h] = *state;
    for t in 0..64 {
        let s1 = e.rotate_right(6) ^ e.rotate_right(11) ^ e.rotate_right(25);
        let ch = (e & f) ^ (!e & g);
        let t1 = h
            .wrapping_add(s1)
            .wrapping_add(ch)
            .wrapping_add(K[t])
            .wrapping_add(w[t]);
        let s0 = a.rotate_right(2) ^ a.rotate_right(13) ^ a.rotate_right(22);
        let maj = (a & b) ^ (a & c) ^ (b & c);
        let t2 = s0.wrapping_add(maj);
        h = g;
        g = f;
        f = e;
        e = d.wrapping_add(t1);
        d = c;
        c = b;
        b = a;
        a = t1.wrapping_add(t2);
    }
    for (s, v) in state.iter_mut().zip([a, b, c, d, e, f, g, h]) {
        *s = s.wrapping_add(v);
    }
    for half in 0..STATE_STORES_PER_BLOCK {
        hooked.store(&mut state[4 * half..4 * half + 4])?;
    }
    Ok(())
}

fn digest<H: StoreHook + ?Sized>(parts: &[&[u8]], hooked: &mut Hooked<'_, H>) -> Result<[u8; 32], Halt> {
    let mut msg: Vec<u8> = parts.concat();
    let bit_len = (msg.len() as u64) * 8;
    msg.push(0x80);
    while msg.len() % BLOCK_BYTES != 56 {
        msg.push(0);
    }
    msg.extend_from_slice(&bit_len.to_be_bytes());
    let mut state = H0;
    for block in msg.chunks_exact(BLOCK_BYTES) {
        compress(&mut state, block, hooked)?;
    }
    let mut out = [0u8; 32];
    for (chunk, s) in out.chunks_exact_mut(4).zip(state) {
        chunk.copy_from_slice(&s.to_be_bytes());
    }
    Ok(out)
}

pub fn sha256(data: &[u8]) -> [u8; 32] {
    let mut clean = Clean;
    digest(
        &[data],
        &mut Hooked {
            hook: &mut clean,
            next: 0,
        },
    )
    .expect("clean hook never stops")
}

/// HMAC-SHA256 with every eligible store routed through `hook`. Store
/// indices run across the inner and then the outer hash.
pub fn hmac_sha256_with<H: StoreHook + ?Sized>(key: &[u8], message: &[u8], hook: &mut H) -> Result<[u8; 32], Halt> {
    let mut hooked = Hooked { hook, next: 0 };
    let mut block = [0u8; BLOCK_BYTES];
    if key.len() > BLOCK_BYTES {
        block[..32].copy_from_slice(&digest(&[key], &mut hooked)?);
    } else {
        block[..key.len()].copy_from_slice(key);
    }
    let ipad = block.map(|b| b ^ 0x36);
    let opad = block.map(|b| b ^ 0x5c);
    let inner = digest(&[&ipad, message], &mut hooked)?;
    digest(&[&opad, &inner], &mut hooked)
}

pub fn hmac_sha256(key: &[u8], message: &[u8]) -> [u8; 32] {
    hmac_sha256_with(key, message, &mut Clean).expect("clean hook never stops")
}
