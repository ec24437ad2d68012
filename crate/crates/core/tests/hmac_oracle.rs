mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use undervolt_lab::harness::campaign::{hmac_key, hmac_message};
use undervolt_lab::harness::sha256::{hmac_sha256, hmac_sha256_with, sha256};
use undervolt_lab::isa::Halt;
use undervolt_lab::scenario::{hmac_sha256_blocks, Scenario, STORES_PER_BLOCK};

#[test]
fn sha256_known_answers() {
    assert_eq!(
        hex::encode(sha256(b"")),
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
    );
    assert_eq!(
        hex::encode(sha256(b"abc")),
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
    );
    assert_eq!(
        hex::encode(sha256(b"abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq")),
        "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1"
    );
    assert_eq!(
        hex::encode(sha256(&vec![b'a'; 1_000_000])),
        "cdc76e5c9914fb9281a1c7e284d73e67f1809a48a497200e046d39ccc7112cd0"
    );
}

#[test]
fn sha256_matches_reference_on_every_length_to_300() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for len in 0..300 {
        let data: Vec<u8> = (0..len).map(|_| rng.random()).collect();
        assert_eq!(sha256(&data), common::sha256(&data), "len {len}");
    }
}

#[test]
fn hmac_rfc4231_vectors() {
    let cases = common::rfc4231();
    for (key, msg, mac) in cases {
        assert_eq!(hex::encode(hmac_sha256(&key, &msg)), mac);
        assert_eq!(hex::encode(common::hmac(&key, &msg)), mac);
    }
}

#[test]
fn hmac_matches_the_definition_on_random_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..300 {
        let key: Vec<u8> = (0..rng.random_range(0..150)).map(|_| rng.random()).collect();
        let msg: Vec<u8> = (0..rng.random_range(0..1100)).map(|_| rng.random()).collect();
        assert_eq!(hmac_sha256(&key, &msg), common::hmac(&key, &msg));
    }
}

#[test]
fn store_count_follows_the_block_count() {
    let key = hmac_key();
    for (sc, len) in [(Scenario::Hmac32, 32), (Scenario::Hmac1k, 1024)] {
        let msg = hmac_message(len);
        let mut n = 0u64;
        let mac = hmac_sha256_with(&key, &msg, &mut |_: u64, _: &mut u128| -> Result<(), Halt> {
            n += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(mac, common::hmac(&key, &msg));
        assert_eq!(n as usize, sc.eligible_stores_per_try());
        assert_eq!(n as usize, hmac_sha256_blocks(len) * STORES_PER_BLOCK);
    }
}

#[test]
fn every_single_bit_flip_changes_the_mac() {
    let key = hmac_key();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..1000 {
        let (sc, len) = if i % 2 == 0 {
            (Scenario::Hmac32, 32)
        } else {
            (Scenario::Hmac1k, 1024)
        };
        let msg = hmac_message(len);
        let expected = common::hmac(&key, &msg);
        let target = rng.random_range(0..sc.eligible_stores_per_try() as u64);
        let bit = rng.random_range(0..128);
        let mut hit = false;
        let mac = hmac_sha256_with(&key, &msg, &mut |k: u64, w: &mut u128| -> Result<(), Halt> {
            if k == target {
                *w ^= 1 << bit;
                hit = true;
            }
            Ok(())
        })
        .unwrap();
        assert!(hit);
        assert_ne!(mac, expected, "store {target} bit {bit} left the MAC intact");
    }
}
