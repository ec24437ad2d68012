//! Victim workloads whose fault response is calibrated per core.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Listing-4 bodies executed per enclave call in the control-flow PoC.
pub const POC_ITERATIONS_PER_CALL: usize = 100;

/// 128-bit message-schedule stores per SHA-256 block (W[16..64], four words each).
pub const SCHEDULE_STORES_PER_BLOCK: usize = 12;
/// 128-bit stores of the chaining-state feed-forward per block.
pub const STATE_STORES_PER_BLOCK: usize = 2;
pub const STORES_PER_BLOCK: usize = SCHEDULE_STORES_PER_BLOCK + STATE_STORES_PER_BLOCK;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Listing-1 style test loop; one eligible store per calibrated event.
    TestLoop,
    /// Listing-4 control-flow deviation enclave.
    Poc,
    /// HMAC-SHA256 validation of a 32-byte payload.
    Hmac32,
    /// HMAC-SHA256 validation of a 1 KiB payload.
    Hmac1k,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::TestLoop, Scenario::Poc, Scenario::Hmac32, Scenario::Hmac1k];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::TestLoop => "test_loop",
            Scenario::Poc => "poc",
            Scenario::Hmac32 => "hmac32",
            Scenario::Hmac1k => "hmac1k",
        }
    }

    /// Attack scenarios are subject to the per-P-state attack scale; the
    /// probing test loop is not.
    pub fn is_attack(self) -> bool {
        !matches!(self, Scenario::TestLoop)
    }

    pub fn payload_len(self) -> Option<usize> {
        match self {
            Scenario::Hmac32 => Some(32),
            Scenario::Hmac1k => Some(1024),
            _ => None,
        }
    }

    /// Number of fault-eligible stores one victim try executes.
    pub fn eligible_stores_per_try(self) -> usize {
        match self {
            Scenario::TestLoop => 1,
            Scenario::Poc => POC_ITERATIONS_PER_CALL,
            Scenario::Hmac32 | Scenario::Hmac1k => {
                hmac_sha256_blocks(self.payload_len().unwrap_or(0)) * STORES_PER_BLOCK
            }
        }
    }
}

/// SHA-256 compressions performed by one HMAC over `message_len` bytes
/// (no precomputed pad states).
pub fn hmac_sha256_blocks(message_len: usize) -> usize {
    let padded = |len: usize| (len + 9).div_ceil(64);
    padded(64 + message_len) + padded(64 + 32)
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| format!("unknown scenario {s:?}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hmac_block_counts() {
        assert_eq!(hmac_sha256_blocks(32), 4);
        assert_eq!(hmac_sha256_blocks(1024), 20);
        assert_eq!(Scenario::Hmac32.eligible_stores_per_try(), 56);
        assert_eq!(Scenario::Hmac1k.eligible_stores_per_try(), 280);
    }

    #[test]
    fn names_round_trip() {
        for sc in Scenario::ALL {
            assert_eq!(sc.name().parse::<Scenario>().unwrap(), sc);
        }
        assert!("hmac64".parse::<Scenario>().is_err());
    }
}
