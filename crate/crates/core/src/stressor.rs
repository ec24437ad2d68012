//! Workloads placed on the victim's logical partner thread.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown stressor {0:?}")]
pub struct UnknownStressor(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StressorKind {
    /// The push / vpsllq / vpsllq / pop shift loop.
    Listing2ShiftLoop,
    /// AVX Twofish encryption loop.
    TwofishAvx,
    None,
}

/// Effect of a stressor on its physical core.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StressorSpec {
    pub kind: StressorKind,
    /// Added to the physical core's steady-state temperature target, scaled
    /// with the P-state like every other heat source.
    pub temperature_boost_c: f64,
    /// Multiplier on the per-store fault probability.
    pub fault_multiplier: f64,
}

impl StressorKind {
    pub const ALL: [StressorKind; 3] = [
        StressorKind::Listing2ShiftLoop,
        StressorKind::TwofishAvx,
        StressorKind::None,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StressorKind::Listing2ShiftLoop => "listing2_shift_loop",
            StressorKind::TwofishAvx => "twofish_avx",
            StressorKind::None => "none",
        }
    }

    pub fn spec(self) -> StressorSpec {
        let (temperature_boost_c, fault_multiplier) = match self {
            StressorKind::Listing2ShiftLoop => (6.0, 44.0),
            StressorKind::TwofishAvx => (3.0, 1.25),
            StressorKind::None => (0.0, 1.0),
        };
        StressorSpec {
            kind: self,
            temperature_boost_c,
            fault_multiplier,
        }
    }
}

/// Looks up a stressor by its full or short name (`listing2`, `twofish`).
pub fn stressor_profile(name: &str) -> Result<StressorSpec, UnknownStressor> {
    name.parse::<StressorKind>().map(StressorKind::spec)
}

impl FromStr for StressorKind {
    type Err = UnknownStressor;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "listing2_shift_loop" | "listing2" => Ok(StressorKind::Listing2ShiftLoop),
            "twofish_avx" | "twofish" => Ok(StressorKind::TwofishAvx),
            "none" => Ok(StressorKind::None),
            other => Err(UnknownStressor(other.to_string())),
        }
    }
}

impl fmt::Display for StressorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
