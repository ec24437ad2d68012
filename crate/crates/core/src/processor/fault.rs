//! Seeded fault and crash manifestation for one core of a platform.

use std::fmt;

use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::platform::{Assignment, PlatformState};
use super::profile::{ProcessorProfile, ProfileError, WORD_BYTES};
use super::region::{Microvolts, RegionBands, VoltageRegion};
use crate::msr::PState;
use crate::scenario::Scenario;
use crate::stressor::StressorKind;

/// Bit flips observed in one 128-bit word. Bit `b` lives in byte `b / 8`
/// of the little-endian memory image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "PatternRepr", try_from = "PatternRepr")]
pub struct BitFlipPattern {
    pub word_index: u64,
    pub mask: u128,
}

#[derive(Serialize, Deserialize)]
struct PatternRepr {
    word_index: u64,
    flipped_bits: Vec<u8>,
    byte_positions: Vec<u8>,
}

impl From<BitFlipPattern> for PatternRepr {
    fn from(p: BitFlipPattern) -> Self {
        PatternRepr {
            word_index: p.word_index,
            flipped_bits: p.flipped_bits().collect(),
            byte_positions: p.byte_positions(),
        }
    }
}

impl TryFrom<PatternRepr> for BitFlipPattern {
    type Error = String;
    fn try_from(r: PatternRepr) -> Result<Self, String> {
        let mut mask = 0u128;
        for b in r.flipped_bits {
            if b >= 128 {
                return Err(format!("bit {b} outside a 128-bit word"));
            }
            mask |= 1 << b;
        }
        BitFlipPattern::new(r.word_index, mask).ok_or_else(|| "empty flip pattern".into())
    }
}

impl BitFlipPattern {
    /// `None` for an empty mask.
    pub fn new(word_index: u64, mask: u128) -> Option<Self> {
        (mask != 0).then_some(BitFlipPattern { word_index, mask })
    }

    pub fn flipped_bits(&self) -> impl Iterator<Item = u8> + '_ {
        (0u8..128).filter(|b| self.mask >> b & 1 == 1)
    }

    pub fn bit_count(&self) -> u32 {
        self.mask.count_ones()
    }

    pub fn byte_positions(&self) -> Vec<u8> {
        (0u8..16).filter(|i| (self.mask >> (i * 8)) & 0xFF != 0).collect()
    }

    pub fn apply(&self, word: u128) -> u128 {
        word ^ self.mask
    }
}

impl fmt::Display for BitFlipPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "word {} mask {:#034x}", self.word_index, self.mask)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrashKind {
    Freeze,
    HardCrash,
    KernelException,
}

impl CrashKind {
    /// Kernel exceptions are reported and survivable; the others end the run
    /// without a machine-check record.
    pub fn is_recoverable(self) -> bool {
        matches!(self, CrashKind::KernelException)
    }
}

/// Supply conditions seen during one simulated time slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slice {
    pub voltage: Microvolts,
    pub region: VoltageRegion,
}

/// Fault behaviour of one physical core under a fixed platform state.
#[derive(Debug, Clone)]
pub struct FaultModel<'a> {
    profile: &'a ProcessorProfile,
    core: usize,
    pstate: PState,
    bands: RegionBands,
    nominal: Microvolts,
    noise_uv: i64,
    fault_scale: f64,
    hard_weight: f64,
}

pub fn classify_voltage(
    profile: &ProcessorProfile,
    core: usize,
    pstate: PState,
    effective_voltage: Microvolts,
    temperature_c: f64,
) -> Result<VoltageRegion, ProfileError> {
    Ok(profile.bands(core, pstate, temperature_c)?.classify(effective_voltage))
}

pub(crate) fn core_stressor(state: &PlatformState, core: usize) -> StressorKind {
    let n = state.physical_cores();
    state
        .assignments
        .iter()
        .enumerate()
        .filter(|(l, _)| l % n == core)
        .find_map(|(_, a)| match a {
            Assignment::Stressor(kind) => Some(*kind),
            _ => None,
        })
        .unwrap_or(StressorKind::None)
}

impl<'a> FaultModel<'a> {
    /// Crash-only model (no fault calibration attached).
    pub fn new(profile: &'a ProcessorProfile, state: &PlatformState, core: usize) -> Result<Self, ProfileError> {
        let pstate = state.pstate;
        let temperature = state
            .temperatures_c
            .get(core)
            .copied()
            .ok_or(ProfileError::UnknownCoreOrPState { core, pstate })?;
        let bands = profile.bands(core, pstate, temperature)?;
        let nominal = state
            .nominal_voltage(profile)
            .ok_or(ProfileError::UnknownCoreOrPState { core, pstate })?;
        let c = profile.crash_params();
        let x = profile.pstate_position(pstate);
        Ok(FaultModel {
            profile,
            core,
            pstate,
            bands,
            nominal,
            noise_uv: profile.noise().0,
            fault_scale: 0.0,
            hard_weight: c.hard_weight_low + (c.hard_weight_high - c.hard_weight_low) * x,
        })
    }

    /// Attaches the calibrated fault probability of `scenario`, scaled by
    /// the stressor on this core's sibling thread and the P-state.
    pub fn with_scenario(mut self, state: &PlatformState, scenario: Scenario) -> Result<Self, ProfileError> {
        let base = self.profile.base_probability(self.core, scenario)?;
        let stressor = core_stressor(state, self.core).spec().fault_multiplier;
        let pstate_scale = if scenario.is_attack() {
            self.profile.attack_scale(self.pstate)
        } else {
            1.0
        };
        self.fault_scale = base * stressor * pstate_scale;
        Ok(self)
    }

    pub fn core(&self) -> usize {
        self.core
    }

    pub fn bands(&self) -> &RegionBands {
        &self.bands
    }

    pub fn nominal(&self) -> Microvolts {
        self.nominal
    }

    /// Overrides the nominal voltage (undervolting switched on or off).
    pub fn with_nominal(mut self, nominal: Microvolts) -> Self {
        self.nominal = nominal;
        self
    }

    pub fn nominal_region(&self) -> VoltageRegion {
        self.bands.classify(self.nominal)
    }

    /// Draws the supply noise for one slice.
    pub fn draw_slice<R: Rng + ?Sized>(&self, rng: &mut R) -> Slice {
        let noise = if self.noise_uv > 0 {
            rng.random_range(-self.noise_uv..=self.noise_uv)
        } else {
            0
        };
        let voltage = self.nominal + Microvolts(noise);
        Slice {
            voltage,
            region: self.bands.classify(voltage),
        }
    }

    /// Probability that an eligible store in `slice` is corrupted.
    pub fn fault_probability(&self, slice: &Slice) -> f64 {
        if slice.region != VoltageRegion::ExploitWindow {
            return 0.0;
        }
        let depth = self.bands.window_depth(slice.voltage);
        (self.fault_scale * self.profile.shape(depth)).min(1.0)
    }

    pub fn sample_store_fault<R: Rng + ?Sized>(
        &self,
        slice: &Slice,
        word_index: u64,
        rng: &mut R,
    ) -> Option<BitFlipPattern> {
        let p = self.fault_probability(slice);
        if p > 0.0 && rng.random::<f64>() < p {
            Some(self.manifest(word_index, rng))
        } else {
            None
        }
    }

    /// Shape of a fault that does occur: flip count from the multiplicity
    /// distribution, bytes from the affinity weights.
    pub fn manifest<R: Rng + ?Sized>(&self, word_index: u64, rng: &mut R) -> BitFlipPattern {
        let [p1, p2, _] = self.profile.multiplicity(self.core);
        let u: f64 = rng.random();
        let wanted = if u < p1 {
            1
        } else if u < p1 + p2 {
            2
        } else {
            rng.random_range(3..=5)
        };
        let capacity = self.profile.affinity_support(self.core).len() * 8;
        let flips = wanted.min(capacity);
        let sampler = self.profile.byte_sampler(self.core);
        let mut mask = 0u128;
        while (mask.count_ones() as usize) < flips {
            let byte = sampler.sample(rng);
            debug_assert!(byte < WORD_BYTES);
            let bit = rng.random_range(0..8);
            mask |= 1u128 << (byte * 8 + bit);
        }
        BitFlipPattern { word_index, mask }
    }

    /// Per-slice crash probability: zero outside the unstable region,
    /// growing with depth below the instability boundary.
    pub fn crash_hazard(&self, slice: &Slice) -> f64 {
        if slice.region != VoltageRegion::Unstable {
            return 0.0;
        }
        let c = self.profile.crash_params();
        (c.base_hazard + c.hazard_per_mv * self.bands.unstable_depth_mv(slice.voltage)).min(1.0)
    }

    pub fn sample_crash_at<R: Rng + ?Sized>(&self, slice: &Slice, rng: &mut R) -> Option<CrashKind> {
        let h = self.crash_hazard(slice);
        if h <= 0.0 || rng.random::<f64>() >= h {
            return None;
        }
        Some(self.crash_kind(rng))
    }

    /// Which kind of crash happens, weighted by how high the P-state is.
    pub fn crash_kind<R: Rng + ?Sized>(&self, rng: &mut R) -> CrashKind {
        let freeze = self.profile.crash_params().freeze_weight;
        let u: f64 = rng.random();
        if u < freeze {
            CrashKind::Freeze
        } else if u < freeze + self.hard_weight {
            CrashKind::HardCrash
        } else {
            CrashKind::KernelException
        }
    }
}

/// Samples one eligible store on `core` under `state`: draws the slice
/// noise, then a fault if the voltage lands in the exploit window.
pub fn sample_fault<R: Rng + ?Sized>(
    profile: &ProcessorProfile,
    state: &PlatformState,
    core: usize,
    scenario: Scenario,
    word_index: u64,
    rng: &mut R,
) -> Result<Option<BitFlipPattern>, ProfileError> {
    let model = FaultModel::new(profile, state, core)?.with_scenario(state, scenario)?;
    let slice = model.draw_slice(rng);
    Ok(model.sample_store_fault(&slice, word_index, rng))
}

/// Samples the platform crash process for one slice, judged on the victim
/// core (core 0 when no victim is placed).
pub fn sample_crash<R: Rng + ?Sized>(
    profile: &ProcessorProfile,
    state: &PlatformState,
    rng: &mut R,
) -> Result<Option<CrashKind>, ProfileError> {
    let core = state.victim_physical().unwrap_or(0);
    let model = FaultModel::new(profile, state, core)?;
    let slice = model.draw_slice(rng);
    Ok(model.sample_crash_at(&slice, rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::processor::profile::bundled_profile;
    use crate::rng::StreamKey;

    fn p(r: u8) -> PState {
        PState::new(r).unwrap()
    }

    fn state_at(profile: &ProcessorProfile, ratio: u8, victim: usize, volts: f64) -> PlatformState {
        let mut s = PlatformState::new(profile, p(ratio), 3);
        s.assign(victim, Assignment::Victim).unwrap();
        s.assign(
            s.partner_of(victim).unwrap(),
            Assignment::Stressor(StressorKind::Listing2ShiftLoop),
        )
        .unwrap();
        let t = profile.victim_temperature(p(ratio), StressorKind::Listing2ShiftLoop);
        s.temperatures_c = vec![t; profile.physical_cores()];
        let base = profile.base_voltage(p(ratio)).unwrap();
        let offset = (Microvolts::from_volts(volts).0 - base.0) / 1000;
        s.set_core_offset(offset as i16).unwrap();
        s
    }

    #[test]
    fn classify_examples() {
        let prof = bundled_profile("i7-7700K").unwrap();
        let c = |v| classify_voltage(&prof, 0, p(0x08), Microvolts::from_volts(v), 32.0).unwrap();
        assert_eq!(c(0.540), VoltageRegion::ExploitWindow);
        assert_eq!(c(0.700), VoltageRegion::Normal);
        assert_eq!(c(0.530), VoltageRegion::Unstable);
        assert!(classify_voltage(&prof, 7, p(0x08), Microvolts(0), 32.0).is_err());
    }

    #[test]
    fn normal_region_never_faults() {
        let prof = bundled_profile("i7-8700K").unwrap();
        let s = state_at(&prof, 0x1B, 0, 0.900);
        let mut rng = StreamKey::new(1, 0, 0, 0).rng();
        for i in 0..10_000 {
            assert_eq!(sample_fault(&prof, &s, 0, Scenario::Hmac32, i, &mut rng).unwrap(), None);
            assert_eq!(sample_crash(&prof, &s, &mut rng).unwrap(), None);
        }
    }

    #[test]
    fn exploit_window_slices_never_crash() {
        let prof = bundled_profile("i7-7700K").unwrap();
        let s = state_at(&prof, 0x1B, 1, 0.710);
        let model = FaultModel::new(&prof, &s, 1).unwrap();
        let mut rng = StreamKey::new(2, 0, 0, 0).rng();
        for _ in 0..10_000 {
            let slice = model.draw_slice(&mut rng);
            assert_ne!(slice.region, VoltageRegion::Unstable);
            assert_eq!(model.sample_crash_at(&slice, &mut rng), None);
        }
    }

    #[test]
    fn core3_of_8700k_flips_byte_4_single_bits() {
        let prof = bundled_profile("i7-8700K").unwrap();
        let s = state_at(&prof, 0x1B, 3, 0.765);
        let model = FaultModel::new(&prof, &s, 3).unwrap();
        let mut rng = StreamKey::new(3, 3, 0, 0).rng();
        let patterns: Vec<_> = (0..1000).map(|i| model.manifest(i, &mut rng)).collect();
        let single = patterns.iter().filter(|p| p.bit_count() == 1).count();
        assert!(single >= 950, "{single}");
        assert!(patterns.iter().all(|p| p.byte_positions() == vec![4]));
    }

    #[test]
    fn crash_weights_follow_pstate() {
        let prof = bundled_profile("i7-7700K").unwrap();
        let count = |ratio: u8, fault_voltage: f64| {
            let s = state_at(&prof, ratio, 0, fault_voltage - 0.020);
            let model = FaultModel::new(&prof, &s, 0).unwrap();
            let mut rng = StreamKey::new(4, 0, 0, u32::from(ratio) as usize).rng();
            let mut n = [0usize; 3];
            for _ in 0..20_000 {
                n[model.crash_kind(&mut rng) as usize] += 1;
            }
            n
        };
        let high = count(0x2A, 0.930);
        assert!(high[CrashKind::HardCrash as usize] > high[CrashKind::KernelException as usize]);
        let low = count(0x08, 0.540);
        let recoverable = low[CrashKind::KernelException as usize];
        assert!(recoverable * 2 > 20_000, "{low:?}");
    }

    #[test]
    fn pattern_json_shape() {
        let pat = BitFlipPattern::new(7, (1u128 << 33) | (1 << 34)).unwrap();
        let json = serde_json::to_string(&pat).unwrap();
        assert_eq!(json, r#"{"word_index":7,"flipped_bits":[33,34],"byte_positions":[4]}"#);
        let back: BitFlipPattern = serde_json::from_str(&json).unwrap();
        assert_eq!(back, pat);
        assert!(BitFlipPattern::new(0, 0).is_none());
    }
}
