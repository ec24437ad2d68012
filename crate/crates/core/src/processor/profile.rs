//! Per-model fault calibration data and its JSON document format.

use std::collections::BTreeMap;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::calibration;
use super::region::{Microvolts, RegionBands};
use super::thermal::{self, ThermalParams};
use crate::msr::PState;
use crate::scenario::Scenario;
use crate::stressor::StressorKind;

pub const SCHEMA_VERSION: u32 = 1;
pub const WORD_BYTES: usize = 16;

/// Stressor the bundled success rates were measured with.
pub const REFERENCE_STRESSOR: StressorKind = StressorKind::Listing2ShiftLoop;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("profile schema: {0}")]
    Schema(String),
    #[error("profile invariant violated: {0}")]
    Invariant(String),
    #[error("unknown core {core} or P-state {pstate}")]
    UnknownCoreOrPState { core: usize, pstate: PState },
    #[error("no calibration for core {core}, scenario {scenario}")]
    MissingCalibration { core: usize, scenario: Scenario },
    #[error("reading profile: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PStateEntry {
    pub ratio: PState,
    /// Nominal supply voltage of the P-state, volts.
    pub base_voltage: f64,
    /// Temperature at which `fault_voltage` was measured.
    pub reference_temperature_c: f64,
    /// Scale on attack-scenario fault probability at this P-state.
    pub attack_scale: f64,
    /// Top of the exploit window per physical core, volts.
    pub fault_voltage: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exploit_window_mv: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corrected_band_mv: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoreEntry {
    /// Relative weight of each byte of a 128-bit word receiving a flip.
    pub byte_affinity: Vec<f64>,
    /// Probabilities of 1, 2 and 3+ flipped bits per fault.
    pub multiplicity: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationEntry {
    pub core: usize,
    pub scenario: Scenario,
    pub pstate: PState,
    /// Victim-level success probability per try at the window top with
    /// the reference stressor.
    pub success_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrashParams {
    /// Crash hazard per slice right at the instability boundary.
    pub base_hazard: f64,
    /// Additional hazard per millivolt below the boundary.
    pub hazard_per_mv: f64,
    pub freeze_weight: f64,
    /// HardCrash weight at the lowest P-state of the profile.
    pub hard_weight_low: f64,
    /// HardCrash weight at the highest P-state of the profile.
    pub hard_weight_high: f64,
}

/// The on-disk profile document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileDocument {
    pub schema_version: u32,
    pub model_name: String,
    pub physical_cores: usize,
    pub threads_per_core: usize,
    pub exploit_window_mv: f64,
    pub corrected_band_mv: f64,
    /// Half-width of the uniform per-slice supply noise.
    pub noise_mv: f64,
    /// Knots of the piecewise-linear depth-to-probability curve.
    pub fault_shape: Vec<[f64; 2]>,
    pub thermal: ThermalParams,
    pub crash: CrashParams,
    pub pstates: Vec<PStateEntry>,
    pub cores: Vec<CoreEntry>,
    pub calibration: Vec<CalibrationEntry>,
    #[serde(default)]
    pub calibration_source: BTreeMap<String, String>,
}

/// Validated, immutable processor profile.
#[derive(Debug, Clone)]
pub struct ProcessorProfile {
    doc: ProfileDocument,
    /// Per-store fault probability before stressor, P-state and depth
    /// factors, solved from the calibration table.
    base_probability: BTreeMap<(usize, Scenario), f64>,
    byte_samplers: Vec<WeightedIndex<f64>>,
}

const BUNDLED: [(&str, &str); 3] = [
    ("i7-7700", include_str!("../../profiles/i7-7700.json")),
    ("i7-7700K", include_str!("../../profiles/i7-7700K.json")),
    ("i7-8700K", include_str!("../../profiles/i7-8700K.json")),
];

pub fn bundled_profile_names() -> impl Iterator<Item = &'static str> {
    BUNDLED.iter().map(|(name, _)| *name)
}

pub fn bundled_profile(name: &str) -> Result<ProcessorProfile, ProfileError> {
    let (_, text) = BUNDLED
        .iter()
        .find(|(n, _)| n.eq_ignore_ascii_case(name))
        .ok_or_else(|| ProfileError::Schema(format!("no bundled profile named {name:?}")))?;
    load_profile(text)
}

/// Parses and validates a profile document.
pub fn load_profile(document: &str) -> Result<ProcessorProfile, ProfileError> {
    let doc: ProfileDocument = serde_json::from_str(document).map_err(|e| ProfileError::Schema(e.to_string()))?;
    ProcessorProfile::from_document(doc)
}

pub fn load_profile_file(path: &Path) -> Result<ProcessorProfile, ProfileError> {
    load_profile(&std::fs::read_to_string(path)?)
}

fn invariant(msg: impl Into<String>) -> ProfileError {
    ProfileError::Invariant(msg.into())
}

impl ProcessorProfile {
    pub fn from_document(doc: ProfileDocument) -> Result<Self, ProfileError> {
        check_schema(&doc)?;
        check_invariants(&doc)?;
        let byte_samplers = doc
            .cores
            .iter()
            .map(|c| WeightedIndex::new(c.byte_affinity.iter().copied()))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| invariant(format!("byte affinity: {e}")))?;
        let mut profile = ProcessorProfile {
            doc,
            base_probability: BTreeMap::new(),
            byte_samplers,
        };
        profile.base_probability = calibration::solve_profile(&profile)?;
        Ok(profile)
    }

    pub fn document(&self) -> &ProfileDocument {
        &self.doc
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.doc).expect("profile document serializes")
    }

    pub fn model_name(&self) -> &str {
        &self.doc.model_name
    }

    pub fn physical_cores(&self) -> usize {
        self.doc.physical_cores
    }

    pub fn threads_per_core(&self) -> usize {
        self.doc.threads_per_core
    }

    pub fn logical_cores(&self) -> usize {
        self.doc.physical_cores * self.doc.threads_per_core
    }

    pub fn pstates(&self) -> Vec<PState> {
        self.doc.pstates.iter().map(|p| p.ratio).collect()
    }

    pub fn pstate_entry(&self, p: PState) -> Option<&PStateEntry> {
        self.doc.pstates.iter().find(|e| e.ratio == p)
    }

    fn entry_checked(&self, core: usize, p: PState) -> Result<&PStateEntry, ProfileError> {
        match self.pstate_entry(p) {
            Some(e) if core < self.doc.physical_cores => Ok(e),
            _ => Err(ProfileError::UnknownCoreOrPState { core, pstate: p }),
        }
    }

    pub fn base_voltage(&self, p: PState) -> Option<Microvolts> {
        self.pstate_entry(p).map(|e| Microvolts::from_volts(e.base_voltage))
    }

    /// Measured top of the exploit window, before temperature adjustment.
    pub fn fault_voltage(&self, core: usize, p: PState) -> Result<Microvolts, ProfileError> {
        let e = self.entry_checked(core, p)?;
        Ok(Microvolts::from_volts(e.fault_voltage[core]))
    }

    pub fn exploit_window(&self, p: PState) -> Microvolts {
        let mv = self
            .pstate_entry(p)
            .and_then(|e| e.exploit_window_mv)
            .unwrap_or(self.doc.exploit_window_mv);
        Microvolts::from_mv(mv)
    }

    pub fn corrected_band(&self, p: PState) -> Microvolts {
        let mv = self
            .pstate_entry(p)
            .and_then(|e| e.corrected_band_mv)
            .unwrap_or(self.doc.corrected_band_mv);
        Microvolts::from_mv(mv)
    }

    pub fn noise(&self) -> Microvolts {
        Microvolts::from_mv(self.doc.noise_mv)
    }

    pub fn thermal(&self) -> &ThermalParams {
        &self.doc.thermal
    }

    pub fn crash_params(&self) -> &CrashParams {
        &self.doc.crash
    }

    /// Temperature shift of the window top relative to the measurement
    /// temperature of `p`.
    pub fn window_shift(&self, p: PState, temperature_c: f64) -> Microvolts {
        let t_ref = self
            .pstate_entry(p)
            .map(|e| e.reference_temperature_c)
            .unwrap_or(temperature_c);
        Microvolts::from_mv(self.doc.thermal.window_shift_mv_per_c * (temperature_c - t_ref))
    }

    /// Region band edges for `core` at `p` and the given core temperature.
    pub fn bands(&self, core: usize, p: PState, temperature_c: f64) -> Result<RegionBands, ProfileError> {
        let top = self.fault_voltage(core, p)? + self.window_shift(p, temperature_c);
        Ok(RegionBands {
            window_top: top,
            window_width: self.exploit_window(p),
            corrected_band: self.corrected_band(p),
        })
    }

    pub fn attack_scale(&self, p: PState) -> f64 {
        self.pstate_entry(p).map(|e| e.attack_scale).unwrap_or(0.0)
    }

    /// Piecewise-linear fault probability shape over window depth.
    pub fn shape(&self, depth: f64) -> f64 {
        let knots = &self.doc.fault_shape;
        if depth <= knots[0][0] {
            return knots[0][1];
        }
        for w in knots.windows(2) {
            let ([x0, y0], [x1, y1]) = (w[0], w[1]);
            if depth <= x1 {
                return y0 + (y1 - y0) * (depth - x0) / (x1 - x0);
            }
        }
        knots[knots.len() - 1][1]
    }

    pub fn byte_affinity(&self, core: usize) -> &[f64] {
        &self.doc.cores[core].byte_affinity
    }

    /// Byte positions with nonzero affinity.
    pub fn affinity_support(&self, core: usize) -> Vec<usize> {
        self.byte_affinity(core)
            .iter()
            .enumerate()
            .filter(|(_, w)| **w > 0.0)
            .map(|(i, _)| i)
            .collect()
    }

    pub(crate) fn byte_sampler(&self, core: usize) -> &WeightedIndex<f64> {
        &self.byte_samplers[core]
    }

    pub fn multiplicity(&self, core: usize) -> [f64; 3] {
        self.doc.cores[core].multiplicity
    }

    pub fn calibration_entry(&self, core: usize, scenario: Scenario) -> Option<&CalibrationEntry> {
        self.doc
            .calibration
            .iter()
            .find(|c| c.core == core && c.scenario == scenario)
    }

    /// Solved per-store base fault probability.
    pub fn base_probability(&self, core: usize, scenario: Scenario) -> Result<f64, ProfileError> {
        self.base_probability
            .get(&(core, scenario))
            .copied()
            .ok_or(ProfileError::MissingCalibration { core, scenario })
    }

    /// Where `p` sits between the lowest (0) and highest (1) P-state.
    pub fn pstate_position(&self, p: PState) -> f64 {
        let ratios = self.doc.pstates.iter().map(|e| e.ratio.ratio());
        let lo = ratios.clone().min().unwrap_or(1);
        let hi = ratios.max().unwrap_or(1);
        if hi == lo {
            return 0.0;
        }
        (f64::from(p.ratio().clamp(lo, hi) - lo) / f64::from(hi - lo)).clamp(0.0, 1.0)
    }

    /// Steady-state temperature of a victim core with `stressor` on its
    /// partner thread.
    pub fn victim_temperature(&self, p: PState, stressor: StressorKind) -> f64 {
        thermal::victim_steady_state(&self.doc.thermal, p, stressor)
    }
}

fn check_schema(doc: &ProfileDocument) -> Result<(), ProfileError> {
    let schema = |m: String| Err(ProfileError::Schema(m));
    if doc.schema_version != SCHEMA_VERSION {
        return schema(format!(
            "schema_version {} unsupported (expected {SCHEMA_VERSION})",
            doc.schema_version
        ));
    }
    if doc.physical_cores == 0 || doc.threads_per_core == 0 {
        return schema("physical_cores and threads_per_core must be positive".into());
    }
    if doc.physical_cores > 64 || doc.threads_per_core > 2 {
        return schema("at most 64 cores with up to 2 threads each".into());
    }
    if doc.cores.len() != doc.physical_cores {
        return schema(format!(
            "{} core entries for {} physical cores",
            doc.cores.len(),
            doc.physical_cores
        ));
    }
    if doc.pstates.is_empty() {
        return schema("no P-states".into());
    }
    for p in &doc.pstates {
        if p.fault_voltage.len() != doc.physical_cores {
            return schema(format!("P-state {}: fault_voltage needs one value per core", p.ratio));
        }
    }
    for (i, c) in doc.cores.iter().enumerate() {
        if c.byte_affinity.len() != WORD_BYTES {
            return schema(format!("core {i}: byte_affinity must have 16 weights"));
        }
    }
    if doc.fault_shape.len() < 2 {
        return schema("fault_shape needs at least two knots".into());
    }
    Ok(())
}

fn check_invariants(doc: &ProfileDocument) -> Result<(), ProfileError> {
    let finite_nonneg = |x: f64| x.is_finite() && x >= 0.0;
    if !finite_nonneg(doc.exploit_window_mv) || !finite_nonneg(doc.corrected_band_mv) || !finite_nonneg(doc.noise_mv) {
        return Err(invariant("window, band and noise widths must be nonnegative"));
    }
    if doc.pstates.is_empty() {
        return Err(invariant("at least one P-state is required"));
    }
    let mut seen = std::collections::BTreeSet::new();
    for p in &doc.pstates {
        if !seen.insert(p.ratio) {
            return Err(invariant(format!("duplicate P-state {}", p.ratio)));
        }
        if !finite_nonneg(p.attack_scale) {
            return Err(invariant(format!("P-state {}: negative attack_scale", p.ratio)));
        }
        for w in [p.exploit_window_mv, p.corrected_band_mv].into_iter().flatten() {
            if !finite_nonneg(w) {
                return Err(invariant(format!("P-state {}: negative band width", p.ratio)));
            }
        }
        for (core, &v) in p.fault_voltage.iter().enumerate() {
            if !(v.is_finite() && v > 0.0 && v < p.base_voltage) {
                return Err(invariant(format!(
                    "core {core} P-state {}: fault voltage {v} V must lie below base {} V",
                    p.ratio, p.base_voltage
                )));
            }
        }
    }
    for (i, c) in doc.cores.iter().enumerate() {
        if c.byte_affinity.iter().any(|w| !finite_nonneg(*w)) {
            return Err(invariant(format!("core {i}: negative byte affinity")));
        }
        if !c.byte_affinity.iter().any(|w| *w > 0.0) {
            return Err(invariant(format!("core {i}: byte affinity has no support")));
        }
        if c.multiplicity.iter().any(|p| !finite_nonneg(*p)) {
            return Err(invariant(format!("core {i}: negative multiplicity probability")));
        }
        let sum: f64 = c.multiplicity.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(invariant(format!(
                "core {i}: multiplicity probabilities sum to {sum}, not 1"
            )));
        }
    }
    let knots = &doc.fault_shape;
    if knots[0] != [0.0, 0.0] || knots[knots.len() - 1] != [1.0, 1.0] {
        return Err(invariant("fault_shape must run from (0,0) to (1,1)"));
    }
    if knots.windows(2).any(|w| w[1][0] <= w[0][0] || w[1][1] < w[0][1]) {
        return Err(invariant(
            "fault_shape must be strictly increasing in depth and nondecreasing",
        ));
    }
    let c = &doc.crash;
    let weights = [c.freeze_weight, c.hard_weight_low, c.hard_weight_high];
    if !finite_nonneg(c.base_hazard)
        || !finite_nonneg(c.hazard_per_mv)
        || weights.iter().any(|w| !finite_nonneg(*w))
        || c.freeze_weight + c.hard_weight_low.max(c.hard_weight_high) > 1.0
    {
        return Err(invariant(
            "crash weights must be nonnegative and leave room for kernel exceptions",
        ));
    }
    let t = &doc.thermal;
    if t.time_constant_s.is_nan() || t.time_constant_s <= 0.0 || t.reference_ratio == 0 {
        return Err(invariant("thermal time constant and reference ratio must be positive"));
    }
    for cal in &doc.calibration {
        if cal.core >= doc.physical_cores {
            return Err(invariant(format!("calibration for unknown core {}", cal.core)));
        }
        let Some(p) = doc.pstates.iter().find(|p| p.ratio == cal.pstate) else {
            return Err(invariant(format!("calibration at unknown P-state {}", cal.pstate)));
        };
        if !(0.0..1.0).contains(&cal.success_rate) {
            return Err(invariant(format!(
                "core {} {}: success rate {} outside [0, 1)",
                cal.core, cal.scenario, cal.success_rate
            )));
        }
        if cal.scenario.is_attack() && cal.success_rate > 0.0 && p.attack_scale <= 0.0 {
            return Err(invariant(format!(
                "core {} {}: calibrated at P-state {} whose attack scale is zero",
                cal.core, cal.scenario, cal.pstate
            )));
        }
    }
    let mut keys = std::collections::BTreeSet::new();
    for cal in &doc.calibration {
        if !keys.insert((cal.core, cal.scenario)) {
            return Err(invariant(format!(
                "duplicate calibration for core {} {}",
                cal.core, cal.scenario
            )));
        }
    }
    Ok(())
}
