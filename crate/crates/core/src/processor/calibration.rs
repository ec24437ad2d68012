//! Solves per-store fault probabilities from victim-level success rates.
//!
//! A try of scenario `s` executes `n` eligible stores, each with an
//! independent noise draw, so the try succeeds with `1 - (1 - q)^n` where
//! `q` is the per-store fault probability averaged over the noise. The
//! calibration inverts that relation at the window top with the reference
//! stressor, then `q` is inverted for the base scale by bisection.

use std::collections::BTreeMap;

use super::profile::{ProcessorProfile, ProfileError, REFERENCE_STRESSOR};
use super::region::{Microvolts, RegionBands, VoltageRegion};
use crate::msr::PState;
use crate::scenario::Scenario;
use crate::stressor::StressorKind;

/// Exact expectation, over the discrete uniform noise, of the per-store
/// fault probability `min(1, scale * shape(depth))`.
pub fn expected_store_fault_probability(
    profile: &ProcessorProfile,
    bands: &RegionBands,
    nominal: Microvolts,
    scale: f64,
) -> f64 {
    let noise = profile.noise().0;
    let total = (2 * noise + 1) as f64;
    // Only noise values that land in the window contribute.
    let lo = (bands.instability_boundary().0 + 1 - nominal.0).max(-noise);
    let hi = (bands.window_top.0 - nominal.0).min(noise);
    let mut sum = 0.0;
    for u in lo..=hi {
        let v = Microvolts(nominal.0 + u);
        debug_assert_eq!(bands.classify(v), VoltageRegion::ExploitWindow);
        sum += (scale * profile.shape(bands.window_depth(v))).min(1.0);
    }
    sum / total
}

fn per_store_target(success_rate: f64, stores_per_try: usize) -> f64 {
    1.0 - (1.0 - success_rate).powf(1.0 / stores_per_try as f64)
}

/// Operating point a calibration entry refers to: the window top of the
/// core at its P-state, at the victim temperature with the reference
/// stressor.
fn operating_bands(
    profile: &ProcessorProfile,
    core: usize,
    pstate: PState,
    stressor: StressorKind,
) -> Result<RegionBands, ProfileError> {
    profile.bands(core, pstate, profile.victim_temperature(pstate, stressor))
}

fn scenario_scale(profile: &ProcessorProfile, scenario: Scenario, pstate: PState) -> f64 {
    if scenario.is_attack() {
        profile.attack_scale(pstate)
    } else {
        1.0
    }
}

pub(super) fn solve_profile(profile: &ProcessorProfile) -> Result<BTreeMap<(usize, Scenario), f64>, ProfileError> {
    let mut out = BTreeMap::new();
    for cal in &profile.document().calibration {
        let base = if cal.success_rate == 0.0 {
            0.0
        } else {
            let bands = operating_bands(profile, cal.core, cal.pstate, REFERENCE_STRESSOR)?;
            let nominal = profile.fault_voltage(cal.core, cal.pstate)?;
            let q = per_store_target(cal.success_rate, cal.scenario.eligible_stores_per_try());
            let f = |c: f64| expected_store_fault_probability(profile, &bands, nominal, c);
            let ceiling = f(1e12);
            if q >= ceiling {
                return Err(ProfileError::Invariant(format!(
                    "core {} {}: success rate {} needs per-store probability {q:.4}, above the reachable {ceiling:.4}",
                    cal.core, cal.scenario, cal.success_rate
                )));
            }
            let mut hi = 1.0;
            while f(hi) < q {
                hi *= 2.0;
            }
            let mut lo = 0.0;
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if f(mid) < q {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let multiplier =
                REFERENCE_STRESSOR.spec().fault_multiplier * scenario_scale(profile, cal.scenario, cal.pstate);
            0.5 * (lo + hi) / multiplier
        };
        out.insert((cal.core, cal.scenario), base);
    }
    Ok(out)
}

/// Forward model: expected success rate per try of `scenario` on `core`
/// at P-state `pstate` and nominal voltage `nominal`, with `stressor` on
/// the partner thread and the core at its steady-state temperature.
pub fn predicted_success_rate(
    profile: &ProcessorProfile,
    core: usize,
    scenario: Scenario,
    pstate: PState,
    stressor: StressorKind,
    nominal: Microvolts,
) -> Result<f64, ProfileError> {
    let bands = operating_bands(profile, core, pstate, stressor)?;
    let scale = profile.base_probability(core, scenario)?
        * stressor.spec().fault_multiplier
        * scenario_scale(profile, scenario, pstate);
    let q = expected_store_fault_probability(profile, &bands, nominal, scale);
    Ok(1.0 - (1.0 - q).powi(scenario.eligible_stores_per_try() as i32))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::processor::profile::bundled_profile;

    #[test]
    fn forward_model_reproduces_calibration_targets() {
        for name in ["i7-7700K", "i7-8700K", "i7-7700"] {
            let prof = bundled_profile(name).unwrap();
            for cal in &prof.document().calibration {
                let nominal = prof.fault_voltage(cal.core, cal.pstate).unwrap();
                let rate =
                    predicted_success_rate(&prof, cal.core, cal.scenario, cal.pstate, REFERENCE_STRESSOR, nominal)
                        .unwrap();
                assert!(
                    (rate - cal.success_rate).abs() < 1e-9,
                    "{name} core {} {}: {rate} vs {}",
                    cal.core,
                    cal.scenario,
                    cal.success_rate
                );
            }
        }
    }

    #[test]
    fn expectation_matches_brute_force_average() {
        let prof = bundled_profile("i7-7700K").unwrap();
        let p = PState::new(0x1B).unwrap();
        let bands = prof.bands(1, p, 40.0).unwrap();
        let nominal = prof.fault_voltage(1, p).unwrap();
        let noise = prof.noise().0;
        let brute: f64 = (-noise..=noise)
            .map(|u| {
                let v = Microvolts(nominal.0 + u);
                match bands.classify(v) {
                    VoltageRegion::ExploitWindow => (0.7 * prof.shape(bands.window_depth(v))).min(1.0),
                    _ => 0.0,
                }
            })
            .sum::<f64>()
            / (2 * noise + 1) as f64;
        let fast = expected_store_fault_probability(&prof, &bands, nominal, 0.7);
        assert!((brute - fast).abs() < 1e-12);
    }

    #[test]
    fn unreachable_rate_is_rejected() {
        let prof = bundled_profile("i7-7700K").unwrap();
        let mut doc = prof.document().clone();
        let cal = doc
            .calibration
            .iter_mut()
            .find(|c| c.scenario == Scenario::TestLoop)
            .unwrap();
        cal.success_rate = 0.9;
        assert!(matches!(
            ProcessorProfile::from_document(doc),
            Err(ProfileError::Invariant(_))
        ));
    }

    #[test]
    fn listing2_beats_twofish_on_poc() {
        let prof = bundled_profile("i7-7700K").unwrap();
        let p = PState::new(0x1B).unwrap();
        let nominal = prof.fault_voltage(1, p).unwrap();
        let rate = |s| predicted_success_rate(&prof, 1, Scenario::Poc, p, s, nominal).unwrap();
        let l2 = rate(StressorKind::Listing2ShiftLoop);
        let tf = rate(StressorKind::TwofishAvx);
        let none = rate(StressorKind::None);
        assert!(l2 > tf && tf > none, "{l2} {tf} {none}");
        assert!((tf - 0.08).abs() < 0.01, "twofish {tf}");
    }
}
