//! First-order per-core temperature model.

use serde::{Deserialize, Serialize};

use super::platform::{Assignment, PlatformState};
use super::profile::ProcessorProfile;
use crate::msr::PState;
use crate::stressor::StressorKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermalParams {
    pub ambient_c: f64,
    pub attacker_rise_c: f64,
    pub victim_rise_c: f64,
    /// P-state at which the rises above are quoted; heat scales with ratio.
    pub reference_ratio: u8,
    pub time_constant_s: f64,
    /// Upward shift of the exploit window per degree above the
    /// measurement temperature.
    pub window_shift_mv_per_c: f64,
}

impl ThermalParams {
    fn pstate_factor(&self, p: PState) -> f64 {
        f64::from(p.ratio()) / f64::from(self.reference_ratio)
    }

    fn rise(&self, a: Assignment) -> f64 {
        match a {
            Assignment::Idle => 0.0,
            Assignment::Attacker => self.attacker_rise_c,
            Assignment::Victim => self.victim_rise_c,
            Assignment::Stressor(kind) => kind.spec().temperature_boost_c,
        }
    }

    /// Steady-state temperature of a physical core running `threads`.
    pub fn target(&self, p: PState, threads: impl IntoIterator<Item = Assignment>) -> f64 {
        let heat: f64 = threads.into_iter().map(|a| self.rise(a)).sum();
        self.ambient_c + self.pstate_factor(p) * heat
    }
}

pub fn victim_steady_state(params: &ThermalParams, p: PState, stressor: StressorKind) -> f64 {
    params.target(p, [Assignment::Victim, Assignment::Stressor(stressor)])
}

/// Per-physical-core steady-state targets for a workload map.
pub fn target_temperatures(profile: &ProcessorProfile, p: PState, workload_map: &[Assignment]) -> Vec<f64> {
    let n = profile.physical_cores();
    (0..n)
        .map(|core| {
            let threads = (0..profile.threads_per_core())
                .map(|t| workload_map.get(core + t * n).copied().unwrap_or(Assignment::Idle));
            profile.thermal().target(p, threads)
        })
        .collect()
}

/// Relaxes every core toward its target for `dt_s` seconds under
/// `workload_map`, which becomes the state's assignment.
pub fn update_temperature(
    profile: &ProcessorProfile,
    state: &PlatformState,
    dt_s: f64,
    workload_map: &[Assignment],
) -> PlatformState {
    let mut next = state.clone();
    next.assignments = workload_map.to_vec();
    let alpha = 1.0 - (-dt_s.max(0.0) / profile.thermal().time_constant_s).exp();
    let targets = target_temperatures(profile, state.pstate, workload_map);
    for (t, target) in next.temperatures_c.iter_mut().zip(targets) {
        *t += (target - *t) * alpha;
    }
    next
}
