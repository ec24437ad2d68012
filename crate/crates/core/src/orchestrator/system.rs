//! Machine preparation before any undervolting.

use serde::{Deserialize, Serialize};

use super::OrchestratorError;
use crate::msr::{self, MsrWrite, PState, PStateInterface};
use crate::processor::thermal::target_temperatures;
use crate::processor::{Assignment, InterferenceFlags, PlatformState, ProcessorProfile};
use crate::stressor::StressorKind;

pub const MSR_MISC_ENABLE: u32 = 0x1A0;
pub const MSR_THERM_INTERRUPT: u32 = 0x19B;
pub const MSR_PACKAGE_THERM_INTERRUPT: u32 = 0x1B2;
pub const MSR_PKG_POWER_LIMIT: u32 = 0x610;
pub const MSR_PP0_POWER_LIMIT: u32 = 0x638;
pub const MSR_PP1_POWER_LIMIT: u32 = 0x640;

/// Automatic thermal control circuit enable in `IA32_MISC_ENABLE`.
const TCC_ENABLE: u64 = 1 << 3;
const PL1_ENABLE: u64 = 1 << 15;
const PL2_ENABLE: u64 = 1 << 47;

/// Register contents assumed before setup touches them.
fn default_msr(address: u32) -> u64 {
    match address {
        MSR_MISC_ENABLE => 0x0085_0089,
        MSR_THERM_INTERRUPT => 0x0000_0003,
        MSR_PACKAGE_THERM_INTERRUPT => 0x0000_0003,
        MSR_PKG_POWER_LIMIT => 0x0042_8118_0014_8118,
        MSR_PP0_POWER_LIMIT | MSR_PP1_POWER_LIMIT => 0x0000_8000,
        _ => 0,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DriverFlags {
    pub acpi_cpufreq_disabled: bool,
    pub intel_pstate_disabled: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub attack_group: Vec<usize>,
    pub victim_group: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub partition: Partition,
    pub drivers_disabled: DriverFlags,
    pub pstate_pin: PState,
    pub interference_flags: InterferenceFlags,
    /// Logical core running the victim.
    pub victim_logical: usize,
    /// Logical partner of the victim, running the stressor or idle.
    pub stressor_logical: Option<usize>,
}

/// Partitions the cores, pins the P-state, switches off thermal and power
/// interference and places the victim on thread 0 of physical
/// `target_core` with `stressor` on its partner. Temperatures start at
/// their steady state for that workload.
pub fn setup_system(
    profile: &ProcessorProfile,
    pstate: PState,
    target_core: usize,
    stressor: StressorKind,
) -> Result<(PlatformState, SystemConfig, Vec<MsrWrite>), OrchestratorError> {
    let n = profile.physical_cores();
    if target_core >= n {
        return Err(OrchestratorError::InvalidCore(target_core));
    }
    if profile.pstate_entry(pstate).is_none() {
        return Err(OrchestratorError::UnknownPState(pstate));
    }
    let mut state = PlatformState::new(profile, pstate, 0);
    let logical = profile.logical_cores();
    let attack_physical = (0..n)
        .find(|c| *c != target_core)
        .ok_or(OrchestratorError::InvalidCore(target_core))?;
    let attack_group: Vec<usize> = (0..logical).filter(|l| l % n == attack_physical).collect();
    let victim_group: Vec<usize> = (0..logical).filter(|l| l % n != attack_physical).collect();

    state.assign(attack_physical, Assignment::Attacker)?;
    state.assign(target_core, Assignment::Victim)?;
    let partner = state.partner_of(target_core);
    if let (Some(p), true) = (partner, stressor != StressorKind::None) {
        state.assign(p, Assignment::Stressor(stressor))?;
    }

    let mut plan = msr::plan_pstate_request(pstate, PStateInterface::Eist);
    let cleared = |addr: u32, bits: u64| MsrWrite::new(addr, default_msr(addr) & !bits);
    plan.push(cleared(MSR_MISC_ENABLE, TCC_ENABLE)?);
    plan.push(MsrWrite::new(MSR_THERM_INTERRUPT, 0)?);
    plan.push(MsrWrite::new(MSR_PACKAGE_THERM_INTERRUPT, 0)?);
    plan.push(cleared(MSR_PP0_POWER_LIMIT, PL1_ENABLE)?);
    plan.push(cleared(MSR_PP1_POWER_LIMIT, PL1_ENABLE)?);
    plan.push(cleared(MSR_PKG_POWER_LIMIT, PL1_ENABLE | PL2_ENABLE)?);
    for w in &plan {
        state.apply_msr_write(w)?;
    }
    state.hw_interference_disabled = InterferenceFlags {
        thermal_control_circuit: true,
        thermal_interrupt: true,
        pp0_pp1_limits: true,
        package_limits: true,
    };
    state.temperatures_c = target_temperatures(profile, pstate, &state.assignments);

    let config = SystemConfig {
        partition: Partition {
            attack_group,
            victim_group,
        },
        drivers_disabled: DriverFlags {
            acpi_cpufreq_disabled: true,
            intel_pstate_disabled: true,
        },
        pstate_pin: pstate,
        interference_flags: state.hw_interference_disabled,
        victim_logical: target_core,
        stressor_logical: partner,
    };
    Ok((state, config, plan))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::processor::bundled_profile;

    #[test]
    fn setup_on_four_cores() {
        let prof = bundled_profile("i7-7700K").unwrap();
        let p = PState::new(0x1B).unwrap();
        let (state, cfg, plan) = setup_system(&prof, p, 1, StressorKind::Listing2ShiftLoop).unwrap();
        assert_eq!(plan[0], MsrWrite::new(0x1AA, 1).unwrap());
        assert_eq!(plan[1].address, 0x199);
        assert_eq!((plan[1].value >> 8) & 0xFF, 0x1B);
        assert_eq!(cfg.partition.attack_group, vec![0, 4]);
        assert_eq!(cfg.partition.victim_group, vec![1, 2, 3, 5, 6, 7]);
        assert!(cfg.interference_flags.all_disabled());
        assert_eq!(
            state.assignments[5],
            Assignment::Stressor(StressorKind::Listing2ShiftLoop)
        );
        assert_eq!(state.assignments[4], Assignment::Idle);
        assert_eq!(state.msrs[&MSR_MISC_ENABLE] & TCC_ENABLE, 0);
        assert_eq!(state.msrs[&MSR_PKG_POWER_LIMIT] & (PL1_ENABLE | PL2_ENABLE), 0);
        let hottest = (0..4).max_by(|a, b| state.temperatures_c[*a].total_cmp(&state.temperatures_c[*b]));
        assert_eq!(hottest, Some(1));
        assert!((state.temperatures_c[1] - 40.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_unknown_core_and_pstate() {
        let prof = bundled_profile("i7-7700K").unwrap();
        let p = PState::new(0x1B).unwrap();
        assert!(matches!(
            setup_system(&prof, p, 4, StressorKind::None),
            Err(OrchestratorError::InvalidCore(4))
        ));
        assert!(matches!(
            setup_system(&prof, PState::new(0x1C).unwrap(), 0, StressorKind::None),
            Err(OrchestratorError::UnknownPState(_))
        ));
    }

    #[test]
    fn target_zero_uses_core_one_for_the_attacker() {
        let prof = bundled_profile("i7-8700K").unwrap();
        let (_, cfg, _) = setup_system(&prof, PState::new(0x1B).unwrap(), 0, StressorKind::None).unwrap();
        assert_eq!(cfg.partition.attack_group, vec![1, 7]);
        assert_eq!(cfg.partition.victim_group.len(), 10);
    }
}
