//! Simulated machine state shared by all cores of one processor.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::profile::ProcessorProfile;
use super::region::Microvolts;
use crate::msr::{self, Command, Domain, MsrWrite, PState, VoltagePayload};
use crate::stressor::{StressorKind, StressorSpec};

/// What a logical core is running.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Assignment {
    Idle,
    Attacker,
    Victim,
    Stressor(StressorKind),
}

/// Hardware mechanisms that have been switched off (true = disabled).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterferenceFlags {
    pub thermal_control_circuit: bool,
    pub thermal_interrupt: bool,
    pub pp0_pp1_limits: bool,
    pub package_limits: bool,
}

impl InterferenceFlags {
    pub fn all_disabled(&self) -> bool {
        self.thermal_control_circuit && self.thermal_interrupt && self.pp0_pp1_limits && self.package_limits
    }
}

/// One simulated processor. Logical core `l` is thread `l / n` of
/// physical core `l % n`, so `l` and `l + n` are hyperthread partners.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatformState {
    pub pstate: PState,
    /// Applied mailbox offset per voltage domain, indexed by `Domain`.
    pub offsets_mv: [i16; 4],
    /// Per physical core.
    pub temperatures_c: Vec<f64>,
    /// Per logical core.
    pub assignments: Vec<Assignment>,
    pub hw_interference_disabled: InterferenceFlags,
    pub rng_seed: u64,
    /// Last value written to each simulated MSR.
    pub msrs: BTreeMap<u32, u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PlatformError {
    #[error("logical core {0} does not exist")]
    NoSuchCore(usize),
    #[error("logical core {existing} is already the victim")]
    VictimTaken { existing: usize },
}

impl PlatformState {
    pub fn new(profile: &ProcessorProfile, pstate: PState, rng_seed: u64) -> Self {
        PlatformState {
            pstate,
            offsets_mv: [0; 4],
            temperatures_c: vec![profile.thermal().ambient_c; profile.physical_cores()],
            assignments: vec![Assignment::Idle; profile.logical_cores()],
            hw_interference_disabled: InterferenceFlags::default(),
            rng_seed,
            msrs: BTreeMap::new(),
        }
    }

    pub fn physical_cores(&self) -> usize {
        self.temperatures_c.len()
    }

    pub fn physical_of(&self, logical: usize) -> usize {
        logical % self.physical_cores()
    }

    /// Hyperthread partner of `logical`, if the core has two threads.
    pub fn partner_of(&self, logical: usize) -> Option<usize> {
        let n = self.physical_cores();
        if self.assignments.len() < 2 * n {
            return None;
        }
        Some((logical + n) % (2 * n))
    }

    pub fn victim(&self) -> Option<usize> {
        self.assignments.iter().position(|a| *a == Assignment::Victim)
    }

    pub fn victim_physical(&self) -> Option<usize> {
        self.victim().map(|l| self.physical_of(l))
    }

    /// Assigns a workload; at most one logical core may hold the victim.
    pub fn assign(&mut self, logical: usize, a: Assignment) -> Result<(), PlatformError> {
        if logical >= self.assignments.len() {
            return Err(PlatformError::NoSuchCore(logical));
        }
        if a == Assignment::Victim {
            if let Some(existing) = self.victim().filter(|v| *v != logical) {
                return Err(PlatformError::VictimTaken { existing });
            }
        }
        self.assignments[logical] = a;
        Ok(())
    }

    /// Stressor running next to the victim (`None` when idle).
    pub fn victim_stressor(&self) -> StressorSpec {
        let kind = self
            .victim()
            .and_then(|v| self.partner_of(v))
            .and_then(|p| match self.assignments[p] {
                Assignment::Stressor(kind) => Some(kind),
                _ => None,
            })
            .unwrap_or(StressorKind::None);
        kind.spec()
    }

    pub fn core_offset_mv(&self) -> i16 {
        self.offsets_mv[Domain::Cores.index()]
    }

    /// Shared core-domain voltage before noise.
    pub fn nominal_voltage(&self, profile: &ProcessorProfile) -> Option<Microvolts> {
        profile
            .base_voltage(self.pstate)
            .map(|base| base + Microvolts(i64::from(self.core_offset_mv()) * 1000))
    }

    pub fn temperature_of(&self, physical: usize) -> f64 {
        self.temperatures_c[physical]
    }

    /// Applies a register write to the simulated MSR file. Mailbox voltage
    /// writes and P-state requests take effect immediately.
    pub fn apply_msr_write(&mut self, w: &MsrWrite) -> Result<(), msr::MsrError> {
        match w.address {
            msr::MSR_OC_MAILBOX => {
                let cmd = msr::decode_mailbox(w.value)?;
                if cmd.command == Command::WriteVoltage {
                    if let VoltagePayload::Offset { mv } = cmd.payload {
                        self.offsets_mv[cmd.domain.index()] = mv;
                    }
                }
            }
            msr::MSR_PERF_CTL => {
                if let Ok(p) = PState::new(((w.value >> 8) & 0xFF) as u8) {
                    self.pstate = p;
                }
            }
            msr::MSR_HWP_REQUEST => {
                if let Ok(p) = PState::new(((w.value >> 16) & 0xFF) as u8) {
                    self.pstate = p;
                }
            }
            _ => {}
        }
        self.msrs.insert(w.address, w.value);
        Ok(())
    }

    /// Sets the core-domain offset through the mailbox and returns the write.
    pub fn set_core_offset(&mut self, mv: i16) -> Result<MsrWrite, msr::MsrError> {
        let w = MsrWrite::mailbox(&msr::MailboxCommand::write_offset(Domain::Cores, mv))?;
        self.apply_msr_write(&w)?;
        Ok(w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::processor::profile::bundled_profile;

    #[test]
    fn single_victim() {
        let prof = bundled_profile("i7-7700K").unwrap();
        let mut s = PlatformState::new(&prof, PState::new(0x1B).unwrap(), 1);
        s.assign(1, Assignment::Victim).unwrap();
        assert_eq!(
            s.assign(2, Assignment::Victim),
            Err(PlatformError::VictimTaken { existing: 1 })
        );
        s.assign(1, Assignment::Victim).unwrap();
        assert_eq!(s.partner_of(1), Some(5));
        assert_eq!(s.partner_of(5), Some(1));
        assert_eq!(s.physical_of(5), 1);
        assert!(s.assign(8, Assignment::Idle).is_err());
    }

    #[test]
    fn offset_is_shared_by_all_cores() {
        let prof = bundled_profile("i7-7700K").unwrap();
        let mut s = PlatformState::new(&prof, PState::new(0x1B).unwrap(), 1);
        let before = s.nominal_voltage(&prof).unwrap();
        let w = s.set_core_offset(-250).unwrap();
        assert_eq!(w.value >> 63, 1);
        let after = s.nominal_voltage(&prof).unwrap();
        assert_eq!(before.0 - after.0, 250_000);
        assert_eq!(after, Microvolts::from_volts(0.700));
    }

    #[test]
    fn perf_ctl_write_moves_pstate() {
        let prof = bundled_profile("i7-7700K").unwrap();
        let mut s = PlatformState::new(&prof, PState::new(0x1B).unwrap(), 1);
        for w in msr::plan_pstate_request(PState::new(0x20).unwrap(), msr::PStateInterface::Eist) {
            s.apply_msr_write(&w).unwrap();
        }
        assert_eq!(s.pstate.ratio(), 0x20);
        assert_eq!(s.msrs[&0x1AA], 1);
    }
}
