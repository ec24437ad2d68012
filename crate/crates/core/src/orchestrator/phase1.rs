//! Offline search for the exploitable voltage window.

use serde::{Deserialize, Serialize};

use super::system::setup_system;
use super::OrchestratorError;
use crate::harness::{run_test_loop, Outcome, VictimProgram};
use crate::mca::McaModel;
use crate::msr::{PState, OFFSET_MIN_MV};
use crate::processor::{Microvolts, ProcessorProfile};
use crate::rng::{derive_seed, StreamKey};
use crate::stressor::StressorKind;

/// Offset granularity used throughout the workflow.
pub const STEP_MV: i16 = 5;
/// Lowest offset that is a multiple of the step and still encodable.
pub const FLOOR_MV: i16 = OFFSET_MIN_MV - OFFSET_MIN_MV % STEP_MV;

const PHASE1_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorePlan {
    pub core: usize,
    /// Nominal voltage at which the first fault appeared.
    pub window_top: Microvolts,
    pub chosen_offset_mv: i16,
    pub crashes_during_search: u32,
}

impl CorePlan {
    pub fn window_top_volts(&self) -> f64 {
        self.window_top.volts()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoltagePlan {
    pub pstate: PState,
    pub step_mv: i16,
    pub cores: Vec<CorePlan>,
}

impl VoltagePlan {
    pub fn core(&self, core: usize) -> Option<&CorePlan> {
        self.cores.iter().find(|c| c.core == core)
    }

    pub fn crashes_during_search(&self) -> u32 {
        self.cores.iter().map(|c| c.crashes_during_search).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Phase1Options {
    pub start_offset_mv: i16,
    pub floor_mv: i16,
    /// Test-loop iterations per voltage level.
    pub max_iters: u64,
    /// Failed attempts at one level, with no fault seen, before giving up.
    pub max_consecutive_crashes: u32,
    pub stressor: StressorKind,
    pub seed: u64,
}

impl Default for Phase1Options {
    fn default() -> Self {
        Phase1Options {
            start_offset_mv: 0,
            floor_mv: FLOOR_MV,
            max_iters: 10_000,
            max_consecutive_crashes: 3,
            stressor: StressorKind::Listing2ShiftLoop,
            seed: 0,
        }
    }
}

/// Descends in 5 mV steps on each core of an offline copy of the target
/// until the test program faults. A crash reboots the machine and the
/// descent resumes from the last level that ran cleanly.
pub fn phase1_find_window(
    profile: &ProcessorProfile,
    victim: &VictimProgram,
    pstate: PState,
    opts: &Phase1Options,
) -> Result<VoltagePlan, OrchestratorError> {
    if opts.start_offset_mv % STEP_MV != 0 || opts.floor_mv % STEP_MV != 0 {
        return Err(OrchestratorError::InvalidOffset(opts.start_offset_mv));
    }
    let mca = McaModel::default();
    let seed = derive_seed(opts.seed, PHASE1_STREAM);
    let mut cores = Vec::new();
    for core in 0..profile.physical_cores() {
        let (mut state, _, _) = setup_system(profile, pstate, core, opts.stressor)?;
        let mut offset = opts.start_offset_mv;
        let mut last_safe = offset;
        let mut crashes = 0u32;
        // Deepest level that stopped the machine, and how often it did.
        let mut failing: Option<(i16, u32)> = None;
        let mut attempt = 0usize;
        let plan = loop {
            state.set_core_offset(offset)?;
            let mut rng = StreamKey::new(seed, core, usize::from(pstate.ratio()), attempt).rng();
            attempt += 1;
            let out = run_test_loop(profile, &state, core, victim, opts.max_iters, &mca, &mut rng)?;
            match out.outcome {
                Outcome::Mismatch { .. } => {
                    break CorePlan {
                        core,
                        window_top: state.nominal_voltage(profile).expect("pstate checked by setup"),
                        chosen_offset_mv: offset,
                        crashes_during_search: crashes,
                    }
                }
                Outcome::Match => {
                    if failing.is_some_and(|(level, _)| offset <= level) {
                        failing = None;
                    }
                    last_safe = offset;
                    if offset - STEP_MV < opts.floor_mv {
                        return Err(OrchestratorError::NoWindowFound { core, pstate, crashes });
                    }
                    offset -= STEP_MV;
                }
                Outcome::Crash(_) | Outcome::ProcessorException(_) => {
                    if matches!(out.outcome, Outcome::Crash(_)) {
                        crashes += 1;
                    }
                    let count = match failing {
                        Some((level, n)) if level == offset => n + 1,
                        _ => 1,
                    };
                    failing = Some((offset, count));
                    if count >= opts.max_consecutive_crashes {
                        return Err(OrchestratorError::NoWindowFound { core, pstate, crashes });
                    }
                    // Reboot: the descent restarts at the last clean level.
                    offset = last_safe;
                }
            }
        };
        cores.push(plan);
    }
    Ok(VoltagePlan {
        pstate,
        step_mv: STEP_MV,
        cores,
    })
}
