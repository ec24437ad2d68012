//! The attack itself: repeated victim runs at the planned offset.

use super::phase1::{VoltagePlan, STEP_MV};
use super::OrchestratorError;
use crate::harness::{run_campaign, Campaign, CampaignSpec, HarnessError, DEFAULT_CRASH_BUDGET, DEFAULT_GUARD_SLICES};
use crate::mca::McaConfig;
use crate::msr::{OFFSET_MAX_MV, OFFSET_MIN_MV};
use crate::processor::{PlatformState, ProcessorProfile};
use crate::rng::derive_seed;
use crate::scenario::Scenario;

const PHASE3_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    pub victim: Scenario,
    pub target_core: usize,
    pub runs: usize,
    pub tries_per_run: usize,
    pub seed: u64,
    /// Replaces the plan's offset for the target core.
    pub offset_override_mv: Option<i16>,
    pub guard_slices: u64,
    pub crash_budget: u64,
    pub mca: McaConfig,
}

impl AttackConfig {
    pub fn new(victim: Scenario, target_core: usize, seed: u64) -> Self {
        AttackConfig {
            victim,
            target_core,
            runs: 5,
            tries_per_run: 10_000,
            seed,
            offset_override_mv: None,
            guard_slices: DEFAULT_GUARD_SLICES,
            crash_budget: DEFAULT_CRASH_BUDGET,
            mca: McaConfig::default(),
        }
    }
}

pub fn check_offset(mv: i16) -> Result<i16, OrchestratorError> {
    if mv % STEP_MV != 0 || !(OFFSET_MIN_MV..=OFFSET_MAX_MV).contains(&mv) {
        return Err(OrchestratorError::InvalidOffset(mv));
    }
    Ok(mv)
}

/// Undervolts `state` (prepared by `setup_system` for the target core) to
/// the planned offset and runs the campaign. Undervolting is held only
/// around the victim's fault-prone window plus the guard slices.
pub fn phase3_attack(
    profile: &ProcessorProfile,
    state: &PlatformState,
    plan: &VoltagePlan,
    cfg: &AttackConfig,
) -> Result<Campaign, OrchestratorError> {
    let core = cfg.target_core;
    if state.victim_physical() != Some(core) {
        return Err(OrchestratorError::VictimNotPlaced(core));
    }
    if plan.pstate != state.pstate {
        return Err(OrchestratorError::PlanMismatch {
            plan: plan.pstate,
            state: state.pstate,
        });
    }
    let offset = match cfg.offset_override_mv {
        Some(mv) => mv,
        None => {
            plan.core(core)
                .ok_or(OrchestratorError::InvalidCore(core))?
                .chosen_offset_mv
        }
    };
    let mut env = state.clone();
    env.set_core_offset(check_offset(offset)?)?;
    let spec = CampaignSpec {
        scenario: cfg.victim,
        target_core: core,
        runs: cfg.runs,
        tries_per_run: cfg.tries_per_run,
        seed: derive_seed(cfg.seed, PHASE3_STREAM),
        guard_slices: cfg.guard_slices,
        crash_budget: cfg.crash_budget,
        mca: cfg.mca,
    };
    match run_campaign(profile, &env, &spec) {
        Ok(mut c) => {
            c.result.seed = cfg.seed;
            Ok(c)
        }
        Err(HarnessError::AbortedByCrash(mut c)) => {
            c.result.seed = cfg.seed;
            Err(OrchestratorError::AbortedByCrash(c))
        }
        Err(e) => Err(e.into()),
    }
}
