//! Victim and test programs executed under fault injection.

pub mod campaign;
pub mod injector;
pub mod programs;
pub mod sha256;
pub mod test_loop;

pub use campaign::{
    run_campaign, Campaign, CampaignResult, CampaignSpec, RunTally, TryOutcome, DEFAULT_CRASH_BUDGET,
    DEFAULT_GUARD_SLICES,
};
pub use injector::Injector;
pub use programs::{bundled_program, bundled_program_names, bundled_source, VictimProgram};
pub use test_loop::{run_test_loop, Outcome, RunOutcome};

use crate::isa::ExecError;
use crate::processor::{PlatformState, ProcessorProfile, ProfileError};
use crate::scenario::Scenario;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error("victim program failed: {0}")]
    Exec(#[from] ExecError),
    #[error("victim program has no fault-eligible store")]
    NoEligibleStore,
    #[error("campaign aborted after {} crashes", .0.result.crashes)]
    AbortedByCrash(Box<Campaign>),
}

/// Runs `tries` enclave calls of the control-flow PoC on physical
/// `target_core` and returns how many took the recovery branch.
pub fn run_poc_enclave(
    profile: &ProcessorProfile,
    env: &PlatformState,
    target_core: usize,
    tries: usize,
    seed: u64,
) -> Result<u64, HarnessError> {
    let spec = CampaignSpec::new(Scenario::Poc, target_core, 1, tries, seed);
    Ok(run_campaign(profile, env, &spec)?.result.successes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HmacPayload {
    Bytes32,
    Kib1,
}

impl HmacPayload {
    pub fn scenario(self) -> Scenario {
        match self {
            HmacPayload::Bytes32 => Scenario::Hmac32,
            HmacPayload::Kib1 => Scenario::Hmac1k,
        }
    }
}

/// HMAC validation attack: `runs × tries` validations of a correct MAC,
/// counting failed validations as successes.
pub fn run_hmac_victim(
    profile: &ProcessorProfile,
    env: &PlatformState,
    target_core: usize,
    payload: HmacPayload,
    runs: usize,
    tries: usize,
    seed: u64,
) -> Result<CampaignResult, HarnessError> {
    let spec = CampaignSpec::new(payload.scenario(), target_core, runs, tries, seed);
    Ok(run_campaign(profile, env, &spec)?.result)
}
