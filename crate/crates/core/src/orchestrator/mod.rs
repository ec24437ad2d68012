//! Three-phase attack workflow: find the voltage window offline, probe
//! the cores of the target, then attack the victim.

pub mod phase1;
pub mod phase2;
pub mod phase3;
pub mod system;

pub use phase1::{phase1_find_window, CorePlan, Phase1Options, VoltagePlan, STEP_MV};
pub use phase2::{phase2_probe_cores, FaultStats, ProbeOptions, ProbeReport};
pub use phase3::{phase3_attack, AttackConfig};
pub use system::{setup_system, DriverFlags, Partition, SystemConfig};

pub use crate::harness::{Campaign, CampaignResult};

use crate::harness::HarnessError;
use crate::msr::{MsrError, PState};
use crate::processor::{PlatformError, ProfileError};

#[derive(Debug, thiserror::Error)]
pub enum OrchestratorError {
    #[error("core {0} is not a physical core of this processor")]
    InvalidCore(usize),
    #[error("P-state {0} is not characterized in the profile")]
    UnknownPState(PState),
    #[error("offset {0} mV is not a multiple of 5 within the mailbox range")]
    InvalidOffset(i16),
    #[error("no exploitable window found on core {core} at P-state {pstate} ({crashes} crashes)")]
    NoWindowFound { core: usize, pstate: PState, crashes: u32 },
    #[error("victim is not placed on core {0}")]
    VictimNotPlaced(usize),
    #[error("plan is for P-state {plan} but the machine runs {state}")]
    PlanMismatch { plan: PState, state: PState },
    #[error("campaign aborted after {} crashes", .0.result.crashes)]
    AbortedByCrash(Box<Campaign>),
    #[error("probing aborted by crashes")]
    ProbeAborted(Box<ProbeReport>),
    #[error(transparent)]
    Harness(HarnessError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Msr(#[from] MsrError),
    #[error(transparent)]
    Platform(#[from] PlatformError),
}

impl From<HarnessError> for OrchestratorError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::AbortedByCrash(c) => OrchestratorError::AbortedByCrash(c),
            HarnessError::Profile(p) => OrchestratorError::Profile(p),
            other => OrchestratorError::Harness(other),
        }
    }
}
