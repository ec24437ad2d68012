//! Online probing of every core at its planned offset.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::phase1::VoltagePlan;
use super::system::setup_system;
use super::OrchestratorError;
use crate::harness::{run_test_loop, Outcome, VictimProgram, DEFAULT_CRASH_BUDGET};
use crate::mca::McaModel;
use crate::processor::ProcessorProfile;
use crate::rng::{derive_seed, StreamKey};
use crate::stressor::StressorKind;

const PHASE2_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultStats {
    pub core: usize,
    pub offset_mv: i16,
    pub tries: u64,
    pub faults: u64,
    pub crashes: u64,
    pub exceptions: u64,
    pub fault_rate: f64,
    /// Faulty words that touched each byte position.
    pub byte_histogram: [u64; 16],
    /// Faults with one, two, and three or more flipped bits.
    pub multiplicity_histogram: [u64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub cores: Vec<FaultStats>,
    pub most_fault_prone: Option<usize>,
    pub aborted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeOptions {
    pub tries_per_core: usize,
    pub stressor: StressorKind,
    pub seed: u64,
    pub crash_budget: u64,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        ProbeOptions {
            tries_per_core: 10_000,
            stressor: StressorKind::Listing2ShiftLoop,
            seed: 0,
            crash_budget: DEFAULT_CRASH_BUDGET,
        }
    }
}

/// Runs the test program `tries_per_core` times on each core in turn, one
/// iteration per try, at the offset the plan chose for that core.
pub fn phase2_probe_cores(
    profile: &ProcessorProfile,
    plan: &VoltagePlan,
    victim: &VictimProgram,
    opts: &ProbeOptions,
) -> Result<ProbeReport, OrchestratorError> {
    let mca = McaModel::default();
    let seed = derive_seed(opts.seed, PHASE2_STREAM);
    let mut report = ProbeReport {
        cores: Vec::new(),
        most_fault_prone: None,
        aborted: false,
    };
    let mut crashes = 0;
    for cp in &plan.cores {
        let (mut state, _, _) = setup_system(profile, plan.pstate, cp.core, opts.stressor)?;
        state.set_core_offset(cp.chosen_offset_mv)?;
        let outcomes = (0..opts.tries_per_core)
            .into_par_iter()
            .map(|trial| {
                let mut rng = StreamKey::new(seed, cp.core, 0, trial).rng();
                run_test_loop(profile, &state, cp.core, victim, 1, &mca, &mut rng).map(|o| o.outcome)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut stats = FaultStats {
            core: cp.core,
            offset_mv: cp.chosen_offset_mv,
            tries: 0,
            faults: 0,
            crashes: 0,
            exceptions: 0,
            fault_rate: 0.0,
            byte_histogram: [0; 16],
            multiplicity_histogram: [0; 3],
        };
        for o in outcomes {
            stats.tries += 1;
            match o {
                Outcome::Match => {}
                Outcome::Mismatch { diff } => {
                    stats.faults += 1;
                    for b in diff.byte_positions() {
                        stats.byte_histogram[usize::from(b)] += 1;
                    }
                    stats.multiplicity_histogram[(diff.bit_count() as usize).min(3) - 1] += 1;
                }
                Outcome::Crash(_) => {
                    stats.crashes += 1;
                    crashes += 1;
                }
                Outcome::ProcessorException(_) => stats.exceptions += 1,
            }
            if crashes > opts.crash_budget {
                report.aborted = true;
                break;
            }
        }
        stats.fault_rate = stats.faults as f64 / stats.tries.max(1) as f64;
        report.cores.push(stats);
        if report.aborted {
            break;
        }
    }
    report.most_fault_prone = report
        .cores
        .iter()
        .filter(|s| s.faults > 0)
        .max_by(|a, b| a.fault_rate.total_cmp(&b.fault_rate).then(b.core.cmp(&a.core)))
        .map(|s| s.core);
    if report.aborted {
        return Err(OrchestratorError::ProbeAborted(Box::new(report)));
    }
    Ok(report)
}
