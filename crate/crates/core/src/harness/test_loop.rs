//! Reference-then-compare test loop.

use rand::Rng;
use serde::Serialize;

use super::injector::Injector;
use super::programs::VictimProgram;
use super::HarnessError;
use crate::isa::{self, ExecError, Halt, Machine, DEFAULT_STEP_LIMIT};
use crate::mca::{McaModel, MceRecord, ProcessorException};
use crate::processor::{BitFlipPattern, CrashKind, FaultModel, PlatformState, ProcessorProfile};
use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Match,
    /// Output differed from the reference; `diff` is the XOR of the first
    /// differing 128-bit word.
    Mismatch {
        diff: BitFlipPattern,
    },
    Crash(CrashKind),
    ProcessorException(ProcessorException),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOutcome {
    pub outcome: Outcome,
    pub iterations_executed: u64,
    pub mce: Vec<MceRecord>,
}

/// First differing 16-byte word between two memory images.
pub fn memory_diff(reference: &[u8], result: &[u8]) -> Option<BitFlipPattern> {
    reference
        .chunks(16)
        .zip(result.chunks(16))
        .enumerate()
        .find_map(|(i, (a, b))| {
            let word = |c: &[u8]| {
                let mut buf = [0u8; 16];
                buf[..c.len()].copy_from_slice(c);
                u128::from_le_bytes(buf)
            };
            BitFlipPattern::new(i as u64, word(a) ^ word(b))
        })
}

/// Maps a stopped execution onto a run outcome; other errors are bugs in
/// the program under test.
pub(crate) fn stopped_outcome(err: ExecError) -> Result<Outcome, HarnessError> {
    match err {
        ExecError::Stopped {
            halt: Halt::Crash(k), ..
        } => Ok(Outcome::Crash(k)),
        ExecError::Stopped {
            halt: Halt::Exception(e),
            ..
        } => Ok(Outcome::ProcessorException(e)),
        ExecError::GeneralProtection { .. } => Ok(Outcome::ProcessorException(ProcessorException::GeneralProtection)),
        other @ ExecError::StepLimit(_) => Err(HarnessError::Exec(other)),
    }
}

/// Computes the reference output fault-free, then repeats the program
/// under `env`'s voltage on physical `core` until the output differs, the
/// platform stops the run, or `max_iters` iterations match.
pub fn run_test_loop<R: Rng + ?Sized>(
    profile: &ProcessorProfile,
    env: &PlatformState,
    core: usize,
    victim: &VictimProgram,
    max_iters: u64,
    mca: &McaModel,
    rng: &mut R,
) -> Result<RunOutcome, HarnessError> {
    let reference = isa::interpret(&victim.program, &victim.memory)?;
    let model = FaultModel::new(profile, env, core)?.with_scenario(env, Scenario::TestLoop)?;
    let mut inj = Injector::new(&model, mca, rng, profile.noise().0);
    if inj.is_quiescent() {
        // Nothing can happen at this voltage and the program is a pure
        // function of its input, so every iteration reproduces the reference.
        return Ok(RunOutcome {
            outcome: Outcome::Match,
            iterations_executed: max_iters,
            mce: Vec::new(),
        });
    }
    let mut slice = 0;
    for iter in 0..max_iters {
        let mut m = Machine::new(victim.memory.clone());
        let done = |outcome, inj: Injector<'_, R>| RunOutcome {
            outcome,
            iterations_executed: iter + 1,
            mce: inj.records,
        };
        match isa::run(
            &victim.program,
            &victim.eligible,
            &mut m,
            &mut inj,
            slice,
            DEFAULT_STEP_LIMIT,
        ) {
            Ok(s) => slice += s.slices,
            Err(e) => return Ok(done(stopped_outcome(e)?, inj)),
        }
        if let Some(diff) = memory_diff(&reference, &m.mem) {
            return Ok(done(Outcome::Mismatch { diff }, inj));
        }
    }
    Ok(RunOutcome {
        outcome: Outcome::Match,
        iterations_executed: max_iters,
        mce: inj.records,
    })
}
