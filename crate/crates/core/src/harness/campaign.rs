//! Repeated victim executions under a fixed platform state.

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::injector::Injector;
use super::programs::{VictimProgram, POC_MARKER_ADDR};
use super::sha256::{hmac_sha256, hmac_sha256_with};
use super::test_loop::{memory_diff, stopped_outcome, Outcome};
use super::HarnessError;
use crate::isa::{self, Halt, Machine, DEFAULT_STEP_LIMIT};
use crate::mca::{McaConfig, McaModel, MceLog, MceRecord, ProcessorException};
use crate::msr::PState;
use crate::processor::{CrashKind, FaultModel, Microvolts, PlatformState, ProcessorProfile};
use crate::rng::StreamKey;
use crate::scanner::estimate_window;
use crate::scenario::Scenario;
use crate::stressor::StressorKind;

/// Slices of undervolting kept before and after the fault-prone window.
pub const DEFAULT_GUARD_SLICES: u64 = 10;
pub const DEFAULT_CRASH_BUDGET: u64 = 100;

/// Key and message the HMAC victim validates on every try.
pub fn hmac_key() -> Vec<u8> {
    (0..32u8).map(|i| i.wrapping_mul(37).wrapping_add(11)).collect()
}

pub fn hmac_message(len: usize) -> Vec<u8> {
    (0..len).map(|i| (i as u8).wrapping_mul(31).wrapping_add(7)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TryOutcome {
    Success,
    Failure,
    Crash(CrashKind),
    Exception(ProcessorException),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunTally {
    pub successes: u64,
    pub tries: u64,
    pub crashes: u64,
    pub exceptions: u64,
}

impl RunTally {
    fn add(&mut self, o: TryOutcome) {
        self.tries += 1;
        match o {
            TryOutcome::Success => self.successes += 1,
            TryOutcome::Failure => {}
            TryOutcome::Crash(_) => self.crashes += 1,
            TryOutcome::Exception(_) => self.exceptions += 1,
        }
    }

    pub fn per_10k(&self) -> f64 {
        if self.tries == 0 {
            0.0
        } else {
            self.successes as f64 * 10_000.0 / self.tries as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignResult {
    pub model: String,
    pub pstate: PState,
    pub target_core: usize,
    pub scenario: Scenario,
    pub stressor: StressorKind,
    pub offset_mv: i16,
    pub voltage: f64,
    pub start_temperature_c: f64,
    pub seed: u64,
    pub tries: u64,
    pub successes: u64,
    pub crashes: u64,
    pub exceptions: u64,
    pub per_run: Vec<RunTally>,
    pub mean_per_10k: f64,
    /// Sample standard deviation of the per-run rates (per 10 000 tries).
    pub sigma: f64,
    pub aborted: bool,
}

/// Mean and sample standard deviation of the per-run success rates.
pub fn per_10k_stats(runs: &[RunTally]) -> (f64, f64) {
    let rates: Vec<f64> = runs.iter().map(RunTally::per_10k).collect();
    let n = rates.len() as f64;
    if rates.is_empty() {
        return (0.0, 0.0);
    }
    let mean = rates.iter().sum::<f64>() / n;
    if rates.len() < 2 {
        return (mean, 0.0);
    }
    let var = rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignSpec {
    pub scenario: Scenario,
    pub target_core: usize,
    pub runs: usize,
    pub tries_per_run: usize,
    pub seed: u64,
    pub guard_slices: u64,
    /// Crashes tolerated before the campaign is abandoned.
    pub crash_budget: u64,
    pub mca: McaConfig,
}

impl CampaignSpec {
    pub fn new(scenario: Scenario, target_core: usize, runs: usize, tries_per_run: usize, seed: u64) -> Self {
        CampaignSpec {
            scenario,
            target_core,
            runs,
            tries_per_run,
            seed,
            guard_slices: DEFAULT_GUARD_SLICES,
            crash_budget: DEFAULT_CRASH_BUDGET,
            mca: McaConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Campaign {
    pub result: CampaignResult,
    /// One log per run.
    pub mce_logs: Vec<MceLog>,
}

enum Victim {
    Program {
        victim: VictimProgram,
        reference: Vec<u8>,
        window: Range<u64>,
        stride: u64,
        poc: bool,
    },
    Hmac {
        key: Vec<u8>,
        message: Vec<u8>,
        expected: [u8; 32],
        stores: u64,
        guard: u64,
    },
}

impl Victim {
    fn prepare(scenario: Scenario, guard: u64) -> Result<Self, HarnessError> {
        if let Some(len) = scenario.payload_len() {
            let key = hmac_key();
            let message = hmac_message(len);
            let expected = hmac_sha256(&key, &message);
            return Ok(Victim::Hmac {
                key,
                message,
                expected,
                stores: scenario.eligible_stores_per_try() as u64,
                guard,
            });
        }
        let (victim, poc) = match scenario {
            Scenario::Poc => (VictimProgram::poc(), true),
            _ => (VictimProgram::test_loop_xor(), false),
        };
        let reference = isa::interpret(&victim.program, &victim.memory)?;
        let mut first = u64::MAX;
        let mut last = 0;
        let mut total = 0;
        for hit in &victim.hits {
            let w = estimate_window(&victim.program, hit, &victim.memory, 1)?;
            total = w.total_slices;
            if let (Some(f), Some(l)) = (w.first_slice, w.last_slice) {
                first = first.min(f);
                last = last.max(l);
            }
        }
        if first == u64::MAX {
            return Err(HarnessError::NoEligibleStore);
        }
        Ok(Victim::Program {
            window: first.saturating_sub(guard)..last + guard + 1,
            stride: total.max(last + guard + 1),
            victim,
            reference,
            poc,
        })
    }

    fn stride(&self) -> u64 {
        match self {
            Victim::Program { stride, .. } => *stride,
            Victim::Hmac { stores, guard, .. } => stores + 2 * guard,
        }
    }

    fn run_once(
        &self,
        model: &FaultModel<'_>,
        mca: &McaModel,
        key: StreamKey,
        time_base: u64,
        noise_uv: i64,
    ) -> Result<(TryOutcome, Vec<MceRecord>), HarnessError> {
        let mut rng = key.rng();
        let mut inj = Injector::new(model, mca, &mut rng, noise_uv).with_time_base(time_base);
        let halted = |h: Halt| match h {
            Halt::Crash(k) => TryOutcome::Crash(k),
            Halt::Exception(e) => TryOutcome::Exception(e),
        };
        let outcome = match self {
            Victim::Program {
                victim,
                reference,
                window,
                poc,
                ..
            } => {
                let mut inj = inj.with_window(window.clone());
                let mut m = Machine::new(victim.memory.clone());
                let res = isa::run(
                    &victim.program,
                    &victim.eligible,
                    &mut m,
                    &mut inj,
                    0,
                    DEFAULT_STEP_LIMIT,
                );
                let outcome = match res {
                    Err(e) => match stopped_outcome(e)? {
                        Outcome::Crash(k) => TryOutcome::Crash(k),
                        Outcome::ProcessorException(e) => TryOutcome::Exception(e),
                        _ => unreachable!("stopped runs end in a crash or exception"),
                    },
                    Ok(_) if *poc => {
                        if m.mem[POC_MARKER_ADDR..POC_MARKER_ADDR + 16].iter().any(|b| *b != 0) {
                            TryOutcome::Success
                        } else {
                            TryOutcome::Failure
                        }
                    }
                    Ok(_) => match memory_diff(reference, &m.mem) {
                        Some(_) => TryOutcome::Success,
                        None => TryOutcome::Failure,
                    },
                };
                return Ok((outcome, inj.records));
            }
            Victim::Hmac {
                key,
                message,
                expected,
                stores,
                guard,
            } => {
                let body = (|| {
                    for t in 0..*guard {
                        inj.slice(t, None)?;
                    }
                    let mac = hmac_sha256_with(key, message, &mut |k: u64, w: &mut u128| {
                        inj.slice(guard + k, Some((k, w)))
                    })?;
                    for t in guard + stores..2 * guard + stores {
                        inj.slice(t, None)?;
                    }
                    Ok(mac)
                })();
                match body {
                    Ok(mac) if mac != *expected => TryOutcome::Success,
                    Ok(_) => TryOutcome::Failure,
                    Err(h) => halted(h),
                }
            }
        };
        Ok((outcome, inj.records))
    }
}

/// Runs `spec.runs × spec.tries_per_run` victim executions on physical
/// `spec.target_core` under `env`. Tries execute in parallel on separate
/// random streams and are aggregated in index order, so the result does
/// not depend on the thread count.
pub fn run_campaign(
    profile: &ProcessorProfile,
    env: &PlatformState,
    spec: &CampaignSpec,
) -> Result<Campaign, HarnessError> {
    let core = spec.target_core;
    let model = FaultModel::new(profile, env, core)?.with_scenario(env, spec.scenario)?;
    let mca = McaModel::new(spec.mca);
    let victim = Victim::prepare(spec.scenario, spec.guard_slices)?;
    let stride = victim.stride();
    let noise = profile.noise().0;

    let mut runs = Vec::with_capacity(spec.runs);
    for run in 0..spec.runs {
        let trials: Vec<(TryOutcome, Vec<MceRecord>)> = (0..spec.tries_per_run)
            .into_par_iter()
            .map(|trial| {
                let key = StreamKey::new(spec.seed, core, run, trial);
                victim.run_once(&model, &mca, key, trial as u64 * stride, noise)
            })
            .collect::<Result<_, _>>()?;
        runs.push(trials);
    }

    let mut per_run = Vec::with_capacity(spec.runs);
    let mut logs = Vec::with_capacity(spec.runs);
    let mut crashes = 0;
    let mut aborted = false;
    'runs: for trials in runs {
        let mut tally = RunTally::default();
        let mut log = MceLog::new();
        for (outcome, records) in trials {
            for r in records {
                log.push(r).expect("slices are stamped in trial order");
            }
            tally.add(outcome);
            if matches!(outcome, TryOutcome::Crash(_)) {
                crashes += 1;
                if crashes > spec.crash_budget {
                    aborted = true;
                    per_run.push(tally);
                    logs.push(log);
                    break 'runs;
                }
            }
        }
        per_run.push(tally);
        logs.push(log);
    }

    let (mean_per_10k, sigma) = per_10k_stats(&per_run);
    let sum = |f: fn(&RunTally) -> u64| per_run.iter().map(f).sum::<u64>();
    let nominal = env.nominal_voltage(profile).unwrap_or(Microvolts(0));
    let result = CampaignResult {
        model: profile.model_name().to_string(),
        pstate: env.pstate,
        target_core: core,
        scenario: spec.scenario,
        stressor: crate::processor::fault::core_stressor(env, core),
        offset_mv: env.core_offset_mv(),
        voltage: (nominal.volts() * 1e4).round() / 1e4,
        start_temperature_c: (env.temperature_of(core) * 100.0).round() / 100.0,
        seed: spec.seed,
        tries: sum(|r| r.tries),
        successes: sum(|r| r.successes),
        crashes: sum(|r| r.crashes),
        exceptions: sum(|r| r.exceptions),
        per_run,
        mean_per_10k,
        sigma,
        aborted,
    };
    let campaign = Campaign { result, mce_logs: logs };
    if aborted {
        Err(HarnessError::AbortedByCrash(Box::new(campaign)))
    } else {
        Ok(campaign)
    }
}
