//! Simulated machine-check architecture.
//!
//! The MCA sees corrected errors in the band just above the exploit window
//! and broadcasts unrecoverable kernel exceptions, but a bit flip inside
//! the exploit window never produces a record.

use std::fmt;
use std::io::{self, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::processor::{BitFlipPattern, CrashKind, VoltageRegion};

/// Exception delivered to the victim program by the processor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcessorException {
    InvalidOpcode,
    GeneralProtection,
}

impl fmt::Display for ProcessorException {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProcessorException::InvalidOpcode => "invalid opcode",
            ProcessorException::GeneralProtection => "general protection",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MceKind {
    Corrected,
    UncorrectedFatal,
    InstructionDecodeCorrected,
}

impl MceKind {
    pub fn is_fatal(self) -> bool {
        self == MceKind::UncorrectedFatal
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MceRecord {
    /// Slice index within the run.
    pub timestamp: u64,
    pub core: usize,
    pub kind: MceKind,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MceOutcome {
    Silent,
    Logged(MceRecord),
    /// Fatal record that every core observes.
    Exception(MceRecord),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McaConfig {
    /// Probability per slice of a corrected error in the corrected band.
    pub corrected_rate: f64,
    /// Probability per slice of a corrected decode error at or below the
    /// exploit window.
    pub decode_error_rate: f64,
    /// Chance that a decode error also reaches the victim as an invalid
    /// opcode.
    pub decode_exception_probability: f64,
}

impl Default for McaConfig {
    fn default() -> Self {
        McaConfig {
            corrected_rate: 0.01,
            decode_error_rate: 1e-3,
            decode_exception_probability: 0.01,
        }
    }
}

/// A decode error found by [`McaModel::occasionally_decode_error`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodeError {
    pub record: MceRecord,
    pub exception: Option<ProcessorException>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct McaModel {
    pub config: McaConfig,
}

impl McaModel {
    pub fn new(config: McaConfig) -> Self {
        McaModel { config }
    }

    /// Classifies what the MCA reports for one slice on `core`.
    pub fn observe<R: Rng + ?Sized>(
        &self,
        timestamp: u64,
        core: usize,
        region: VoltageRegion,
        fault: Option<&BitFlipPattern>,
        crash: Option<CrashKind>,
        rng: &mut R,
    ) -> MceOutcome {
        match crash {
            Some(CrashKind::KernelException) => {
                return MceOutcome::Exception(MceRecord {
                    timestamp,
                    core,
                    kind: MceKind::UncorrectedFatal,
                    detail: "machine check exception in kernel context".into(),
                })
            }
            // The machine is gone before anything can be reported.
            Some(CrashKind::Freeze | CrashKind::HardCrash) => return MceOutcome::Silent,
            None => {}
        }
        // Exploit-window flips are invisible to the MCA by construction.
        let _ = fault;
        if region == VoltageRegion::CorrectedErrors && rng.random::<f64>() < self.config.corrected_rate {
            return MceOutcome::Logged(MceRecord {
                timestamp,
                core,
                kind: MceKind::Corrected,
                detail: "corrected internal error".into(),
            });
        }
        MceOutcome::Silent
    }

    pub fn occasionally_decode_error<R: Rng + ?Sized>(
        &self,
        timestamp: u64,
        core: usize,
        region: VoltageRegion,
        rng: &mut R,
    ) -> Option<DecodeError> {
        if region < VoltageRegion::ExploitWindow || rng.random::<f64>() >= self.config.decode_error_rate {
            return None;
        }
        let exception = (rng.random::<f64>() < self.config.decode_exception_probability)
            .then_some(ProcessorException::InvalidOpcode);
        Some(DecodeError {
            record: MceRecord {
                timestamp,
                core,
                kind: MceKind::InstructionDecodeCorrected,
                detail: "instruction decode error corrected".into(),
            },
            exception,
        })
    }
}

/// Append-only log for one run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MceLog {
    records: Vec<MceRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("record at slice {got} appended after slice {last}")]
pub struct OutOfOrder {
    pub last: u64,
    pub got: u64,
}

impl MceLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: MceRecord) -> Result<(), OutOfOrder> {
        if let Some(last) = self.records.last() {
            if record.timestamp < last.timestamp {
                return Err(OutOfOrder {
                    last: last.timestamp,
                    got: record.timestamp,
                });
            }
        }
        self.records.push(record);
        Ok(())
    }

    /// Appends the record carried by `outcome`, if any.
    pub fn record(&mut self, outcome: MceOutcome) -> Result<(), OutOfOrder> {
        match outcome {
            MceOutcome::Silent => Ok(()),
            MceOutcome::Logged(r) | MceOutcome::Exception(r) => self.push(r),
        }
    }

    pub fn records(&self) -> &[MceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// What `core` sees: its own records plus every broadcast.
    pub fn view(&self, core: usize) -> impl Iterator<Item = &MceRecord> {
        self.records.iter().filter(move |r| r.core == core || r.kind.is_fatal())
    }

    pub fn count(&self, kind: MceKind) -> usize {
        self.records.iter().filter(|r| r.kind == kind).count()
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<Vec<MceRecord>, _>>()?;
        Ok(MceLog { records })
    }
}
