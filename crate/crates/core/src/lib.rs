//! Desk-scale laboratory for software-controlled undervolting attacks.
//!
//! The crate simulates the full attack chain on a modeled processor:
//! register encoding for voltage and P-state control ([`msr`]), a calibrated
//! multi-core fault model ([`processor`]), machine-check reporting
//! ([`mca`]), a small vector ISA with victim programs ([`isa`],
//! [`harness`]), fault-pattern scanning ([`scanner`]) and the three-phase
//! attack workflow ([`orchestrator`]).

pub mod harness;
pub mod isa;
pub mod mca;
pub mod msr;
pub mod orchestrator;
pub mod processor;
pub mod report;
pub mod rng;
pub mod scanner;
pub mod scenario;
pub mod stressor;
