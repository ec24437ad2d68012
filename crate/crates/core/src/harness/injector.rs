//! Couples the fault model and the MCA to a running victim.

use std::ops::Range;

use rand::Rng;

use crate::isa::{ExecHook, Halt, StoreEvent};
use crate::mca::{McaModel, MceOutcome, MceRecord};
use crate::processor::{BitFlipPattern, FaultModel, VoltageRegion};

/// Per-slice injection for one victim execution. Slices outside `window`
/// run at nominal voltage and are not sampled at all.
pub struct Injector<'a, R: Rng + ?Sized> {
    model: &'a FaultModel<'a>,
    mca: &'a McaModel,
    rng: &'a mut R,
    window: Range<u64>,
    time_base: u64,
    quiescent: bool,
    pub records: Vec<MceRecord>,
    pub faults: Vec<BitFlipPattern>,
}

/// True when no noise draw can leave the normal region, so sampling
/// would never produce an event.
pub fn is_quiescent(model: &FaultModel<'_>, noise_uv: i64) -> bool {
    let lowest = model.nominal() - crate::processor::Microvolts(noise_uv);
    model.bands().classify(lowest) == VoltageRegion::Normal
}

impl<'a, R: Rng + ?Sized> Injector<'a, R> {
    pub fn new(model: &'a FaultModel<'a>, mca: &'a McaModel, rng: &'a mut R, noise_uv: i64) -> Self {
        Injector {
            quiescent: is_quiescent(model, noise_uv),
            model,
            mca,
            rng,
            window: 0..u64::MAX,
            time_base: 0,
            records: Vec::new(),
            faults: Vec::new(),
        }
    }

    /// Restricts undervolting to the slices in `window`.
    pub fn with_window(mut self, window: Range<u64>) -> Self {
        self.window = window;
        self
    }

    /// Offset added to slice numbers in MCA timestamps.
    pub fn with_time_base(mut self, base: u64) -> Self {
        self.time_base = base;
        self
    }

    pub fn set_time_base(&mut self, base: u64) {
        self.time_base = base;
    }

    pub fn is_quiescent(&self) -> bool {
        self.quiescent
    }

    fn log(&mut self, outcome: MceOutcome) {
        if let MceOutcome::Logged(r) | MceOutcome::Exception(r) = outcome {
            self.records.push(r);
        }
    }

    /// One slice, optionally carrying an eligible store of `word`.
    pub fn slice(&mut self, t: u64, word: Option<(u64, &mut u128)>) -> Result<(), Halt> {
        if self.quiescent || !self.window.contains(&t) {
            return Ok(());
        }
        let stamp = self.time_base + t;
        let core = self.model.core();
        let s = self.model.draw_slice(self.rng);
        if let Some(kind) = self.model.sample_crash_at(&s, self.rng) {
            let out = self.mca.observe(stamp, core, s.region, None, Some(kind), self.rng);
            self.log(out);
            return Err(Halt::Crash(kind));
        }
        let mut fault = None;
        if let Some((index, value)) = word {
            fault = self.model.sample_store_fault(&s, index, self.rng);
            if let Some(f) = &fault {
                *value = f.apply(*value);
            }
        }
        let out = self.mca.observe(stamp, core, s.region, fault.as_ref(), None, self.rng);
        self.log(out);
        self.faults.extend(fault);
        if let Some(d) = self.mca.occasionally_decode_error(stamp, core, s.region, self.rng) {
            self.records.push(d.record);
            if let Some(e) = d.exception {
                return Err(Halt::Exception(e));
            }
        }
        Ok(())
    }
}

impl<R: Rng + ?Sized> ExecHook for Injector<'_, R> {
    fn on_slice(&mut self, slice: u64, store: Option<&mut StoreEvent>) -> Result<(), Halt> {
        match store {
            Some(e) => self.slice(slice, Some((e.word_index, &mut e.value))),
            None => self.slice(slice, None),
        }
    }
}
