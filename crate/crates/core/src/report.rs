//! Tabular summaries: campaign rates, flip heat maps and flip counts.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::harness::CampaignResult;
use crate::processor::{BitFlipPattern, FaultModel, PlatformState, ProcessorProfile, ProfileError};
use crate::rng::StreamKey;

const REPORT_STREAM_RUN: usize = usize::MAX;

/// Draws `n` fault manifestations on `core`, independent of when faults
/// happen. Stream `(seed, core)` makes the sample reproducible.
pub fn sample_faults(
    profile: &ProcessorProfile,
    core: usize,
    n: usize,
    seed: u64,
) -> Result<Vec<BitFlipPattern>, ProfileError> {
    let pstate = profile.pstates()[0];
    let state = PlatformState::new(profile, pstate, seed);
    let model = FaultModel::new(profile, &state, core)?;
    let mut rng = StreamKey::new(seed, core, REPORT_STREAM_RUN, 0).rng();
    Ok((0..n).map(|_| model.manifest(0, &mut rng)).collect())
}

/// Faults with one, two, and three or more flipped bits.
pub fn multiplicity_counts(faults: &[BitFlipPattern]) -> [u64; 3] {
    let mut out = [0; 3];
    for f in faults {
        out[(f.bit_count() as usize).clamp(1, 3) - 1] += 1;
    }
    out
}

/// Flipped bits per byte position of the 128-bit word.
pub fn byte_heatmap(faults: &[BitFlipPattern]) -> [u64; 16] {
    let mut out = [0; 16];
    for f in faults {
        for bit in f.flipped_bits() {
            out[usize::from(bit / 8)] += 1;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoreFaultSummary {
    pub model: String,
    pub core: usize,
    pub faults: u64,
    pub multiplicity: [u64; 3],
    pub heatmap: [u64; 16],
}

pub fn summarize_profile(
    profile: &ProcessorProfile,
    faults_per_core: usize,
    seed: u64,
) -> Result<Vec<CoreFaultSummary>, ProfileError> {
    (0..profile.physical_cores())
        .map(|core| {
            let faults = sample_faults(profile, core, faults_per_core, seed)?;
            Ok(CoreFaultSummary {
                model: profile.model_name().to_string(),
                core,
                faults: faults.len() as u64,
                multiplicity: multiplicity_counts(&faults),
                heatmap: byte_heatmap(&faults),
            })
        })
        .collect()
}

#[derive(Serialize)]
struct CampaignRow<'a> {
    processor: &'a str,
    core: usize,
    start_temperature_c: f64,
    voltage_v: f64,
    offset_mv: i16,
    payload: &'a str,
    stressor: &'a str,
    tries: u64,
    successes: u64,
    crashes: u64,
    mean_per_10k: f64,
    sigma: f64,
}

/// One row per campaign: processor, core, start temperature, voltage,
/// offset, payload, then the success rate per 10 000 tries and its σ.
pub fn write_campaign_csv<W: Write>(results: &[CampaignResult], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in results {
        w.serialize(CampaignRow {
            processor: &r.model,
            core: r.target_core,
            start_temperature_c: r.start_temperature_c,
            voltage_v: r.voltage,
            offset_mv: r.offset_mv,
            payload: r.scenario.name(),
            stressor: r.stressor.name(),
            tries: r.tries,
            successes: r.successes,
            crashes: r.crashes,
            mean_per_10k: round1(r.mean_per_10k),
            sigma: round1(r.sigma),
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_heatmap_csv<W: Write>(rows: &[CoreFaultSummary], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["processor".to_string(), "core".to_string()];
    header.extend((0..16).map(|b| format!("byte{b}")));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.model.clone(), r.core.to_string()];
        rec.extend(r.heatmap.iter().map(u64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_multiplicity_csv<W: Write>(rows: &[CoreFaultSummary], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["processor", "core", "1_bf", "2_bf", "3plus_bf"])?;
    for r in rows {
        let [a, b, c] = r.multiplicity;
        w.write_record([
            r.model.clone(),
            r.core.to_string(),
            a.to_string(),
            b.to_string(),
            c.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::processor::bundled_profile;

    #[test]
    fn counts_and_heatmap() {
        let f = [
            BitFlipPattern::new(0, 1).unwrap(),
            BitFlipPattern::new(0, 0b11 << 8).unwrap(),
            BitFlipPattern::new(0, (1 << 127) | (1 << 64) | 1).unwrap(),
        ];
        assert_eq!(multiplicity_counts(&f), [1, 1, 1]);
        let h = byte_heatmap(&f);
        assert_eq!((h[0], h[1], h[8], h[15]), (2, 2, 1, 1));
        assert_eq!(h.iter().sum::<u64>(), 6);
    }

    #[test]
    fn summaries_are_reproducible_and_supported() {
        let prof = bundled_profile("i7-8700K").unwrap();
        let a = summarize_profile(&prof, 500, 3).unwrap();
        assert_eq!(a, summarize_profile(&prof, 500, 3).unwrap());
        for s in &a {
            let support = prof.affinity_support(s.core);
            for (b, n) in s.heatmap.iter().enumerate() {
                assert!(*n == 0 || support.contains(&b));
            }
        }
        let mut buf = Vec::new();
        write_heatmap_csv(&a, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 7);
        assert_eq!(text.lines().next().unwrap().split(',').count(), 18);
        let mut buf = Vec::new();
        write_multiplicity_csv(&a, &mut buf).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("processor,core,1_bf,2_bf,3plus_bf\n"));
    }
}
