use std::path::Path;

use super::manifest::{Condition, MixtureRecord, UttId};
use crate::dsp::{apply_reverb, write_wav, SampleFormat, Waveform};
use crate::error::{arg_err, Result};

/// Largest accepted |SIR| in dB.
pub const MAX_SIR_DB: f64 = 10.0;

/// In-memory result of mixing two sources, one entry per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct MixedSignals {
    pub mixture: Vec<Waveform>,
    /// Target image as it appears in each channel.
    pub target: Vec<Waveform>,
    pub interferer: Vec<Waveform>,
}

fn trimmed(w: &Waveform, len: usize) -> Waveform {
    Waveform { samples: w.samples[..len].to_vec(), sample_rate: w.sample_rate }
}

/// Scales the interferer to `sir_db` below the target (measured on the dry
/// signals), reverberates each source per channel and sums. One room seed per
/// channel; `rt60 == 0` leaves the sources dry.
pub fn mix_sources(
    target: &Waveform,
    interferer: &Waveform,
    sir_db: f64,
    rt60: f64,
    channel_seeds: &[u64],
) -> Result<MixedSignals> {
    if !(-MAX_SIR_DB..=MAX_SIR_DB).contains(&sir_db) {
        return arg_err(format!("SIR must lie in [-{MAX_SIR_DB}, {MAX_SIR_DB}] dB, got {sir_db}"));
    }
    if !(1..=2).contains(&channel_seeds.len()) {
        return arg_err("mixtures have one or two channels");
    }
    if target.sample_rate != interferer.sample_rate {
        return arg_err("sources have different sample rates");
    }
    let len = target.len().min(interferer.len());
    let (t, i) = (trimmed(target, len), trimmed(interferer, len));
    let (et, ei) = (t.energy(), i.energy());
    if et == 0.0 || ei == 0.0 {
        return arg_err("cannot set the SIR of a silent source");
    }
    let i = i.scaled((et / ei / 10f64.powf(sir_db / 10.0)).sqrt());

    let mut out = MixedSignals { mixture: vec![], target: vec![], interferer: vec![] };
    for &seed in channel_seeds {
        // the two sources sit at different positions in the same room
        let tr = apply_reverb(&t, rt60, seed)?;
        let ir = apply_reverb(&i, rt60, seed.wrapping_add(0x9e37_79b9))?;
        let mix = tr.samples.iter().zip(&ir.samples).map(|(a, b)| a + b).collect();
        out.mixture.push(Waveform::new(mix, t.sample_rate)?);
        out.target.push(tr);
        out.interferer.push(ir);
    }
    Ok(out)
}

/// Mixes, writes `{stem}_mix.wav`, `{stem}_target.wav` and
/// `{stem}_interferer.wav` under `root/dir`, and returns the record. Target
/// and interferer files hold the first channel's images.
#[allow(clippy::too_many_arguments)]
pub fn make_mixture(
    target: (&Waveform, UttId),
    interferer: (&Waveform, UttId),
    adaptation: &str,
    condition: Condition,
    sir_db: f64,
    rt60: f64,
    channels: usize,
    seed: u64,
    root: &Path,
    stem: &str,
) -> Result<MixtureRecord> {
    let seeds: Vec<u64> = (0..channels as u64).map(|c| seed.wrapping_mul(31).wrapping_add(c)).collect();
    let m = mix_sources(target.0, interferer.0, sir_db, rt60, &seeds)?;
    let mix_refs: Vec<&Waveform> = m.mixture.iter().collect();
    let rec = MixtureRecord {
        mixture: format!("{stem}_mix.wav"),
        target: format!("{stem}_target.wav"),
        interferer: format!("{stem}_interferer.wav"),
        adaptation: adaptation.to_string(),
        speaker: target.1.speaker,
        sir_db,
        rt60,
        condition,
        target_utt: target.1,
        interferer_utt: interferer.1,
    };
    write_wav(root.join(&rec.mixture), &mix_refs, SampleFormat::Float32)?;
    write_wav(root.join(&rec.target), &[&m.target[0]], SampleFormat::Float32)?;
    write_wav(root.join(&rec.interferer), &[&m.interferer[0]], SampleFormat::Float32)?;
    Ok(rec)
}
