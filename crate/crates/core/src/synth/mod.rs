//! Synthetic corpus: parametric harmonic "speakers", two-source mixtures,
//! adaptation utterances and TSV manifests.

mod dataset;
mod manifest;
mod mixture;

pub use dataset::{condition_of, gen_dataset, utt_path, Dataset, DatasetConfig, Split, HARD_F0_GAP_HZ};
#[cfg(test)]
use dataset::utt_seed as dataset_utt_seed;
pub use manifest::{read_manifest, write_manifest, Condition, MixtureRecord, UttId};
pub use mixture::{make_mixture, mix_sources, MixedSignals, MAX_SIR_DB};

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{Waveform, DEFAULT_SAMPLE_RATE};
use crate::error::{arg_err, Result};

pub const MIN_F0_HZ: f64 = 90.0;
pub const MAX_F0_HZ: f64 = 250.0;
/// Fundamentals of distinct speakers are at least this far apart.
pub const MIN_F0_SPACING_HZ: f64 = 10.0;
pub const UTTERANCE_RMS: f64 = 0.1;
pub const MIN_UTTERANCE_S: f64 = 0.5;

const FORMANT_GAINS: [f64; 3] = [6.0, 4.0, 3.0];
/// Peak frequency deviation of the pitch contour, as a fraction of f0.
const VIBRATO_DEPTH: f64 = 0.01;
const HARMONIC_CEILING_HZ: f64 = 3800.0;
/// No overtone may exceed this fraction of the fundamental's amplitude.
const OVERTONE_CAP: f64 = 0.8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Formant {
    pub freq: f64,
    pub bandwidth: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpeaker {
    pub id: usize,
    pub f0: f64,
    pub formants: [Formant; 3],
    pub jitter_seed: u64,
}

impl SyntheticSpeaker {
    /// Draws a speaker with the given fundamental and random formants.
    pub fn with_f0(id: usize, f0: f64, rng: &mut impl Rng) -> Self {
        let ranges = [(300.0, 900.0), (900.0, 2300.0), (2300.0, 3500.0)];
        let formants = ranges.map(|(lo, hi)| Formant { freq: rng.gen_range(lo..hi), bandwidth: rng.gen_range(60.0..200.0) });
        Self { id, f0, formants, jitter_seed: rng.gen() }
    }

    pub fn distinct_from(&self, other: &Self) -> bool {
        (self.f0 - other.f0).abs() >= MIN_F0_SPACING_HZ
            || (self.formants[0].freq - other.formants[0].freq).abs() >= 100.0
    }

    fn harmonic_amplitudes(&self) -> Vec<f64> {
        let count = ((HARMONIC_CEILING_HZ / (self.f0 * (1.0 + VIBRATO_DEPTH))).floor() as usize).max(1);
        let gain = |f: f64| {
            1.0 + self
                .formants
                .iter()
                .zip(FORMANT_GAINS)
                .map(|(fm, g)| g / (1.0 + ((f - fm.freq) / fm.bandwidth).powi(2)))
                .sum::<f64>()
        };
        let mut amps: Vec<f64> = (1..=count).map(|k| gain(k as f64 * self.f0) / k as f64).collect();
        let cap = OVERTONE_CAP * amps[0];
        for a in amps.iter_mut().skip(1) {
            *a = a.min(cap);
        }
        amps
    }
}

/// Draws `n` speakers whose fundamentals are pairwise at least
/// [`MIN_F0_SPACING_HZ`] apart.
pub fn draw_speakers(n: usize, rng: &mut impl Rng) -> Result<Vec<SyntheticSpeaker>> {
    let max = ((MAX_F0_HZ - MIN_F0_HZ) / MIN_F0_SPACING_HZ) as usize + 1;
    if n > max {
        return arg_err(format!("at most {max} speakers fit the f0 range"));
    }
    let mut f0s: Vec<f64> = Vec::with_capacity(n);
    while f0s.len() < n {
        let f = rng.gen_range(MIN_F0_HZ..MAX_F0_HZ);
        if f0s.iter().all(|g| (f - g).abs() >= MIN_F0_SPACING_HZ) {
            f0s.push(f);
        } else if rng.gen_bool(0.01) {
            f0s.clear();
        }
    }
    Ok(f0s.into_iter().enumerate().map(|(id, f0)| SyntheticSpeaker::with_f0(id, f0, rng)).collect())
}

/// Syllable-like amplitude envelope: Hann bumps at 2–6 Hz with random
/// heights and occasional pauses after the first syllable.
fn syllabic_envelope(len: usize, sr: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let rate = rng.gen_range(2.0..6.0);
    let mut env = vec![0.0; len];
    let mut start = 0usize;
    while start < len {
        let dur = ((sr / rate) * rng.gen_range(0.7..1.3)).round().max(2.0) as usize;
        // the opening syllable is always voiced so short utterances are never silent
        let pause = rng.gen_bool(0.2) && start > 0;
        let height = if pause { 0.0 } else { rng.gen_range(0.3..1.0) };
        for i in 0..dur.min(len - start) {
            env[start + i] = height * (PI * i as f64 / dur as f64).sin().powi(2);
        }
        start += dur;
    }
    env
}

/// Harmonic utterance of `speaker`, deterministic in `(speaker, seed)`,
/// normalized to RMS [`UTTERANCE_RMS`].
pub fn synth_utterance(speaker: &SyntheticSpeaker, duration_s: f64, seed: u64) -> Result<Waveform> {
    if !(duration_s >= MIN_UTTERANCE_S && duration_s.is_finite()) {
        return arg_err(format!("utterances last at least {MIN_UTTERANCE_S} s, got {duration_s}"));
    }
    let sr = DEFAULT_SAMPLE_RATE as f64;
    let len = (duration_s * sr).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ speaker.jitter_seed.rotate_left(17));

    let vib_rate = rng.gen_range(3.0..6.0);
    let vib_phase = rng.gen_range(0.0..2.0 * PI);
    let mut phase = Vec::with_capacity(len);
    let mut acc = 0.0;
    for n in 0..len {
        phase.push(acc);
        let t = n as f64 / sr;
        let f = speaker.f0 * (1.0 + VIBRATO_DEPTH * (2.0 * PI * vib_rate * t + vib_phase).sin());
        acc += 2.0 * PI * f / sr;
    }

    let amps = speaker.harmonic_amplitudes();
    let offsets: Vec<f64> = amps.iter().map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
    let mut x = vec![0.0; len];
    for (k, (a, off)) in amps.iter().zip(&offsets).enumerate() {
        let h = (k + 1) as f64;
        for (xn, p) in x.iter_mut().zip(&phase) {
            *xn += a * (h * p + off).sin();
        }
    }
    let env = syllabic_envelope(len, sr, &mut rng);
    for (xn, e) in x.iter_mut().zip(&env) {
        *xn *= e;
    }
    let w = Waveform::at_8k(x);
    let rms = w.rms();
    if rms == 0.0 {
        return Ok(w);
    }
    Ok(w.scaled(UTTERANCE_RMS / rms))
}

#[cfg(test)]
mod tests;
