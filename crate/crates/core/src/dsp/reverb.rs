use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{fft_convolve, Waveform};
use crate::error::{arg_err, Result};

/// Peak amplitude of the noise tail relative to the direct-path impulse.
pub const TAIL_GAIN: f64 = 0.05;

/// Unit impulse followed by uniform noise under an exponential envelope that
/// reaches −60 dB at `rt60`; the response stops there.
pub fn impulse_response(rt60: f64, sample_rate: u32, seed: u64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&rt60) {
        return arg_err(format!("rt60 must lie in [0, 1] s, got {rt60}"));
    }
    let len = (rt60 * sample_rate as f64).ceil() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut h = Vec::with_capacity(len.max(1));
    h.push(1.0);
    let decay_samples = rt60 * sample_rate as f64;
    for n in 1..len {
        let env = 10f64.powf(-3.0 * n as f64 / decay_samples);
        h.push(TAIL_GAIN * env * rng.gen_range(-1.0..=1.0));
    }
    Ok(h)
}

/// Convolves `dry` with a seeded synthetic room response, keeping the input length.
pub fn apply_reverb(dry: &Waveform, rt60: f64, seed: u64) -> Result<Waveform> {
    let h = impulse_response(rt60, dry.sample_rate, seed)?;
    if h.len() == 1 {
        return Ok(dry.clone());
    }
    Waveform::new(fft_convolve(&dry.samples, &h, dry.len()), dry.sample_rate)
}
