//! Deterministic signal utilities: waveform I/O, STFT, IPD features, SiSDR and
//! synthetic reverberation.

mod reverb;
mod sisdr;
mod stft;
mod wav;

pub use reverb::{apply_reverb, impulse_response, TAIL_GAIN};
pub use sisdr::{sisdr, SISDR_CLAMP_DB};
pub use stft::{ipd, next_pow2, stft, wrap_phase, IpdFeatures, Spectrogram, IPD_HOP_MS, IPD_WINDOW_MS};
pub use wav::{read_wav, write_wav, SampleFormat, WavData};

use crate::error::{arg_err, Result};

pub const DEFAULT_SAMPLE_RATE: u32 = 8000;

/// Mono sample sequence at a fixed rate.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return arg_err("sample rate must be positive");
        }
        if samples.iter().any(|x| !x.is_finite()) {
            return arg_err("waveform contains non-finite samples");
        }
        Ok(Self { samples, sample_rate })
    }

    /// 8 kHz waveform; panics on non-finite input.
    pub fn at_8k(samples: Vec<f64>) -> Self {
        Self::new(samples, DEFAULT_SAMPLE_RATE).expect("finite samples")
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|x| x * x).sum()
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            0.0
        } else {
            (self.energy() / self.samples.len() as f64).sqrt()
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { samples: self.samples.iter().map(|x| c * x).collect(), sample_rate: self.sample_rate }
    }
}

/// Full linear convolution of `a` and `b` via FFT, truncated to `out_len` samples.
pub(crate) fn fft_convolve(a: &[f64], b: &[f64], out_len: usize) -> Vec<f64> {
    use rustfft::{num_complex::Complex64, FftPlanner};
    if a.is_empty() || b.is_empty() {
        return vec![0.0; out_len];
    }
    let n = next_pow2(a.len() + b.len() - 1);
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let lift = |x: &[f64]| {
        let mut v: Vec<Complex64> = x.iter().map(|&r| Complex64::new(r, 0.0)).collect();
        v.resize(n, Complex64::new(0.0, 0.0));
        v
    };
    let (mut fa, mut fb) = (lift(a), lift(b));
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    inv.process(&mut fa);
    (0..out_len).map(|i| if i < n { fa[i].re / n as f64 } else { 0.0 }).collect()
}
