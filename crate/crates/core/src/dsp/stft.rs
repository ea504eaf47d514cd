use std::f64::consts::PI;

use rustfft::{num_complex::Complex64, FftPlanner};

use super::Waveform;
use crate::autodiff::Tensor;
use crate::error::{arg_err, Result};

pub const IPD_WINDOW_MS: f64 = 32.0;
pub const IPD_HOP_MS: f64 = 16.0;

pub fn next_pow2(n: usize) -> usize {
    n.max(1).next_power_of_two()
}

/// Complex spectrogram, row-major `[bins × frames]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    pub bins: usize,
    pub frames: usize,
    pub fft_size: usize,
    pub hop: usize,
    pub window: usize,
    pub data: Vec<Complex64>,
}

impl Spectrogram {
    pub fn at(&self, bin: usize, frame: usize) -> Complex64 {
        self.data[bin * self.frames + frame]
    }

    pub fn bin_hz(&self, bin: usize, sample_rate: u32) -> f64 {
        bin as f64 * sample_rate as f64 / self.fft_size as f64
    }
}

fn ms_to_samples(ms: f64, sample_rate: u32) -> usize {
    (ms * sample_rate as f64 / 1000.0).round() as usize
}

/// Hann-windowed STFT, FFT length rounded up to a power of two, no padding.
pub fn stft(w: &Waveform, window_ms: f64, hop_ms: f64) -> Result<Spectrogram> {
    if !(hop_ms > 0.0 && window_ms >= hop_ms) {
        return arg_err(format!("need window_ms >= hop_ms > 0, got {window_ms}/{hop_ms}"));
    }
    let win = ms_to_samples(window_ms, w.sample_rate);
    let hop = ms_to_samples(hop_ms, w.sample_rate).max(1);
    if win == 0 || w.len() < win {
        return arg_err(format!("waveform of {} samples shorter than one {win}-sample window", w.len()));
    }
    let fft_size = next_pow2(win);
    let bins = fft_size / 2 + 1;
    let frames = (w.len() - win) / hop + 1;
    // periodic Hann
    let hann: Vec<f64> = (0..win).map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / win as f64).cos()).collect();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(fft_size);
    let mut data = vec![Complex64::new(0.0, 0.0); bins * frames];
    let mut buf = vec![Complex64::new(0.0, 0.0); fft_size];
    for f in 0..frames {
        buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        for (n, h) in hann.iter().enumerate() {
            buf[n] = Complex64::new(w.samples[f * hop + n] * h, 0.0);
        }
        fft.process(&mut buf);
        for b in 0..bins {
            data[b * frames + f] = buf[b];
        }
    }
    Ok(Spectrogram { bins, frames, fft_size, hop, window: win, data })
}

/// Wraps an angle into `(−π, π]`.
pub fn wrap_phase(x: f64) -> f64 {
    let y = x - 2.0 * PI * ((x - PI) / (2.0 * PI)).ceil();
    if y <= -PI {
        y + 2.0 * PI
    } else {
        y
    }
}

/// Inter-microphone phase differences `[F × T_f]`, wrapped to `(−π, π]`.
#[derive(Clone, Debug, PartialEq)]
pub struct IpdFeatures {
    pub values: Tensor,
    /// Hop between feature frames, in samples.
    pub hop: usize,
    /// Analysis window length, in samples.
    pub window: usize,
}

/// `angle(stft(ch1)) − angle(stft(ch2))` on the 32 ms / 16 ms grid.
pub fn ipd(ch1: &Waveform, ch2: &Waveform) -> Result<IpdFeatures> {
    if ch1.len() != ch2.len() || ch1.sample_rate != ch2.sample_rate {
        return arg_err(format!(
            "IPD channels differ: {} @ {} Hz vs {} @ {} Hz",
            ch1.len(),
            ch1.sample_rate,
            ch2.len(),
            ch2.sample_rate
        ));
    }
    let s1 = stft(ch1, IPD_WINDOW_MS, IPD_HOP_MS)?;
    let s2 = stft(ch2, IPD_WINDOW_MS, IPD_HOP_MS)?;
    let values = s1.data.iter().zip(&s2.data).map(|(a, b)| wrap_phase(a.arg() - b.arg())).collect();
    Ok(IpdFeatures {
        values: Tensor::new(&[s1.bins, s1.frames], values)?,
        hop: s1.hop,
        window: s1.window,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, n: usize) -> Waveform {
        Waveform::at_8k((0..n).map(|i| (2.0 * PI * freq * i as f64 / 8000.0).sin()).collect())
    }

    #[test]
    fn window_geometry_at_8k() {
        let s = stft(&sine(440.0, 8000), 32.0, 16.0).unwrap();
        assert_eq!(s.window, 256);
        assert_eq!(s.fft_size, 256);
        assert_eq!(s.bins, 129);
        assert_eq!(s.hop, 128);
        assert_eq!(s.frames, (8000 - 256) / 128 + 1);
    }

    #[test]
    fn zero_input_gives_zero_spectrogram() {
        let s = stft(&Waveform::at_8k(vec![0.0; 1000]), 32.0, 16.0).unwrap();
        assert!(s.data.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn sine_peaks_at_nearest_bin() {
        let s = stft(&sine(1000.0, 4000), 32.0, 16.0).unwrap();
        // bin spacing 31.25 Hz, so 1 kHz sits exactly on bin 32
        let expected = (1000.0 / (8000.0 / s.fft_size as f64)).round() as usize;
        for f in 0..s.frames {
            let peak = (0..s.bins).max_by(|&a, &b| s.at(a, f).norm().total_cmp(&s.at(b, f).norm())).unwrap();
            assert_eq!(peak, expected);
        }
    }

    #[test]
    fn too_short_is_rejected() {
        assert!(stft(&Waveform::at_8k(vec![0.0; 100]), 32.0, 16.0).is_err());
        assert!(stft(&Waveform::at_8k(vec![0.0; 1000]), 8.0, 16.0).is_err());
    }

    #[test]
    fn wrap_examples() {
        assert!((wrap_phase(1.5 * PI) + 0.5 * PI).abs() < 1e-12);
        assert_eq!(wrap_phase(PI), PI);
        assert_eq!(wrap_phase(-PI), PI);
        assert!((wrap_phase(-1.5 * PI) - 0.5 * PI).abs() < 1e-12);
        assert!((wrap_phase(7.0 * PI) - PI).abs() < 1e-9);
    }

    #[test]
    fn identical_channels_have_zero_ipd() {
        let w = sine(300.0, 4000);
        let f = ipd(&w, &w).unwrap();
        assert!(f.values.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn delayed_channel_has_linear_phase() {
        // tones centred on every 8th bin; channel 2 is channel 1 delayed by 3 samples
        let d = 3usize;
        let n = 8000;
        let tone_bins: Vec<usize> = (1..16).map(|k| 8 * k).collect();
        let src: Vec<f64> = (0..n + d)
            .map(|i| {
                tone_bins
                    .iter()
                    .map(|&b| (2.0 * PI * b as f64 * i as f64 / 256.0 + 0.7 * b as f64).cos())
                    .sum()
            })
            .collect();
        let ch1 = Waveform::at_8k(src[d..].to_vec());
        let ch2 = Waveform::at_8k(src[..n].to_vec());
        let f = ipd(&ch1, &ch2).unwrap();
        for &b in &tone_bins {
            for fr in 0..f.values.cols() {
                // ch2[n] = ch1[n - d] gives X2 = X1·e^{-iωd}, so the difference is +ωd
                let want = wrap_phase(2.0 * PI * b as f64 * d as f64 / 256.0);
                let got = f.values.at(b, fr);
                assert!(wrap_phase(got - want).abs() < 0.05, "bin {b} frame {fr}: {got} vs {want}");
            }
        }
    }
}
