use std::path::Path;

use hound::{SampleFormat as HoundFormat, WavReader, WavSpec, WavWriter};

use super::Waveform;
use crate::error::{Error, Result};

/// On-disk sample encodings this crate reads and writes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleFormat {
    Pcm16,
    Float32,
}

/// Deinterleaved contents of a mono or stereo RIFF/WAVE file.
#[derive(Clone, Debug, PartialEq)]
pub struct WavData {
    pub channels: Vec<Waveform>,
    pub format: SampleFormat,
}

impl WavData {
    pub fn sample_rate(&self) -> u32 {
        self.channels[0].sample_rate
    }

    pub fn into_mono(mut self) -> Result<Waveform> {
        if self.channels.len() != 1 {
            return Err(Error::Wav(format!("expected mono audio, found {} channels", self.channels.len())));
        }
        Ok(self.channels.remove(0))
    }
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<WavData> {
    let path = path.as_ref();
    let mut reader = WavReader::open(path)?;
    let spec = reader.spec();
    let nch = spec.channels as usize;
    if !(1..=2).contains(&nch) {
        return Err(Error::Wav(format!("{}: {} channels, only mono or stereo supported", path.display(), nch)));
    }
    let (format, interleaved): (SampleFormat, Vec<f64>) = match (spec.sample_format, spec.bits_per_sample) {
        (HoundFormat::Int, 16) => (
            SampleFormat::Pcm16,
            reader.samples::<i16>().map(|s| s.map(|v| v as f64 / 32768.0)).collect::<std::result::Result<_, _>>()?,
        ),
        (HoundFormat::Float, 32) => (
            SampleFormat::Float32,
            reader.samples::<f32>().map(|s| s.map(|v| v as f64)).collect::<std::result::Result<_, _>>()?,
        ),
        (fmt, bits) => {
            return Err(Error::Wav(format!(
                "{}: unsupported encoding {:?} {}-bit (need 16-bit PCM or 32-bit float)",
                path.display(),
                fmt,
                bits
            )))
        }
    };
    let channels = (0..nch)
        .map(|c| Waveform::new(interleaved.iter().skip(c).step_by(nch).copied().collect(), spec.sample_rate))
        .collect::<Result<Vec<_>>>()?;
    Ok(WavData { channels, format })
}

/// Writes one or two equal-length channels.
pub fn write_wav(path: impl AsRef<Path>, channels: &[&Waveform], format: SampleFormat) -> Result<()> {
    let first = channels.first().ok_or_else(|| Error::Wav("no channels to write".into()))?;
    if channels.len() > 2 || channels.iter().any(|c| c.len() != first.len() || c.sample_rate != first.sample_rate) {
        return Err(Error::Wav("write_wav needs one or two channels of equal length and rate".into()));
    }
    let (bits, sample_format) = match format {
        SampleFormat::Pcm16 => (16, HoundFormat::Int),
        SampleFormat::Float32 => (32, HoundFormat::Float),
    };
    let spec = WavSpec { channels: channels.len() as u16, sample_rate: first.sample_rate, bits_per_sample: bits, sample_format };
    let mut writer = WavWriter::create(path, spec)?;
    for i in 0..first.len() {
        for ch in channels {
            let v = ch.samples[i];
            match format {
                SampleFormat::Pcm16 => writer.write_sample((v * 32768.0).round().clamp(-32768.0, 32767.0) as i16)?,
                SampleFormat::Float32 => writer.write_sample(v as f32)?,
            }
        }
    }
    writer.finalize()?;
    Ok(())
}
