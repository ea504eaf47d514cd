use crate::dsp::{read_wav, Waveform};
use crate::error::Result;
use crate::net::Mixture;
use crate::synth::{Condition, Dataset, MixtureRecord, Split};

/// A manifest record with its audio read into memory.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedRecord {
    pub record: MixtureRecord,
    pub mixture: Mixture,
    pub target: Waveform,
    pub adaptation: Waveform,
}

impl LoadedRecord {
    pub fn load(ds: &Dataset, record: &MixtureRecord) -> Result<Self> {
        let mixture = Mixture::from_channels(read_wav(ds.path(&record.mixture))?.channels)?;
        let target = read_wav(ds.path(&record.target))?.into_mono()?;
        let adaptation = read_wav(ds.path(&record.adaptation))?.into_mono()?;
        Ok(Self { record: record.clone(), mixture, target, adaptation })
    }

    pub fn condition(&self) -> Condition {
        self.record.condition
    }
}

pub fn load_split(ds: &Dataset, split: Split) -> Result<Vec<LoadedRecord>> {
    ds.records(split).iter().map(|r| LoadedRecord::load(ds, r)).collect()
}
