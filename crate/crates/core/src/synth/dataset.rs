use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::{read_manifest, write_manifest, Condition, MixtureRecord, UttId};
use super::mixture::make_mixture;
use super::{draw_speakers, synth_utterance, SyntheticSpeaker};
use crate::dsp::{write_wav, SampleFormat, Waveform};
use crate::error::{arg_err, Error, Result};

/// Pairs whose fundamentals differ by less than this are tagged hard.
pub const HARD_F0_GAP_HZ: f64 = 30.0;
const SPEAKERS_FILE: &str = "speakers.json";
const MAX_SPEAKER_DRAWS: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn manifest_name(self) -> String {
        format!("{}.tsv", self.name())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown split {s:?} (train, val, test)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub seed: u64,
    pub num_speakers: usize,
    pub utts_per_speaker: usize,
    /// Total mixtures over all splits.
    pub mixtures: usize,
    /// Train, validation and test fractions of both mixtures and utterances.
    pub splits: [f64; 3],
    pub duration_s: f64,
    pub channels: usize,
    /// SIR is drawn uniformly from `[-sir_db, sir_db]`.
    pub sir_db: f64,
    pub rt60_min: f64,
    pub rt60_max: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            num_speakers: 8,
            utts_per_speaker: 12,
            mixtures: 60,
            splits: [4.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0],
            duration_s: 4.0,
            channels: 1,
            sir_db: 5.0,
            rt60_min: 0.2,
            rt60_max: 0.6,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_speakers < 4 {
            return arg_err(format!("need at least 4 speakers for disjoint pairing, got {}", self.num_speakers));
        }
        if self.splits.iter().any(|f| !(*f >= 0.0)) || (self.splits.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return arg_err(format!("split fractions must be non-negative and sum to 1, got {:?}", self.splits));
        }
        if !(1..=2).contains(&self.channels) {
            return arg_err("channels must be 1 or 2");
        }
        if !(0.0..=super::MAX_SIR_DB).contains(&self.sir_db) {
            return arg_err(format!("sir_db must lie in [0, {}]", super::MAX_SIR_DB));
        }
        if !(0.0 <= self.rt60_min && self.rt60_min <= self.rt60_max && self.rt60_max <= 1.0) {
            return arg_err("need 0 <= rt60_min <= rt60_max <= 1");
        }
        for (split, n) in Split::ALL.iter().zip(self.utterance_counts()) {
            if n < 2 {
                return arg_err(format!(
                    "{} split gets {n} utterances per speaker; at least 2 are needed (target plus adaptation)",
                    split.name()
                ));
            }
        }
        Ok(())
    }

    fn partition(total: usize, fractions: [f64; 3]) -> [usize; 3] {
        let a = ((total as f64 * fractions[0]).round() as usize).min(total);
        let b = ((total as f64 * fractions[1]).round() as usize).min(total - a);
        [a, b, total - a - b]
    }

    pub fn utterance_counts(&self) -> [usize; 3] {
        Self::partition(self.utts_per_speaker, self.splits)
    }

    pub fn mixture_counts(&self) -> [usize; 3] {
        Self::partition(self.mixtures, self.splits)
    }
}

/// A generated corpus on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub root: PathBuf,
    pub speakers: Vec<SyntheticSpeaker>,
    pub train: Vec<MixtureRecord>,
    pub val: Vec<MixtureRecord>,
    pub test: Vec<MixtureRecord>,
}

impl Dataset {
    pub fn records(&self, split: Split) -> &[MixtureRecord] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Reads the manifests and speaker table written by [`gen_dataset`].
    pub fn load(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let speakers = serde_json::from_str(&std::fs::read_to_string(root.join(SPEAKERS_FILE))?)
            .map_err(|e| Error::InvalidArgument(format!("{SPEAKERS_FILE}: {e}")))?;
        let [train, val, test] = Split::ALL.map(|s| read_manifest(root.join(s.manifest_name())));
        Ok(Self { root, speakers, train: train?, val: val?, test: test? })
    }

    pub fn all_records(&self) -> impl Iterator<Item = &MixtureRecord> {
        self.train.iter().chain(&self.val).chain(&self.test)
    }
}

pub fn condition_of(a: &SyntheticSpeaker, b: &SyntheticSpeaker) -> Condition {
    if (a.f0 - b.f0).abs() < HARD_F0_GAP_HZ {
        Condition::Hard
    } else {
        Condition::Easy
    }
}

fn ordered_pairs(speakers: &[SyntheticSpeaker], c: Condition) -> Vec<(usize, usize)> {
    let mut out = vec![];
    for a in speakers {
        for b in speakers {
            if a.id != b.id && condition_of(a, b) == c {
                out.push((a.id, b.id));
            }
        }
    }
    out
}

/// Target/interferer speaker pairs for one split. Targets cycle through
/// fresh permutations of all speakers; each target cycles through its own
/// partners, alternating hard and easy pairs where it has both. A split of
/// two or more mixtures always contains both conditions when the speaker set
/// allows it.
fn plan_pairs(speakers: &[SyntheticSpeaker], n: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let partners = |t: usize, c: Condition| -> Vec<usize> {
        speakers.iter().filter(|b| b.id != t && condition_of(&speakers[t], b) == c).map(|b| b.id).collect()
    };
    let mut queues: Vec<[Vec<usize>; 2]> = vec![[vec![], vec![]]; speakers.len()];
    let mut next_partner = |t: usize, c: usize, rng: &mut ChaCha8Rng| -> Option<usize> {
        if queues[t][c].is_empty() {
            let mut p = partners(t, if c == 0 { Condition::Hard } else { Condition::Easy });
            p.shuffle(rng);
            queues[t][c] = p;
        }
        queues[t][c].pop()
    };
    let mut targets: Vec<usize> = vec![];
    let mut plan = Vec::with_capacity(n);
    for i in 0..n {
        if targets.is_empty() {
            targets = (0..speakers.len()).collect();
            targets.shuffle(rng);
        }
        let t = targets.pop().expect("refilled");
        let want = i % 2;
        let f = next_partner(t, want, rng).or_else(|| next_partner(t, 1 - want, rng)).expect("every speaker has a partner");
        plan.push((t, f));
    }
    for c in [Condition::Hard, Condition::Easy] {
        let present = plan.iter().any(|&(t, f)| condition_of(&speakers[t], &speakers[f]) == c);
        if n >= 2 && !present {
            if let Some(slot) = plan.iter_mut().find(|(t, _)| !partners(*t, c).is_empty()) {
                let options = partners(slot.0, c);
                slot.1 = *options.choose(rng).expect("non-empty");
            }
        }
    }
    plan
}

pub(super) fn utt_seed(master: u64, id: UttId) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(1 + (id.speaker as u64) * 100_003 + id.index as u64);
    rng.gen()
}

/// Corpus-relative path of a clean utterance.
pub fn utt_path(id: UttId) -> String {
    format!("utts/{id}.wav")
}

/// Generates the corpus under `out_dir`: clean utterances in `utts/`, mixture
/// files per split, `train.tsv`/`val.tsv`/`test.tsv` and `speakers.json`.
/// Everything is a pure function of `cfg`.
pub fn gen_dataset(cfg: &DatasetConfig, out_dir: impl AsRef<Path>) -> Result<Dataset> {
    cfg.validate()?;
    let root = out_dir.as_ref().to_path_buf();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut speakers = None;
    for _ in 0..MAX_SPEAKER_DRAWS {
        let s = draw_speakers(cfg.num_speakers, &mut rng)?;
        if !ordered_pairs(&s, Condition::Hard).is_empty() && !ordered_pairs(&s, Condition::Easy).is_empty() {
            speakers = Some(s);
            break;
        }
    }
    let speakers = speakers.ok_or_else(|| Error::InvalidArgument("could not draw both hard and easy speaker pairs".into()))?;

    for split in Split::ALL {
        std::fs::create_dir_all(root.join(split.name()))?;
    }
    std::fs::create_dir_all(root.join("utts"))?;

    let mut cache: BTreeMap<UttId, Waveform> = BTreeMap::new();
    let mut utterance = |id: UttId| -> Result<Waveform> {
        if let Some(w) = cache.get(&id) {
            return Ok(w.clone());
        }
        let w = synth_utterance(&speakers[id.speaker], cfg.duration_s, utt_seed(cfg.seed, id))?;
        write_wav(root.join(utt_path(id)), &[&w], SampleFormat::Float32)?;
        cache.insert(id, w.clone());
        Ok(w)
    };

    let utt_counts = cfg.utterance_counts();
    let mix_counts = cfg.mixture_counts();
    let mut first_utt = 0;
    let mut manifests: Vec<Vec<MixtureRecord>> = vec![];
    for (si, split) in Split::ALL.into_iter().enumerate() {
        let pool: Vec<usize> = (first_utt..first_utt + utt_counts[si]).collect();
        first_utt += utt_counts[si];
        let mut records = Vec::with_capacity(mix_counts[si]);
        for (i, (t, f)) in plan_pairs(&speakers, mix_counts[si], &mut rng).into_iter().enumerate() {
            let t_idx = *pool.choose(&mut rng).expect("pool");
            let a_idx = **pool.iter().filter(|&&u| u != t_idx).collect::<Vec<_>>().choose(&mut rng).expect("pool >= 2");
            let f_idx = *pool.choose(&mut rng).expect("pool");
            let sir = if cfg.sir_db == 0.0 { 0.0 } else { rng.gen_range(-cfg.sir_db..=cfg.sir_db) };
            let rt60 = if cfg.rt60_max == cfg.rt60_min { cfg.rt60_min } else { rng.gen_range(cfg.rt60_min..cfg.rt60_max) };
            let seed: u64 = rng.gen();

            let t_id = UttId { speaker: t, index: t_idx };
            let f_id = UttId { speaker: f, index: f_idx };
            let a_id = UttId { speaker: t, index: a_idx };
            let (tw, fw) = (utterance(t_id)?, utterance(f_id)?);
            utterance(a_id)?;
            let rec = make_mixture(
                (&tw, t_id),
                (&fw, f_id),
                &utt_path(a_id),
                condition_of(&speakers[t], &speakers[f]),
                sir,
                rt60,
                cfg.channels,
                seed,
                &root,
                &format!("{}/{i:04}", split.name()),
            )?;
            records.push(rec);
        }
        write_manifest(root.join(split.manifest_name()), &records)?;
        manifests.push(records);
    }
    let json = serde_json::to_string_pretty(&speakers).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    std::fs::write(root.join(SPEAKERS_FILE), json)?;

    let test = manifests.pop().expect("3 splits");
    let val = manifests.pop().expect("3 splits");
    let train = manifests.pop().expect("3 splits");
    Ok(Dataset { root, speakers, train, val, test })
}
