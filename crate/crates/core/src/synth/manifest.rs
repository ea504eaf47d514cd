use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pair difficulty: `Hard` when the fundamentals are close.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Hard,
    Easy,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Condition::Hard => "hard",
            Condition::Easy => "easy",
        })
    }
}

impl FromStr for Condition {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hard" => Ok(Condition::Hard),
            "easy" => Ok(Condition::Easy),
            _ => Err(Error::InvalidArgument(format!("unknown condition {s:?}"))),
        }
    }
}

/// Clean utterance `index` of `speaker`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct UttId {
    pub speaker: usize,
    pub index: usize,
}

impl fmt::Display for UttId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}u{}", self.speaker, self.index)
    }
}

impl FromStr for UttId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("bad utterance id {s:?}"));
        let rest = s.strip_prefix('s').ok_or_else(bad)?;
        let (spk, idx) = rest.split_once('u').ok_or_else(bad)?;
        Ok(UttId { speaker: spk.parse().map_err(|_| bad())?, index: idx.parse().map_err(|_| bad())? })
    }
}

/// One mixture of the corpus. Paths are relative to the dataset root.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureRecord {
    /// One- or two-channel mixture file.
    pub mixture: String,
    /// Target image in the (first) mixture channel; the training reference.
    pub target: String,
    pub interferer: String,
    /// Anechoic utterance of the target speaker, never the one in the mixture.
    pub adaptation: String,
    pub speaker: usize,
    pub sir_db: f64,
    pub rt60: f64,
    pub condition: Condition,
    pub target_utt: UttId,
    pub interferer_utt: UttId,
}

const HEADER: &str = "mixture\ttarget\tinterferer\tadaptation\tspeaker\tsir_db\trt60\tcondition\ttarget_utt\tinterferer_utt";

fn format_record(r: &MixtureRecord) -> String {
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
        r.mixture, r.target, r.interferer, r.adaptation, r.speaker, r.sir_db, r.rt60, r.condition, r.target_utt, r.interferer_utt
    )
}

fn parse_record(line: &str, lineno: usize) -> Result<MixtureRecord> {
    let bad = |what: &str| Error::InvalidArgument(format!("manifest line {lineno}: {what}"));
    let f: Vec<&str> = line.split('\t').collect();
    if f.len() != 10 {
        return Err(bad(&format!("expected 10 fields, found {}", f.len())));
    }
    let num = |i: usize, name: &str| f[i].parse::<f64>().map_err(|_| bad(&format!("bad {name} {:?}", f[i])));
    Ok(MixtureRecord {
        mixture: f[0].into(),
        target: f[1].into(),
        interferer: f[2].into(),
        adaptation: f[3].into(),
        speaker: f[4].parse().map_err(|_| bad("bad speaker id"))?,
        sir_db: num(5, "sir_db")?,
        rt60: num(6, "rt60")?,
        condition: f[7].parse()?,
        target_utt: f[8].parse()?,
        interferer_utt: f[9].parse()?,
    })
}

pub fn write_manifest(path: impl AsRef<Path>, records: &[MixtureRecord]) -> Result<()> {
    let mut out = String::from(HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format_record(r));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<MixtureRecord>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == HEADER => {}
        _ => return Err(Error::InvalidArgument("manifest header missing or malformed".into())),
    }
    lines.filter(|(_, l)| !l.is_empty()).map(|(i, l)| parse_record(l, i + 1)).collect()
}
