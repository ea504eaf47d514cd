use serde::Serialize;

use super::data::LoadedRecord;
use crate::adaptation::attention_entropy;
use crate::autodiff::Graph;
use crate::dsp::{sisdr, Waveform};
use crate::error::{Error, Result};
use crate::net::{Channels, Mixture, ModelParams};
use crate::synth::Condition;

#[derive(Clone, Debug, PartialEq)]
pub struct ExtractOutput {
    pub estimate: Waveform,
    /// ASA weights over pooled frame groups.
    pub attention: Option<Vec<f64>>,
}

/// Anything that maps a mixture and an adaptation utterance to an estimate.
pub trait Extractor {
    fn extract(&self, mixture: &Mixture, adaptation: &Waveform) -> Result<ExtractOutput>;

    /// Channel layout the extractor was built for, if it cares.
    fn channels(&self) -> Option<Channels> {
        None
    }
}

impl Extractor for ModelParams {
    fn extract(&self, mixture: &Mixture, adaptation: &Waveform) -> Result<ExtractOutput> {
        let mut g = Graph::new();
        let m = self.bind(&mut g);
        let out = m.forward_extract(&mut g, mixture, adaptation)?;
        let estimate = Waveform::new(g.value(out.estimate).data().to_vec(), mixture.first().sample_rate)?;
        let attention = out.attention.map(|w| g.value(w).data().to_vec());
        Ok(ExtractOutput { estimate, attention })
    }

    fn channels(&self) -> Option<Channels> {
        Some(self.config.channels)
    }
}

/// Returns the (first channel of the) mixture unchanged.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityExtractor;

impl Extractor for IdentityExtractor {
    fn extract(&self, mixture: &Mixture, _: &Waveform) -> Result<ExtractOutput> {
        Ok(ExtractOutput { estimate: mixture.first().clone(), attention: None })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RecordEval {
    pub mixture: String,
    pub condition: Condition,
    pub sisdr: f64,
    pub sisdr_mixture: f64,
    pub improvement: f64,
    pub attention_entropy: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Aggregate {
    pub count: usize,
    pub sisdr: f64,
    pub sisdr_mixture: f64,
    pub improvement: f64,
}

impl Aggregate {
    fn of<'a>(items: impl Iterator<Item = &'a RecordEval>) -> Option<Self> {
        let v: Vec<&RecordEval> = items.collect();
        if v.is_empty() {
            return None;
        }
        let n = v.len() as f64;
        let mean = |f: fn(&RecordEval) -> f64| v.iter().map(|r| f(r)).sum::<f64>() / n;
        Some(Self {
            count: v.len(),
            sisdr: mean(|r| r.sisdr),
            sisdr_mixture: mean(|r| r.sisdr_mixture),
            improvement: mean(|r| r.improvement),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EntropyStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    /// Entropy of a uniform distribution over the same number of groups.
    pub uniform: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub records: Vec<RecordEval>,
    pub hard: Option<Aggregate>,
    pub easy: Option<Aggregate>,
    pub all: Aggregate,
    pub entropy: Option<EntropyStats>,
}

impl EvalReport {
    pub fn from_records(records: Vec<RecordEval>, groups: Option<usize>) -> Result<Self> {
        let all = Aggregate::of(records.iter()).ok_or_else(|| Error::InvalidArgument("nothing to evaluate".into()))?;
        let hard = Aggregate::of(records.iter().filter(|r| r.condition == Condition::Hard));
        let easy = Aggregate::of(records.iter().filter(|r| r.condition == Condition::Easy));
        let ents: Vec<f64> = records.iter().filter_map(|r| r.attention_entropy).collect();
        let entropy = (!ents.is_empty()).then(|| EntropyStats {
            mean: ents.iter().sum::<f64>() / ents.len() as f64,
            min: ents.iter().copied().fold(f64::INFINITY, f64::min),
            max: ents.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            uniform: (groups.unwrap_or(1) as f64).ln(),
        });
        Ok(Self { records, hard, easy, all, entropy })
    }

    /// Rows of `(label, aggregate)` in display order.
    pub fn rows(&self) -> Vec<(&'static str, Aggregate)> {
        [("hard", self.hard), ("easy", self.easy), ("all", Some(self.all))]
            .into_iter()
            .filter_map(|(k, a)| a.map(|a| (k, a)))
            .collect()
    }

    /// Aligned plain-text table of the aggregates.
    pub fn table(&self) -> String {
        let mut s = format!("{:<6} {:>5} {:>12} {:>12} {:>12}\n", "cond", "n", "sisdr_db", "mixture_db", "improv_db");
        for (k, a) in self.rows() {
            s.push_str(&format!(
                "{:<6} {:>5} {:>12.3} {:>12.3} {:>12.3}\n",
                k, a.count, a.sisdr, a.sisdr_mixture, a.improvement
            ));
        }
        if let Some(e) = &self.entropy {
            s.push_str(&format!(
                "attention entropy: mean {:.4} min {:.4} max {:.4} (uniform {:.4})\n",
                e.mean, e.min, e.max, e.uniform
            ));
        }
        s
    }

    /// Per-record CSV.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("mixture,condition,sisdr_db,mixture_sisdr_db,improvement_db,attention_entropy\n");
        for r in &self.records {
            let ent = r.attention_entropy.map(|e| e.to_string()).unwrap_or_default();
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.mixture, r.condition, r.sisdr, r.sisdr_mixture, r.improvement, ent
            ));
        }
        s
    }
}

/// SiSDR of each estimate and of the raw mixture against the target image.
pub fn evaluate(model: &dyn Extractor, records: &[LoadedRecord]) -> Result<EvalReport> {
    let mut out = Vec::with_capacity(records.len());
    let mut groups = None;
    for r in records {
        let two = matches!(r.mixture, Mixture::Stereo(..));
        if let Some(ch) = model.channels() {
            if two != (ch != Channels::Single) {
                return Err(Error::InvalidState(format!(
                    "model expects {} mixture channel(s), {} has {}",
                    ch.count(),
                    r.record.mixture,
                    if two { 2 } else { 1 }
                )));
            }
        }
        let ex = model.extract(&r.mixture, &r.adaptation)?;
        let s_est = sisdr(&ex.estimate, &r.target)?;
        let s_mix = sisdr(r.mixture.first(), &r.target)?;
        let entropy = match &ex.attention {
            Some(w) => {
                groups = Some(w.len());
                Some(attention_entropy(w)?)
            }
            None => None,
        };
        out.push(RecordEval {
            mixture: r.record.mixture.clone(),
            condition: r.record.condition,
            sisdr: s_est,
            sisdr_mixture: s_mix,
            improvement: s_est - s_mix,
            attention_entropy: entropy,
        });
    }
    EvalReport::from_records(out, groups)
}
