use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::LoadedRecord;
use super::eval::evaluate;
use super::optim::{clip_grad_norm, Adam};
use crate::autodiff::{Graph, Tensor};
use crate::dsp::Waveform;
use crate::error::{arg_err, Error, Result};
use crate::losses::mtl_loss;
use crate::net::{save_checkpoint, Mixture, ModelParams, NetConfig};
use crate::synth::utt_path;

pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const TRAIN_LOG: &str = "train.log";
const DIVERGENCE_DUMP: &str = "diverged_batch.txt";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Joint L2 norm the gradient is clipped to.
    pub grad_clip: f64,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Weight of the speaker cross-entropy; 0 trains on SiSDR alone.
    pub alpha: f64,
    /// Training examples are random crops of this many seconds; 0 uses
    /// whole mixtures. An epoch draws `⌊mixture length / crop⌋` crops from
    /// every mixture, so it sees about as much audio as one pass over the
    /// split. Validation always uses whole mixtures.
    pub crop_s: f64,
    /// Draw each example's adaptation utterance afresh from the target
    /// speaker's clean training utterances (never the one in the mixture)
    /// instead of always using the record's own.
    pub resample_adaptation: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            batch_size: 4,
            max_epochs: 30,
            grad_clip: 5.0,
            patience: 5,
            seed: 0,
            alpha: 0.0,
            crop_s: 0.5,
            resample_adaptation: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, net: &NetConfig) -> Result<()> {
        let positive = [("lr", self.lr), ("grad_clip", self.grad_clip)];
        if let Some((k, v)) = positive.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return arg_err(format!("{k} must be positive, got {v}"));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return arg_err("batch_size, max_epochs and patience must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return arg_err("Adam betas must lie in [0, 1)");
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) || !(self.crop_s >= 0.0 && self.crop_s.is_finite()) {
            return arg_err("alpha and crop_s must be finite and non-negative");
        }
        if self.alpha > 0.0 && net.num_speakers == 0 {
            return arg_err("alpha > 0 needs a speaker classification head (num_speakers > 0)");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_improvement: f64,
    pub seconds: f64,
}

impl EpochLog {
    pub fn line(&self) -> String {
        format!("{}\t{:.6}\t{:.6}\t{:.3}", self.epoch, self.train_loss, self.val_improvement, self.seconds)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation improvement.
    pub best: ModelParams,
    pub best_epoch: usize,
    pub best_val: f64,
    pub history: Vec<EpochLog>,
}

fn crop(w: &Waveform, start: usize, len: usize) -> Waveform {
    Waveform { samples: w.samples[start..start + len].to_vec(), sample_rate: w.sample_rate }
}

fn crop_example(r: &LoadedRecord, crop_len: usize, rng: &mut ChaCha8Rng) -> (Mixture, Waveform) {
    let len = r.target.len().min(r.mixture.len());
    if crop_len == 0 || crop_len >= len {
        return (r.mixture.clone(), r.target.clone());
    }
    let start = rng.gen_range(0..=len - crop_len);
    let mix = match &r.mixture {
        Mixture::Mono(a) => Mixture::Mono(crop(a, start, crop_len)),
        Mixture::Stereo(a, b) => Mixture::Stereo(crop(a, start, crop_len), crop(b, start, crop_len)),
    };
    (mix, crop(&r.target, start, crop_len))
}

struct Step {
    loss: f64,
    grads: Vec<Tensor>,
}

/// For every record, the indices of records whose adaptation utterance is a
/// clean recording of the same speaker other than the one in the mixture.
fn adaptation_pools(train: &[LoadedRecord]) -> Vec<Vec<usize>> {
    train
        .iter()
        .map(|r| {
            let own = utt_path(r.record.target_utt);
            let mut seen = std::collections::BTreeSet::new();
            (0..train.len())
                .filter(|&j| {
                    let a = &train[j].record;
                    a.speaker == r.record.speaker && a.adaptation != own && seen.insert(a.adaptation.clone())
                })
                .collect()
        })
        .collect()
}

fn example_step(
    params: &ModelParams,
    mix: &Mixture,
    target: &Waveform,
    adaptation: &Waveform,
    r: &LoadedRecord,
    alpha: f64,
) -> Result<Step> {
    let mut g = Graph::new();
    let m = params.bind(&mut g);
    let out = m.forward_extract(&mut g, mix, adaptation)?;
    let reference = g.input(Tensor::row(&target.samples));
    let logits = if alpha > 0.0 { Some(m.classify_speaker(&mut g, out.speaker)?) } else { None };
    let (loss, report) = mtl_loss(&mut g, out.estimate, reference, logits, r.record.speaker, alpha)?;
    if !report.total.is_finite() {
        return Ok(Step { loss: report.total, grads: vec![] });
    }
    g.backward(loss)?;
    Ok(Step { loss: report.total, grads: m.vars().grads(&g) })
}

fn dump_divergence(out_dir: &Path, epoch: usize, batch: &[(usize, f64)], train: &[LoadedRecord]) -> String {
    let mut s = format!("non-finite loss in epoch {epoch}; last batch:\n");
    for &(i, loss) in batch {
        let r = &train[i].record;
        let _ = writeln!(s, "  {}\tspeaker {}\tsir {}\trt60 {}\tloss {loss}", r.mixture, r.speaker, r.sir_db, r.rt60);
    }
    let _ = std::fs::write(out_dir.join(DIVERGENCE_DUMP), &s);
    s
}

/// Minimizes `−SiSDR + α·CE` over `train`, validating on `val` after every
/// epoch. Writes `train.log` and the best checkpoint into `out_dir`.
///
/// Examples within a batch run one after another and their gradients are
/// summed in batch order, so a run is a pure function of the configs and data.
pub fn train(
    net: &NetConfig,
    cfg: &TrainConfig,
    train: &[LoadedRecord],
    val: &[LoadedRecord],
    out_dir: &Path,
) -> Result<TrainOutcome> {
    net.validate()?;
    cfg.validate(net)?;
    if train.is_empty() || val.is_empty() {
        return arg_err("training needs non-empty train and validation splits");
    }
    if cfg.alpha > 0.0 {
        if let Some(r) = train.iter().find(|r| r.record.speaker >= net.num_speakers) {
            return arg_err(format!("speaker {} exceeds num_speakers {}", r.record.speaker, net.num_speakers));
        }
    }
    std::fs::create_dir_all(out_dir)?;
    let mut params = ModelParams::init(*net, cfg.seed)?;
    let mut adam = Adam::new(cfg.lr, cfg.beta1, cfg.beta2);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_da7a);
    let crop_len = (cfg.crop_s * crate::dsp::DEFAULT_SAMPLE_RATE as f64).round() as usize;

    let pools = adaptation_pools(train);
    let mut log = String::new();
    let mut history = Vec::new();
    let mut best = (params.clone(), 0usize, f64::NEG_INFINITY);
    let mut since_best = 0;
    for epoch in 1..=cfg.max_epochs {
        let t0 = Instant::now();
        let mut order: Vec<usize> = (0..train.len())
            .flat_map(|i| {
                let len = train[i].target.len();
                let per = len.checked_div(crop_len).unwrap_or(1).max(1);
                std::iter::repeat_n(i, per)
            })
            .collect();
        order.shuffle(&mut rng);
        let examples = order.len();
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut acc: Option<Vec<Tensor>> = None;
            let mut seen = Vec::with_capacity(batch.len());
            for &i in batch {
                let (mix, target) = crop_example(&train[i], crop_len, &mut rng);
                let adaptation = match pools[i].choose(&mut rng) {
                    Some(&j) if cfg.resample_adaptation => &train[j].adaptation,
                    _ => &train[i].adaptation,
                };
                let step = match example_step(&params, &mix, &target, adaptation, &train[i], cfg.alpha) {
                    Ok(s) => s,
                    Err(Error::Numeric(msg)) => {
                        seen.push((i, f64::NAN));
                        let dump = dump_divergence(out_dir, epoch, &seen, train);
                        return Err(Error::Diverged(format!("{msg}\n{dump}")));
                    }
                    Err(e) => return Err(e),
                };
                seen.push((i, step.loss));
                if !step.loss.is_finite() {
                    return Err(Error::Diverged(dump_divergence(out_dir, epoch, &seen, train)));
                }
                loss_sum += step.loss;
                match &mut acc {
                    None => acc = Some(step.grads),
                    Some(a) => a.iter_mut().zip(&step.grads).for_each(|(x, y)| x.add_assign(y.data())),
                }
            }
            let mut grads = acc.expect("non-empty batch");
            let inv = 1.0 / batch.len() as f64;
            for g in grads.iter_mut() {
                g.data_mut().iter_mut().for_each(|x| *x *= inv);
            }
            let norm = clip_grad_norm(&mut grads, cfg.grad_clip);
            if !norm.is_finite() {
                return Err(Error::Diverged(dump_divergence(out_dir, epoch, &seen, train)));
            }
            adam.step(params.registry.tensors_mut(), &grads);
        }
        let val_imp = evaluate(&params, val)?.all.improvement;
        let entry = EpochLog {
            epoch,
            train_loss: loss_sum / examples as f64,
            val_improvement: val_imp,
            seconds: t0.elapsed().as_secs_f64(),
        };
        log.push_str(&entry.line());
        log.push('\n');
        std::fs::write(out_dir.join(TRAIN_LOG), &log)?;
        history.push(entry);
        if val_imp > best.2 {
            best = (params.clone(), epoch, val_imp);
            save_checkpoint(&params, out_dir.join(BEST_CHECKPOINT))?;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    Ok(TrainOutcome { best: best.0, best_epoch: best.1, best_val: best.2, history })
}
