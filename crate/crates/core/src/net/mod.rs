//! The extraction network.
//!
//! ```text
//! mixture ─ encoder ─ gLN ─ 1×1 ─ repeat 1 ─ adaptation ─ [IPD fusion] ─ repeats 2..R ─ mask ─┐
//!              └──────────────────────────────────────────────────────────────────────────── ⊙ ─ decoder ─ estimate
//! adaptation utterance ─ encoder ─ gLN ─ 1×1 ─ block ─ time mean ─ e
//! ```
//!
//! The adaptation layer works on the bottleneck channels, so `e` has
//! `bottleneck` rows.

mod checkpoint;
mod init;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};

use serde::{Deserialize, Serialize};

use crate::adaptation::{asa_forward, scaling_adapt, Adaptation, AsaConfig, MixtureEmbedding, SpeakerEmbedding};
use crate::autodiff::{BoundParams, Graph, ParamRegistry, Tensor, Var};
use crate::dsp::{ipd, Waveform};
use crate::error::{arg_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Channels {
    Single,
    /// Two channels encoded separately and summed.
    #[serde(rename = "parallel-2ch")]
    Parallel2ch,
    /// First channel plus inter-channel phase difference features.
    #[serde(rename = "ipd-2ch")]
    Ipd2ch,
}

impl Channels {
    pub fn count(self) -> usize {
        match self {
            Channels::Single => 1,
            _ => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    /// Encoder filters.
    pub enc_channels: usize,
    /// Encoder window in samples.
    pub enc_kernel: usize,
    pub enc_stride: usize,
    /// Channels between blocks; also the adaptation dimension.
    pub bottleneck: usize,
    /// Channels inside a block.
    pub hidden: usize,
    /// Depthwise kernel width (odd).
    pub block_kernel: usize,
    /// Blocks per repeat, dilations 1, 2, 4, …
    pub blocks: usize,
    pub repeats: usize,
    pub adaptation: Adaptation,
    pub channels: Channels,
    /// Size of the speaker classification head; 0 disables it.
    pub num_speakers: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            enc_channels: 64,
            enc_kernel: 20,
            enc_stride: 10,
            bottleneck: 32,
            hidden: 64,
            block_kernel: 3,
            blocks: 4,
            repeats: 2,
            adaptation: Adaptation::Asa(AsaConfig::default()),
            channels: Channels::Single,
            num_speakers: 0,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("enc_channels", self.enc_channels),
            ("enc_kernel", self.enc_kernel),
            ("enc_stride", self.enc_stride),
            ("bottleneck", self.bottleneck),
            ("hidden", self.hidden),
            ("block_kernel", self.block_kernel),
            ("blocks", self.blocks),
            ("repeats", self.repeats),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return arg_err(format!("{name} must be positive"));
        }
        if self.block_kernel.is_multiple_of(2) {
            return arg_err("block_kernel must be odd");
        }
        if let Adaptation::Asa(a) = &self.adaptation {
            a.validate()?;
        }
        Ok(())
    }

    /// Number of encoder frames for `len` samples.
    pub fn frames(&self, len: usize) -> Result<usize> {
        if len < self.enc_kernel {
            return arg_err(format!("{len} samples is shorter than one {}-sample encoder window", self.enc_kernel));
        }
        Ok((len - self.enc_kernel) / self.enc_stride + 1)
    }

    pub fn with_adaptation(mut self, a: Adaptation) -> Self {
        self.adaptation = a;
        self
    }
}

/// All learnable tensors of one network plus the config that shaped them.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: NetConfig,
    pub registry: ParamRegistry,
}

impl ModelParams {
    /// Seeded initialization.
    pub fn init(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, registry: init::initialize(&config, seed)? })
    }

    pub fn parameter_count(&self) -> usize {
        self.registry.parameter_count()
    }

    pub fn bind<'a>(&'a self, g: &mut Graph) -> BoundModel<'a> {
        BoundModel { params: self, vars: self.registry.bind(g) }
    }
}

/// One or two mixture channels.
#[derive(Clone, Debug, PartialEq)]
pub enum Mixture {
    Mono(Waveform),
    Stereo(Waveform, Waveform),
}

impl Mixture {
    pub fn first(&self) -> &Waveform {
        match self {
            Mixture::Mono(w) | Mixture::Stereo(w, _) => w,
        }
    }

    pub fn len(&self) -> usize {
        self.first().len()
    }

    pub fn is_empty(&self) -> bool {
        self.first().is_empty()
    }

    pub fn from_channels(mut chans: Vec<Waveform>) -> Result<Self> {
        match chans.len() {
            1 => Ok(Mixture::Mono(chans.remove(0))),
            2 => {
                let b = chans.pop().expect("two");
                let a = chans.pop().expect("two");
                Ok(Mixture::Stereo(a, b))
            }
            n => arg_err(format!("mixtures have one or two channels, got {n}")),
        }
    }
}

/// Test and diagnostic hooks for [`BoundModel::forward_extract`].
#[derive(Clone, Debug, Default)]
pub struct ForwardOptions {
    /// Replace the auxiliary network's speaker vector.
    pub speaker_override: Option<Tensor>,
    /// Skip the adaptation layer entirely.
    pub bypass_adaptation: bool,
}

/// Graph handles produced by one extraction forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Extraction {
    /// `[1×L]` waveform, same length as the mixture.
    pub estimate: Var,
    /// `[N×T]` encoder output.
    pub encoding: Var,
    /// `[N×T]` sigmoid mask.
    pub mask: Var,
    pub speaker: Var,
    /// ASA weights over pooled frames; absent for SA.
    pub attention: Option<Var>,
}

/// [`ModelParams`] bound as trainable leaves of one graph.
pub struct BoundModel<'a> {
    params: &'a ModelParams,
    vars: BoundParams,
}

fn row(w: &Waveform) -> Tensor {
    Tensor::row(&w.samples)
}

impl<'a> BoundModel<'a> {
    pub fn config(&self) -> &NetConfig {
        &self.params.config
    }

    pub fn vars(&self) -> &BoundParams {
        &self.vars
    }

    fn p(&self, name: &str) -> Var {
        let idx = self
            .params
            .registry
            .index_of(name)
            .unwrap_or_else(|| panic!("parameter {name} missing from registry"));
        self.vars.var(idx)
    }

    fn pointwise(&self, g: &mut Graph, prefix: &str, x: Var) -> Result<Var> {
        let y = g.matmul(self.p(&format!("{prefix}.weight")), x)?;
        g.add(y, self.p(&format!("{prefix}.bias")))
    }

    fn block(&self, g: &mut Graph, prefix: &str, x: Var, dilation: usize) -> Result<Var> {
        let h = self.pointwise(g, &format!("{prefix}.in"), x)?;
        let h = g.prelu(h, self.p(&format!("{prefix}.prelu1")))?;
        let h = g.global_layer_norm(h, self.p(&format!("{prefix}.norm1.gain")), self.p(&format!("{prefix}.norm1.bias")))?;
        let h = g.depthwise_conv1d(h, self.p(&format!("{prefix}.dconv.weight")), dilation)?;
        let h = g.add(h, self.p(&format!("{prefix}.dconv.bias")))?;
        let h = g.prelu(h, self.p(&format!("{prefix}.prelu2")))?;
        let h = g.global_layer_norm(h, self.p(&format!("{prefix}.norm2.gain")), self.p(&format!("{prefix}.norm2.bias")))?;
        let out = self.pointwise(g, &format!("{prefix}.out"), h)?;
        g.add(x, out)
    }

    fn encoder_pre(&self, g: &mut Graph, w: &Waveform, kernel: &str) -> Result<Var> {
        self.config().frames(w.len())?;
        let x = g.input(row(w));
        g.conv1d(x, self.p(kernel), self.config().enc_stride)
    }

    /// Waveform encoding `[N×T]`, rectified.
    pub fn encode(&self, g: &mut Graph, mix: &Mixture) -> Result<Var> {
        let cfg = *self.config();
        let pre = match (cfg.channels, mix) {
            (Channels::Parallel2ch, Mixture::Stereo(a, b)) => {
                if a.len() != b.len() {
                    return arg_err("parallel encoder needs equal-length channels");
                }
                let ea = self.encoder_pre(g, a, "encoder.weight")?;
                let eb = self.encoder_pre(g, b, "encoder2.weight")?;
                g.add(ea, eb)?
            }
            (Channels::Parallel2ch, Mixture::Mono(_)) => {
                return arg_err("parallel-2ch network needs a two-channel mixture")
            }
            (_, m) => self.encoder_pre(g, m.first(), "encoder.weight")?,
        };
        Ok(g.relu(pre))
    }

    /// Speaker vector `[B×1]` from an adaptation utterance.
    pub fn aux_embed(&self, g: &mut Graph, utt: &Waveform) -> Result<Var> {
        let x = g.input(row(utt));
        self.config().frames(utt.len())?;
        let pre = g.conv1d(x, self.p("encoder.weight"), self.config().enc_stride)?;
        let enc = g.relu(pre);
        let h = g.global_layer_norm(enc, self.p("aux.norm.gain"), self.p("aux.norm.bias"))?;
        let h = self.pointwise(g, "aux.bottleneck", h)?;
        let h = self.block(g, "aux.block", h, 1)?;
        g.mean_cols(h)
    }

    /// Speaker logits `W·e` (`[S×1]`); softmax is left to the loss.
    pub fn classify_speaker(&self, g: &mut Graph, e: Var) -> Result<Var> {
        if self.config().num_speakers == 0 {
            return Err(Error::InvalidState("network has no speaker classification head".into()));
        }
        g.matmul(self.p("classifier.weight"), e)
    }

    fn ipd_branch(&self, g: &mut Graph, mix: &Mixture, frames: usize) -> Result<Var> {
        let Mixture::Stereo(a, b) = mix else {
            return arg_err("ipd-2ch network needs a two-channel mixture");
        };
        let feats = ipd(a, b)?;
        let cfg = self.config();
        let (bins, tf) = (feats.values.rows(), feats.values.cols());
        let mut up = vec![0.0; bins * frames];
        for j in 0..frames {
            let center = (j * cfg.enc_stride) as f64 + cfg.enc_kernel as f64 / 2.0;
            let f = ((center - feats.window as f64 / 2.0) / feats.hop as f64).round();
            let f = f.clamp(0.0, (tf - 1) as f64) as usize;
            for bin in 0..bins {
                up[bin * frames + j] = feats.values.at(bin, f);
            }
        }
        let x = g.input(Tensor::new(&[bins, frames], up)?);
        let h = self.pointwise(g, "ipd.proj", x)?;
        self.block(g, "ipd.block", h, 1)
    }

    /// Mixture (+ adaptation utterance) → estimated target waveform.
    pub fn forward_extract(&self, g: &mut Graph, mix: &Mixture, adaptation_utt: &Waveform) -> Result<Extraction> {
        self.forward_with(g, mix, adaptation_utt, &ForwardOptions::default())
    }

    pub fn forward_with(
        &self,
        g: &mut Graph,
        mix: &Mixture,
        adaptation_utt: &Waveform,
        opts: &ForwardOptions,
    ) -> Result<Extraction> {
        let cfg = *self.config();
        match (cfg.channels, mix) {
            (Channels::Single, Mixture::Stereo(..)) => {
                return arg_err("single-channel network given a two-channel mixture")
            }
            (Channels::Parallel2ch | Channels::Ipd2ch, Mixture::Mono(_)) => {
                return arg_err("two-channel network given a one-channel mixture")
            }
            _ => {}
        }
        let len = mix.len();
        let encoding = self.encode(g, mix)?;
        let frames = g.value(encoding).cols();
        let speaker = match &opts.speaker_override {
            Some(t) => g.input(t.clone()),
            None => self.aux_embed(g, adaptation_utt)?,
        };

        let h = g.global_layer_norm(encoding, self.p("bottleneck.norm.gain"), self.p("bottleneck.norm.bias"))?;
        let mut h = self.pointwise(g, "bottleneck", h)?;
        let mut attention = None;
        for r in 0..cfg.repeats {
            for b in 0..cfg.blocks {
                h = self.block(g, &format!("tcn.{r}.{b}"), h, 1 << b)?;
            }
            if r == 0 {
                if !opts.bypass_adaptation {
                    let y = MixtureEmbedding::new(g, h)?;
                    let e = SpeakerEmbedding::new(g, speaker)?;
                    h = match &cfg.adaptation {
                        Adaptation::Sa => scaling_adapt(g, y, e)?,
                        Adaptation::Asa(a) => {
                            let out = asa_forward(g, y, e, a)?;
                            attention = Some(out.weights);
                            out.output
                        }
                    };
                }
                if cfg.channels == Channels::Ipd2ch {
                    let spatial = self.ipd_branch(g, mix, frames)?;
                    let cat = g.concat_rows(h, spatial)?;
                    h = self.pointwise(g, "ipd.fuse", cat)?;
                }
            }
        }
        let h = g.prelu(h, self.p("mask.prelu"))?;
        let logits = self.pointwise(g, "mask", h)?;
        let mask = g.sigmoid(logits);
        let masked = g.mul(mask, encoding)?;
        let wave = g.conv_transpose1d(masked, self.p("decoder.weight"), cfg.enc_stride)?;
        let estimate = g.fit_cols(wave, len)?;
        Ok(Extraction { estimate, encoding, mask, speaker, attention })
    }
}
