//! Speaker adaptation layers applied to the mixture embedding.
//!
//! [`scaling_adapt`] multiplies every frame of the mixture embedding `Y`
//! (`[N×T]`) by the speaker vector `e` (`[N×1]`). The attention variant
//! ([`asa_forward`]) first summarizes `Y` into `T_m = ⌈T/M⌉` block means `U`,
//! scores each block against `e` with a plain dot product, turns the scores
//! into softmax weights `w`, forms the rank-one bias `B = e·w`, adds `e` back
//! to every column, nearest-upsamples to `T` frames and scales `Y` by the
//! result. None of these steps owns a learnable parameter.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{arg_err, shape_err, Error, Result};

/// Default number of frames averaged into one attention unit.
pub const DEFAULT_POOL: usize = 20;

/// `Y`, the `[N×T]` mixture embedding entering the adaptation layer.
#[derive(Clone, Copy, Debug)]
pub struct MixtureEmbedding(Var);

impl MixtureEmbedding {
    pub fn new(g: &Graph, y: Var) -> Result<Self> {
        let s = g.value(y).shape();
        if s.len() != 2 || s[0] == 0 || s[1] == 0 {
            return shape_err(format!("mixture embedding must be a non-empty [N×T] matrix, got {s:?}"));
        }
        Ok(Self(y))
    }

    pub fn var(self) -> Var {
        self.0
    }
}

/// `e`, the `[N×1]` target speaker vector.
#[derive(Clone, Copy, Debug)]
pub struct SpeakerEmbedding(Var);

impl SpeakerEmbedding {
    pub fn new(g: &Graph, e: Var) -> Result<Self> {
        let t = g.value(e);
        if t.shape().len() != 2 || t.cols() != 1 || t.rows() == 0 {
            return shape_err(format!("speaker embedding must be [N×1], got {:?}", t.shape()));
        }
        if !t.is_finite() {
            return Err(Error::Numeric("speaker embedding is not finite".into()));
        }
        Ok(Self(e))
    }

    pub fn var(self) -> Var {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    /// Attend over `⌈T/M⌉` block means.
    Mean,
    /// Attend over all `T` frames directly.
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AsaConfig {
    /// Pool size `M`.
    pub pool: usize,
    /// Add `e` to every column of the attention bias.
    pub residual: bool,
    /// Multiply the attention bias by `√N` before the residual add.
    pub sqrt_scale: bool,
    pub pooling: Pooling,
}

impl Default for AsaConfig {
    fn default() -> Self {
        Self { pool: DEFAULT_POOL, residual: true, sqrt_scale: false, pooling: Pooling::Mean }
    }
}

impl AsaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pool == 0 {
            return arg_err("ASA pool size must be at least 1");
        }
        Ok(())
    }

    /// Pool size actually applied (`1` when pooling is off).
    pub fn effective_pool(&self) -> usize {
        match self.pooling {
            Pooling::Mean => self.pool,
            Pooling::None => 1,
        }
    }
}

/// Which adaptation layer the network uses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Adaptation {
    /// Repeat-and-multiply scaling adaptation.
    Sa,
    /// Attention-based scaling adaptation.
    Asa(AsaConfig),
}

fn check_dims(g: &Graph, y: Var, e: SpeakerEmbedding) -> Result<()> {
    let (n_y, n_e) = (g.value(y).rows(), g.value(e.var()).rows());
    if n_y != n_e {
        return shape_err(format!("embedding sizes differ: mixture N={n_y}, speaker N={n_e}"));
    }
    Ok(())
}

/// `Y ⊙ [e, e, …, e]`.
pub fn scaling_adapt(g: &mut Graph, y: MixtureEmbedding, e: SpeakerEmbedding) -> Result<Var> {
    check_dims(g, y.var(), e)?;
    g.mul(y.var(), e.var())
}

#[derive(Clone, Copy, Debug)]
pub struct Attention {
    /// `[1×T_m]` softmax weights.
    pub weights: Var,
    /// `[N×T_m]` rank-one bias `e·w` (times `√N` when requested).
    pub bias: Var,
}

/// `d = eᵀU`, `w = softmax(d)`, `B = e·w`.
pub fn asa_attention(g: &mut Graph, u: Var, e: SpeakerEmbedding, sqrt_scale: bool) -> Result<Attention> {
    check_dims(g, u, e)?;
    let et = g.transpose(e.var())?;
    let scores = g.matmul(et, u)?;
    let weights = g.softmax(scores)?;
    let mut bias = g.matmul(e.var(), weights)?;
    if sqrt_scale {
        let n = g.value(e.var()).rows() as f64;
        bias = g.scale(bias, n.sqrt());
    }
    Ok(Attention { weights, bias })
}

#[derive(Clone, Copy, Debug)]
pub struct AsaOutput {
    /// `Y ⊙ E`, `[N×T]`.
    pub output: Var,
    /// Attention weights over the pooled frames, `[1×T_m]`.
    pub weights: Var,
    /// The upsampled speaker matrix `E`, `[N×T]`.
    pub speaker_matrix: Var,
}

/// Full attention-based scaling adaptation.
pub fn asa_forward(g: &mut Graph, y: MixtureEmbedding, e: SpeakerEmbedding, cfg: &AsaConfig) -> Result<AsaOutput> {
    cfg.validate()?;
    check_dims(g, y.var(), e)?;
    let t = g.value(y.var()).cols();
    let m = cfg.effective_pool();
    let pooled = match cfg.pooling {
        Pooling::Mean => g.mean_pool1d(y.var(), m)?,
        Pooling::None => y.var(),
    };
    let att = asa_attention(g, pooled, e, cfg.sqrt_scale)?;
    let o = if cfg.residual { g.add(att.bias, e.var())? } else { att.bias };
    let speaker_matrix = match cfg.pooling {
        Pooling::Mean => g.nearest_upsample1d(o, m, t)?,
        Pooling::None => o,
    };
    let output = g.mul(y.var(), speaker_matrix)?;
    Ok(AsaOutput { output, weights: att.weights, speaker_matrix })
}

/// Shannon entropy (nats) of a probability vector, with `0·ln 0 = 0`.
pub fn attention_entropy(w: &[f64]) -> Result<f64> {
    let s: f64 = w.iter().sum();
    if (s - 1.0).abs() > 1e-6 || w.iter().any(|&p| p < 0.0 || !p.is_finite()) {
        return arg_err(format!("attention weights do not form a distribution (sum {s})"));
    }
    Ok(-w.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>())
}

/// Matrix–matrix attention used as the cost reference: the full `[T_m×T_m]`
/// score matrix `UᵀU` followed by a row-wise softmax.
pub fn matrix_attention_scores(g: &mut Graph, u: Var) -> Result<Var> {
    let ut = g.transpose(u)?;
    let scores = g.matmul(ut, u)?;
    g.softmax(scores)
}
