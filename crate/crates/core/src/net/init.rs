use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Channels, NetConfig};
use crate::autodiff::{ParamRegistry, Tensor};
use crate::error::Result;

const PRELU_INIT: f64 = 0.25;
/// Mask projection starts near zero so the untrained mask sits near 0.5.
const MASK_INIT_SCALE: f64 = 0.01;
const ENCODER_JITTER: f64 = 0.01;

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-bound..bound)).collect()).expect("shape")
}

/// Row `i`, column `k` of the orthonormal DCT-II matrix of size `n`.
fn dct(n: usize, i: usize, k: usize) -> f64 {
    let s = if i == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
    s * (PI * (k as f64 + 0.5) * i as f64 / n as f64).cos()
}

/// Encoder and decoder kernels that start as an analysis/synthesis pair.
///
/// Filters come in `±v` pairs so `relu(v·x) − relu(−v·x) = v·x`; the `v`
/// are rows of an orthonormal DCT truncated to the window length, which makes
/// them a tight frame whenever `N/2 ≥ K`. With frames overlapping
/// `K/stride` times the decoder divides by that overlap.
fn encoder_pair(cfg: &NetConfig, rng: &mut ChaCha8Rng) -> (Tensor, Tensor) {
    let (n, k) = (cfg.enc_channels, cfg.enc_kernel);
    let pairs = n / 2;
    let size = pairs.max(k);
    let overlap = (k as f64 / cfg.enc_stride as f64).max(1.0);
    let mut enc = vec![0.0; n * k];
    let mut dec = vec![0.0; n * k];
    for p in 0..pairs {
        for t in 0..k {
            let v = if pairs >= k { dct(size, p, t) } else { dct(size, t, p) };
            let jitter = ENCODER_JITTER * rng.gen_range(-1.0..1.0);
            enc[2 * p * k + t] = v + jitter;
            enc[(2 * p + 1) * k + t] = -v - jitter;
            dec[2 * p * k + t] = v / overlap;
            dec[(2 * p + 1) * k + t] = -v / overlap;
        }
    }
    if n % 2 == 1 {
        for t in 0..k {
            enc[(n - 1) * k + t] = ENCODER_JITTER * rng.gen_range(-1.0..1.0);
        }
    }
    (
        Tensor::new(&[n, 1, k], enc).expect("shape"),
        Tensor::new(&[n, 1, k], dec).expect("shape"),
    )
}

fn pointwise(reg: &mut ParamRegistry, rng: &mut ChaCha8Rng, name: &str, out: usize, inp: usize, scale: f64) -> Result<()> {
    let bound = scale / (inp as f64).sqrt();
    reg.insert(format!("{name}.weight"), uniform(rng, &[out, inp], bound))?;
    reg.insert(format!("{name}.bias"), Tensor::zeros(&[out, 1]))
}

fn norm(reg: &mut ParamRegistry, name: &str, ch: usize) -> Result<()> {
    reg.insert(format!("{name}.gain"), Tensor::ones(&[ch, 1]))?;
    reg.insert(format!("{name}.bias"), Tensor::zeros(&[ch, 1]))
}

fn block(reg: &mut ParamRegistry, rng: &mut ChaCha8Rng, name: &str, cfg: &NetConfig) -> Result<()> {
    let (b, h, p) = (cfg.bottleneck, cfg.hidden, cfg.block_kernel);
    pointwise(reg, rng, &format!("{name}.in"), h, b, 1.0)?;
    reg.insert(format!("{name}.prelu1"), Tensor::scalar(PRELU_INIT))?;
    norm(reg, &format!("{name}.norm1"), h)?;
    reg.insert(format!("{name}.dconv.weight"), uniform(rng, &[h, p], 1.0 / (p as f64).sqrt()))?;
    reg.insert(format!("{name}.dconv.bias"), Tensor::zeros(&[h, 1]))?;
    reg.insert(format!("{name}.prelu2"), Tensor::scalar(PRELU_INIT))?;
    norm(reg, &format!("{name}.norm2"), h)?;
    pointwise(reg, rng, &format!("{name}.out"), b, h, 1.0)
}

/// Registers every parameter in a fixed order. The order and shapes depend
/// only on `cfg`, never on the adaptation layer, which owns no parameters.
pub(super) fn initialize(cfg: &NetConfig, seed: u64) -> Result<ParamRegistry> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reg = ParamRegistry::new();
    let (enc, dec) = encoder_pair(cfg, &mut rng);
    reg.insert("encoder.weight", enc.clone())?;
    if cfg.channels == Channels::Parallel2ch {
        reg.insert("encoder2.weight", enc)?;
    }
    norm(&mut reg, "bottleneck.norm", cfg.enc_channels)?;
    pointwise(&mut reg, &mut rng, "bottleneck", cfg.bottleneck, cfg.enc_channels, 1.0)?;
    for r in 0..cfg.repeats {
        for b in 0..cfg.blocks {
            block(&mut reg, &mut rng, &format!("tcn.{r}.{b}"), cfg)?;
        }
    }
    norm(&mut reg, "aux.norm", cfg.enc_channels)?;
    pointwise(&mut reg, &mut rng, "aux.bottleneck", cfg.bottleneck, cfg.enc_channels, 1.0)?;
    block(&mut reg, &mut rng, "aux.block", cfg)?;
    if cfg.channels == Channels::Ipd2ch {
        let bins = crate::dsp::next_pow2(
            (crate::dsp::IPD_WINDOW_MS * crate::dsp::DEFAULT_SAMPLE_RATE as f64 / 1000.0).round() as usize,
        ) / 2
            + 1;
        pointwise(&mut reg, &mut rng, "ipd.proj", cfg.bottleneck, bins, 1.0)?;
        block(&mut reg, &mut rng, "ipd.block", cfg)?;
        pointwise(&mut reg, &mut rng, "ipd.fuse", cfg.bottleneck, 2 * cfg.bottleneck, 1.0)?;
    }
    reg.insert("mask.prelu", Tensor::scalar(PRELU_INIT))?;
    pointwise(&mut reg, &mut rng, "mask", cfg.enc_channels, cfg.bottleneck, MASK_INIT_SCALE)?;
    reg.insert("decoder.weight", dec)?;
    if cfg.num_speakers > 0 {
        let bound = 1.0 / (cfg.bottleneck as f64).sqrt();
        reg.insert("classifier.weight", uniform(&mut rng, &[cfg.num_speakers, cfg.bottleneck], bound))?;
    }
    Ok(reg)
}
