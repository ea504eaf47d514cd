//! Training objectives: negative SiSDR, speaker cross-entropy, and their
//! weighted sum `−SiSDR + α·CE`.

use crate::autodiff::{Graph, Var};
use crate::error::{arg_err, Result};

/// Weight of the cross-entropy term when multi-task training is on.
pub const MTL_ALPHA: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport {
    pub total: f64,
    /// Negative SiSDR in dB.
    pub sisdr_term: f64,
    /// Cross-entropy in nats; zero when `alpha == 0`.
    pub ce_term: f64,
    pub alpha: f64,
}

/// Differentiable `−SiSDR(estimate, reference)`, both `[1×L]`.
pub fn sisdr_loss(g: &mut Graph, estimate: Var, reference: Var) -> Result<Var> {
    g.neg_sisdr(estimate, reference)
}

/// `−SiSDR + α·CE(softmax(logits), label)`.
///
/// With `alpha == 0` the cross-entropy is never evaluated, so SiSDR-only
/// training needs no classification head.
pub fn mtl_loss(
    g: &mut Graph,
    estimate: Var,
    reference: Var,
    logits: Option<Var>,
    label: usize,
    alpha: f64,
) -> Result<(Var, LossReport)> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return arg_err(format!("alpha must be a finite non-negative number, got {alpha}"));
    }
    if let Some(l) = logits {
        let classes = g.value(l).len();
        if label >= classes {
            return arg_err(format!("speaker label {label} out of range for {classes} classes"));
        }
    }
    let sisdr = sisdr_loss(g, estimate, reference)?;
    let sisdr_term = g.value(sisdr).item();
    if alpha == 0.0 {
        return Ok((sisdr, LossReport { total: sisdr_term, sisdr_term, ce_term: 0.0, alpha }));
    }
    let Some(logits) = logits else {
        return arg_err("alpha > 0 needs speaker logits");
    };
    let ce = g.cross_entropy(logits, label)?;
    let ce_term = g.value(ce).item();
    let weighted = g.scale(ce, alpha);
    let total = g.add(sisdr, weighted)?;
    let report = LossReport { total: g.value(total).item(), sisdr_term, ce_term, alpha };
    Ok((total, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::dsp::{sisdr, Waveform};
    use crate::gradcheck;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn loss_of(est: &[f64], reference: &[f64]) -> f64 {
        let mut g = Graph::new();
        let e = g.input(Tensor::row(est));
        let r = g.input(Tensor::row(reference));
        let l = sisdr_loss(&mut g, e, r).unwrap();
        g.value(l).item()
    }

    #[test]
    fn exact_match_and_orthogonal_regimes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = noise(&mut rng, 256);
        assert!(loss_of(&x, &x) <= -60.0);
        let n = 200;
        let s: Vec<f64> = (0..n).map(|i| (2.0 * std::f64::consts::PI * 5.0 * i as f64 / n as f64).sin()).collect();
        let c: Vec<f64> = (0..n).map(|i| (2.0 * std::f64::consts::PI * 5.0 * i as f64 / n as f64).cos()).collect();
        assert!(loss_of(&c, &s) >= 60.0);
    }

    #[test]
    fn agrees_with_metric_away_from_clamp() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let x = noise(&mut rng, 128);
            let e: Vec<f64> = x.iter().map(|v| v + rng.gen_range(-0.8..0.8)).collect();
            let metric = sisdr(&Waveform::at_8k(e.clone()), &Waveform::at_8k(x.clone())).unwrap();
            assert!((loss_of(&e, &x) + metric).abs() < 1e-6);
        }
    }

    #[test]
    fn scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = noise(&mut rng, 1024);
        let e: Vec<f64> = x.iter().map(|v| v + rng.gen_range(-1.0..1.0)).collect();
        let base = loss_of(&e, &x);
        for c in [0.5, 2.0, 10.0, 1e3] {
            let scaled: Vec<f64> = e.iter().map(|v| c * v).collect();
            assert!((loss_of(&scaled, &x) - base).abs() < 1e-9);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::row(&noise(&mut rng, 64));
        let e = Tensor::row(&noise(&mut rng, 64));
        let c = gradcheck::check(&[e], 1e-5, |g, v| {
            let r = g.input(x.clone());
            sisdr_loss(g, v[0], r)
        })
        .unwrap();
        assert!(c.max_rel_error < 1e-4);
    }

    #[test]
    fn zero_reference_rejected() {
        let mut g = Graph::new();
        let e = g.input(Tensor::row(&[1.0, 2.0]));
        let r = g.input(Tensor::row(&[0.0, 0.0]));
        assert!(sisdr_loss(&mut g, e, r).is_err());
    }

    fn mtl(alpha: f64, logits: &[f64], label: usize) -> (Graph, crate::Result<(Var, LossReport)>) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = noise(&mut rng, 64);
        let est: Vec<f64> = x.iter().map(|v| v + 0.3 * rng.gen_range(-1.0..1.0)).collect();
        let mut g = Graph::new();
        let e = g.input(Tensor::row(&est));
        let r = g.input(Tensor::row(&x));
        let l = g.input(Tensor::column(logits));
        let out = mtl_loss(&mut g, e, r, Some(l), label, alpha);
        (g, out)
    }

    #[test]
    fn alpha_zero_skips_cross_entropy() {
        let (g, out) = mtl(0.0, &[0.0; 8], 3);
        let (_, rep) = out.unwrap();
        assert_eq!(rep.total, rep.sisdr_term);
        assert_eq!(rep.ce_term, 0.0);
        assert_eq!(g.stats().count("cross_entropy"), 0);
    }

    #[test]
    fn uniform_logits_cost_ln_classes() {
        let (g, out) = mtl(MTL_ALPHA, &[0.0; 8], 3);
        let (_, rep) = out.unwrap();
        assert!((rep.ce_term - 8f64.ln()).abs() < 1e-12);
        assert!((rep.ce_term - 2.0794).abs() < 1e-4);
        assert!((rep.total - (rep.sisdr_term + 0.5 * rep.ce_term)).abs() < 1e-12);
        assert_eq!(g.stats().count("cross_entropy"), 1);
    }

    #[test]
    fn confident_correct_logits_cost_nothing() {
        let mut z = vec![0.0; 8];
        z[2] = 1e3;
        let (_, out) = mtl(MTL_ALPHA, &z, 2);
        assert!(out.unwrap().1.ce_term < 1e-12);
    }

    #[test]
    fn label_out_of_range() {
        let (_, out) = mtl(MTL_ALPHA, &[0.0; 4], 4);
        assert!(matches!(out, Err(crate::Error::InvalidArgument(_))));
    }
}
