//! Property tests for invariants that span modules.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tse_core::adaptation::{asa_forward, scaling_adapt, Adaptation, AsaConfig, MixtureEmbedding, SpeakerEmbedding};
use tse_core::autodiff::{Graph, Tensor};
use tse_core::dsp::{sisdr, Waveform};
use tse_core::losses::mtl_loss;
use tse_core::net::{Mixture, ModelParams, NetConfig};
use tse_core::synth::{draw_speakers, mix_sources, synth_utterance};

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn rand_wave(rng: &mut ChaCha8Rng, n: usize) -> Waveform {
    Waveform::at_8k((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn asa_structure(n in 1usize..10, t in 1usize..50, m in 1usize..12, sqrt_scale: bool, residual: bool, seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y = rand_tensor(&mut rng, &[n, t]);
        let e = rand_tensor(&mut rng, &[n, 1]);
        let mut g = Graph::new();
        let (yv, ev) = (g.input(y.clone()), g.input(e.clone()));
        let (ye, se) = (MixtureEmbedding::new(&g, yv).unwrap(), SpeakerEmbedding::new(&g, ev).unwrap());
        let cfg = AsaConfig { pool: m, residual, sqrt_scale, ..AsaConfig::default() };
        let out = asa_forward(&mut g, ye, se, &cfg).unwrap();

        let w = g.value(out.weights).data().to_vec();
        prop_assert_eq!(w.len(), t.div_ceil(m));
        prop_assert!(w.iter().all(|&p| p >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);

        let scale = if sqrt_scale { (n as f64).sqrt() } else { 1.0 };
        let big_e = g.value(out.speaker_matrix);
        let o = g.value(out.output);
        for j in 0..t {
            for i in 0..n {
                let want = scale * w[j / m] * e.data()[i] + if residual { e.data()[i] } else { 0.0 };
                prop_assert!((big_e.at(i, j) - want).abs() < 1e-12);
                prop_assert!((o.at(i, j) - y.at(i, j) * big_e.at(i, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sa_repeats_speaker_vector(n in 1usize..10, t in 1usize..50, seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y = rand_tensor(&mut rng, &[n, t]);
        let e = rand_tensor(&mut rng, &[n, 1]);
        let mut g = Graph::new();
        let (yv, ev) = (g.input(y.clone()), g.input(e.clone()));
        let (ye, se) = (MixtureEmbedding::new(&g, yv).unwrap(), SpeakerEmbedding::new(&g, ev).unwrap());
        let out = scaling_adapt(&mut g, ye, se).unwrap();
        for j in 0..t {
            for i in 0..n {
                prop_assert_eq!(g.value(out).at(i, j), y.at(i, j) * e.data()[i]);
            }
        }
    }

    #[test]
    fn sisdr_is_bounded_and_scale_invariant(len in 64usize..512, c in 0.5f64..100.0, seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_wave(&mut rng, len);
        let est = rand_wave(&mut rng, len);
        let s = sisdr(&est, &x).unwrap();
        prop_assert!((-60.0..=60.0).contains(&s));
        let scaled = sisdr(&est.scaled(c), &x).unwrap();
        prop_assert!((s - scaled).abs() < 1e-6);
    }

    #[test]
    fn mtl_is_weighted_sum(alpha in 0.0f64..4.0, label in 0usize..6, seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(&mut rng, &[1, 128]);
        let est = rand_tensor(&mut rng, &[1, 128]);
        let z = rand_tensor(&mut rng, &[6, 1]);
        let mut g = Graph::new();
        let (e, r, l) = (g.input(est), g.input(x), g.input(z));
        let (loss, rep) = mtl_loss(&mut g, e, r, Some(l), label, alpha).unwrap();
        prop_assert!((rep.total - (rep.sisdr_term + alpha * rep.ce_term)).abs() < 1e-12);
        prop_assert_eq!(g.value(loss).item(), rep.total);
    }

    #[test]
    fn utterances_are_normalized(seed in 0u64..10_000, duration in 0.5f64..1.5) {
        let speakers = draw_speakers(4, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let u = synth_utterance(&speakers[(seed % 4) as usize], duration, seed).unwrap();
        prop_assert!(u.samples.iter().all(|v| v.is_finite()));
        prop_assert!((u.rms() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn dry_mixture_is_exact_sum(sir in -10.0f64..10.0, seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (t, i) = (rand_wave(&mut rng, 300), rand_wave(&mut rng, 400));
        let m = mix_sources(&t, &i, sir, 0.0, &[seed]).unwrap();
        let (mix, tgt, itf) = (&m.mixture[0], &m.target[0], &m.interferer[0]);
        prop_assert_eq!(mix.len(), 300);
        for k in 0..300 {
            prop_assert_eq!(mix.samples[k], tgt.samples[k] + itf.samples[k]);
        }
        let achieved = 10.0 * (tgt.energy() / itf.energy()).log10();
        prop_assert!((achieved - sir).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn parameter_count_ignores_adaptation_kind(
        enc in 2usize..24, bottleneck in 2usize..12, hidden in 2usize..24, blocks in 1usize..4, speakers in 0usize..6, pool in 1usize..30
    ) {
        let base = NetConfig { enc_channels: enc, bottleneck, hidden, blocks, num_speakers: speakers, ..NetConfig::default() };
        let asa = ModelParams::init(base.with_adaptation(Adaptation::Asa(AsaConfig { pool, ..AsaConfig::default() })), 0).unwrap();
        let sa = ModelParams::init(base.with_adaptation(Adaptation::Sa), 0).unwrap();
        prop_assert_eq!(asa.parameter_count(), sa.parameter_count());
    }

    #[test]
    fn extraction_keeps_length(len in 20usize..900, aux_len in 20usize..400, seed in 0u64..1000) {
        let cfg = NetConfig { enc_channels: 8, bottleneck: 4, hidden: 8, blocks: 1, ..NetConfig::default() };
        prop_assert_eq!(cfg.frames(len).unwrap(), (len - 20) / 10 + 1);
        let params = ModelParams::init(cfg, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = Graph::new();
        let m = params.bind(&mut g);
        let out = m.forward_extract(&mut g, &Mixture::Mono(rand_wave(&mut rng, len)), &rand_wave(&mut rng, aux_len)).unwrap();
        let est = g.value(out.estimate);
        prop_assert_eq!(est.cols(), len);
        prop_assert!(est.is_finite());
    }
}
