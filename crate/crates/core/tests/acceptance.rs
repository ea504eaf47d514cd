//! Acceptance criteria A1–A10. Each criterion prints one PASS/FAIL line; the
//! test fails if any criterion fails.
//!
//! The learning criteria (A3, A4) train nine desk-scale models on the default
//! corpus and take most of the runtime.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tse_core::adaptation::{asa_attention, asa_forward, Adaptation, AsaConfig, MixtureEmbedding, Pooling, SpeakerEmbedding};
use tse_core::autodiff::{Graph, Tensor};
use tse_core::dsp::{sisdr, Waveform};
use tse_core::gradcheck;
use tse_core::harness::{bench_attention, evaluate, load_split, train, EvalReport, LoadedRecord, TrainConfig, BEST_CHECKPOINT};
use tse_core::losses::{mtl_loss, sisdr_loss};
use tse_core::net::{Channels, Mixture, ModelParams, NetConfig};
use tse_core::synth::{gen_dataset, DatasetConfig, Split};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

/// Written straight to stdout so the lines show even when output is captured.
fn report(id: &str, o: &Outcome) {
    let mut out = std::io::stdout();
    let _ = writeln!(out, "{id} {} {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    let _ = out.flush();
}

fn note(text: &str) {
    let mut out = std::io::stdout();
    let _ = writeln!(out, "   note: {text}");
    let _ = out.flush();
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn a1_parameter_parity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut counts = vec![];
    for _ in 0..5 {
        let base = NetConfig {
            enc_channels: rng.gen_range(4..80),
            enc_kernel: rng.gen_range(2..32),
            enc_stride: rng.gen_range(1..16),
            bottleneck: rng.gen_range(2..48),
            hidden: rng.gen_range(2..80),
            block_kernel: 2 * rng.gen_range(0..3) + 1,
            blocks: rng.gen_range(1..6),
            repeats: rng.gen_range(1..4),
            channels: [Channels::Single, Channels::Parallel2ch, Channels::Ipd2ch][rng.gen_range(0..3)],
            num_speakers: rng.gen_range(0..10),
            ..NetConfig::default()
        };
        let asa = AsaConfig { pool: rng.gen_range(1..40), ..AsaConfig::default() };
        let a = ModelParams::init(base.with_adaptation(Adaptation::Asa(asa)), 0).unwrap().parameter_count();
        let s = ModelParams::init(base.with_adaptation(Adaptation::Sa), 0).unwrap().parameter_count();
        counts.push((a, s));
    }
    let pass = counts.iter().all(|(a, s)| a == s);
    outcome(pass, format!("ASA vs SA parameter counts over 5 random configs: {counts:?}"))
}

fn a2_frame_arithmetic() -> Outcome {
    let params = ModelParams::init(NetConfig::default(), 0).unwrap();
    let mut g = Graph::new();
    let m = params.bind(&mut g);
    let w = Waveform::at_8k(vec![0.01; 32000]);
    let enc = m.encode(&mut g, &Mixture::Mono(w)).unwrap();
    let t = g.value(enc).cols();
    let pooled = g.mean_pool1d(enc, 20).unwrap();
    let t_m = g.value(pooled).cols();
    outcome(t == 3199 && t_m == 160, format!("32000 samples, K=20, S=10 -> T={t}; M=20 -> T_m={t_m}"))
}

fn asa_loss(g: &mut Graph, y: tse_core::autodiff::Var, e: tse_core::autodiff::Var, probe: &Tensor, cfg: &AsaConfig) -> tse_core::Result<tse_core::autodiff::Var> {
    let ye = MixtureEmbedding::new(g, y)?;
    let ee = SpeakerEmbedding::new(g, e)?;
    let out = asa_forward(g, ye, ee, cfg)?;
    let p = g.input(probe.clone());
    let prod = g.mul(out.output, p)?;
    Ok(g.sum(prod))
}

fn a5_gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for i in 0..10 {
        let y = rand_tensor(&mut rng, &[8, 40]);
        let e = rand_tensor(&mut rng, &[8, 1]);
        let probe = rand_tensor(&mut rng, &[8, 40]);
        let cfg = AsaConfig { pool: 4, residual: true, sqrt_scale: i % 2 == 1, pooling: Pooling::Mean };
        let c = gradcheck::check(&[y, e], 1e-5, |g, v| asa_loss(g, v[0], v[1], &probe, &cfg)).unwrap();
        worst = worst.max(c.max_rel_error);
        let x = rand_tensor(&mut rng, &[1, 64]);
        let est = rand_tensor(&mut rng, &[1, 64]);
        let c = gradcheck::check(&[est], 1e-5, |g, v| {
            let r = g.input(x.clone());
            sisdr_loss(g, v[0], r)
        })
        .unwrap();
        worst = worst.max(c.max_rel_error);
    }
    outcome(worst < 1e-4, format!("asa_forward and sisdr_loss, 10 instances (N=8, T=40, M=4): max rel error {worst:.2e} < 1e-4"))
}

fn a6_attention_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut sum_err, mut prop_err, mut block_err): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..1000 {
        let n = rng.gen_range(1..12);
        let t = rng.gen_range(1..60);
        let m = rng.gen_range(1..12);
        let scale = 10f64.powf(rng.gen_range(-2.0..2.0));
        let y = rand_tensor(&mut rng, &[n, t]).map(|v| v * scale);
        let e = rand_tensor(&mut rng, &[n, 1]);
        let mut g = Graph::new();
        let (yv, ev) = (g.input(y), g.input(e.clone()));
        let u = g.mean_pool1d(yv, m).unwrap();
        let se = SpeakerEmbedding::new(&g, ev).unwrap();
        let att = asa_attention(&mut g, u, se, false).unwrap();
        let w = g.value(att.weights).data().to_vec();
        sum_err = sum_err.max((w.iter().sum::<f64>() - 1.0).abs());
        let b = g.value(att.bias);
        for j in 0..b.cols() {
            for i in 0..n {
                prop_err = prop_err.max((b.at(i, j) - w[j] * e.data()[i]).abs());
            }
        }
        let cfg = AsaConfig { pool: m, ..AsaConfig::default() };
        let (ye, se) = (MixtureEmbedding::new(&g, yv).unwrap(), SpeakerEmbedding::new(&g, ev).unwrap());
        let out = asa_forward(&mut g, ye, se, &cfg).unwrap();
        let big_e = g.value(out.speaker_matrix);
        for j in 0..t {
            let first = (j / m) * m;
            for i in 0..n {
                block_err = block_err.max((big_e.at(i, j) - big_e.at(i, first)).abs());
            }
        }
    }
    let pass = sum_err <= 1e-9 && prop_err <= 1e-12 && block_err == 0.0;
    outcome(
        pass,
        format!(
            "1000 random inputs: |sum w - 1| <= {sum_err:.1e}, max |B - w e^T| = {prop_err:.1e}, E block spread = {block_err:.1e} (ragged tails included)"
        ),
    )
}

fn a7_cost() -> Outcome {
    let r = bench_attention(64, 3199, 20, 200).unwrap();
    let pass = r.asa_madds == 20_480 && r.matrix_madds == 1_638_400 && r.madds_ratio == 80.0 && r.time_ratio > 10.0;
    outcome(
        pass,
        format!(
            "N=64, T=3199, M=20: madds {} vs {} (ratio {:.1}), wall time ratio {:.1} > 10",
            r.asa_madds, r.matrix_madds, r.madds_ratio, r.time_ratio
        ),
    )
}

fn a8_metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x: Vec<f64> = (0..4000).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let est: Vec<f64> = x.iter().map(|v| v + rng.gen_range(-0.7..0.7)).collect();
    let xr = Waveform::at_8k(x.clone());
    let base = sisdr(&Waveform::at_8k(est.clone()), &xr).unwrap();
    let mut scale_err: f64 = 0.0;
    for c in [0.5, 2.0, 3.7, 10.0, 1000.0] {
        let s = sisdr(&Waveform::at_8k(est.iter().map(|v| c * v).collect()), &xr).unwrap();
        scale_err = scale_err.max((s - base).abs());
    }
    let exact = sisdr(&xr, &xr).unwrap();
    let n = 800;
    let sin: Vec<f64> = (0..n).map(|i| (2.0 * std::f64::consts::PI * 4.0 * i as f64 / n as f64).sin()).collect();
    let cos: Vec<f64> = (0..n).map(|i| (2.0 * std::f64::consts::PI * 4.0 * i as f64 / n as f64).cos()).collect();
    let orth = sisdr(&Waveform::at_8k(cos), &Waveform::at_8k(sin)).unwrap();
    let mut g = Graph::new();
    let logits = g.input(Tensor::zeros(&[8, 1]));
    let ce = g.cross_entropy(logits, 3).unwrap();
    let ce_err = (g.value(ce).item() - 8f64.ln()).abs();
    let pass = scale_err < 1e-9 && exact == 60.0 && orth == -60.0 && ce_err <= 1e-12;
    outcome(
        pass,
        format!("scale |delta| {scale_err:.1e} dB, exact {exact}, orthogonal {orth}, |CE(uniform 8) - ln 8| {ce_err:.1e}"),
    )
}

fn a9_mtl() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut identity_err: f64 = 0.0;
    let mut skipped = true;
    for _ in 0..20 {
        let x = rand_tensor(&mut rng, &[1, 256]);
        let est = rand_tensor(&mut rng, &[1, 256]);
        let z = rand_tensor(&mut rng, &[8, 1]).map(|v| 3.0 * v);
        let label = rng.gen_range(0..8);
        let mut g = Graph::new();
        let (e, r, l) = (g.input(est.clone()), g.input(x.clone()), g.input(z.clone()));
        let (_, rep) = mtl_loss(&mut g, e, r, Some(l), label, 0.5).unwrap();
        identity_err = identity_err.max((rep.total - (rep.sisdr_term + 0.5 * rep.ce_term)).abs());
        let mut g = Graph::new();
        let (e, r, l) = (g.input(est), g.input(x), g.input(z));
        let (_, rep) = mtl_loss(&mut g, e, r, Some(l), label, 0.0).unwrap();
        skipped &= g.stats().count("cross_entropy") == 0 && rep.total == rep.sisdr_term;
    }
    outcome(
        identity_err <= 1e-12 && skipped,
        format!("alpha=0.5 identity error {identity_err:.1e}; alpha=0 cross_entropy evaluations: {}", if skipped { 0 } else { 1 }),
    )
}

fn a10_reproducibility() -> Outcome {
    let cfg = DatasetConfig { seed: 10, utts_per_speaker: 8, mixtures: 16, splits: [0.5, 0.25, 0.25], duration_s: 0.5, ..Default::default() };
    let net = NetConfig { enc_channels: 16, bottleneck: 8, hidden: 16, blocks: 2, ..NetConfig::default() };
    let tc = TrainConfig { max_epochs: 2, crop_s: 0.25, seed: 10, ..TrainConfig::default() };
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let ds = gen_dataset(&cfg, dir.path().join("data")).unwrap();
        let manifests: Vec<Vec<u8>> =
            Split::ALL.iter().map(|s| std::fs::read(ds.root.join(s.manifest_name())).unwrap()).collect();
        let [tr, va, te] = Split::ALL.map(|s| load_split(&ds, s).unwrap());
        let out = train(&net, &tc, &tr, &va, &dir.path().join("run")).unwrap();
        let ckpt = std::fs::read(dir.path().join("run").join(BEST_CHECKPOINT)).unwrap();
        let report = evaluate(&out.best, &te).unwrap();
        (manifests, ckpt, report)
    };
    let (a, b) = (run(), run());
    let (m, c, r) = (a.0 == b.0, a.1 == b.1, a.2 == b.2);
    outcome(m && c && r, format!("two seeded runs: manifests identical {m}, checkpoints identical {c}, eval reports identical {r}"))
}

struct Trained {
    model: ModelParams,
    report: EvalReport,
    seconds: f64,
    epochs: usize,
}

fn train_eval(net: NetConfig, seed: u64, tr: &[LoadedRecord], va: &[LoadedRecord], te: &[LoadedRecord]) -> Trained {
    let dir = tempfile::tempdir().unwrap();
    let tc = TrainConfig { seed, ..TrainConfig::default() };
    let t0 = Instant::now();
    let out = train(&net, &tc, tr, va, dir.path()).unwrap();
    let seconds = t0.elapsed().as_secs_f64();
    Trained { report: evaluate(&out.best, te).unwrap(), model: out.best, seconds, epochs: out.history.len() }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn fmt(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join("/")
}

fn a3_a4_learning() -> (Outcome, Outcome) {
    let dir = tempfile::tempdir().unwrap();
    let ds = gen_dataset(&DatasetConfig::default(), dir.path()).unwrap();
    let [tr, va, te] = Split::ALL.map(|s| load_split(&ds, s).unwrap());
    let seeds = [0u64, 1, 2];
    let asa = NetConfig::default();
    let sa = asa.with_adaptation(Adaptation::Sa);
    let asa1 = asa.with_adaptation(Adaptation::Asa(AsaConfig { pool: 1, ..AsaConfig::default() }));

    let untrained: Vec<f64> =
        seeds.iter().map(|&s| evaluate(&ModelParams::init(asa, s).unwrap(), &te).unwrap().all.improvement).collect();

    let mut runs: Vec<Vec<Trained>> = vec![];
    for cfg in [asa, sa, asa1] {
        runs.push(seeds.iter().map(|&s| train_eval(cfg, s, &tr, &va, &te)).collect());
    }
    let imp = |k: usize| runs[k].iter().map(|t| t.report.all.improvement).collect::<Vec<_>>();
    let sdr = |k: usize| runs[k].iter().map(|t| t.report.all.sisdr).collect::<Vec<_>>();
    let slowest = runs.iter().flatten().map(|t| t.seconds).fold(0.0, f64::max);
    let max_epochs = runs.iter().flatten().map(|t| t.epochs).max().unwrap_or(0);

    let (asa_imp, asa_sdr, sa_sdr) = (imp(0), sdr(0), sdr(1));
    let wins = asa_sdr.iter().zip(&sa_sdr).filter(|(a, s)| a > s).count();
    let a3 = mean(&asa_imp) >= 5.0
        && untrained.iter().all(|u| u.abs() <= 1.0)
        && mean(&asa_sdr) >= mean(&sa_sdr) - 0.1
        && wins >= 2
        && slowest < 20.0 * 60.0
        && max_epochs <= 30;
    let a3 = outcome(
        a3,
        format!(
            "ASA test improvement {} dB (mean {:.2} >= 5); untrained {} dB (within 0 +- 1); test SiSDR ASA {} vs SA {} (means {:.2} vs {:.2}, ASA higher in {wins}/3); slowest run {:.0} s, <= {max_epochs} epochs",
            fmt(&asa_imp),
            mean(&asa_imp),
            fmt(&untrained),
            fmt(&asa_sdr),
            fmt(&sa_sdr),
            mean(&asa_sdr),
            mean(&sa_sdr),
            slowest
        ),
    );
    let asa1_sdr = sdr(2);
    let a4 = outcome(
        mean(&asa_sdr) >= mean(&asa1_sdr) - 0.2,
        format!(
            "test SiSDR ASA M=20 {} vs M=1 {} (means {:.2} vs {:.2}, margin -0.2)",
            fmt(&asa_sdr),
            fmt(&asa1_sdr),
            mean(&asa_sdr),
            mean(&asa1_sdr)
        ),
    );
    for (name, k) in [("ASA", 0), ("SA", 1), ("ASA M=1", 2)] {
        let hard: Vec<f64> = runs[k].iter().filter_map(|t| t.report.hard.map(|a| a.improvement)).collect();
        let easy: Vec<f64> = runs[k].iter().filter_map(|t| t.report.easy.map(|a| a.improvement)).collect();
        note(&format!("{name}: improvement hard {} / easy {} dB", fmt(&hard), fmt(&easy)));
    }
    note(&time_shift_diagnostic(&runs[0][0].model, &te));
    (a3, a4)
}

/// Relative change of the trained speaker embedding under a 10-sample circular shift.
fn time_shift_diagnostic(model: &ModelParams, te: &[LoadedRecord]) -> String {
    let embed = |w: &Waveform| {
        let mut g = Graph::new();
        let m = model.bind(&mut g);
        let e = m.aux_embed(&mut g, w).unwrap();
        g.value(e).data().to_vec()
    };
    let rel: Vec<f64> = te
        .iter()
        .map(|r| {
            let mut shifted = r.adaptation.samples.clone();
            shifted.rotate_right(10);
            let (a, b) = (embed(&r.adaptation), embed(&Waveform::at_8k(shifted)));
            let diff: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            diff / a.iter().map(|x| x * x).sum::<f64>().sqrt()
        })
        .collect();
    let max = rel.iter().copied().fold(0.0, f64::max);
    format!("aux embedding under a 10-sample circular shift: relative change mean {:.3}, max {:.3} (ASA seed 0)", mean(&rel), max)
}

#[test]
fn acceptance_criteria() {
    let mut results: Vec<(&str, Outcome)> = vec![];
    // libtest leaves the cursor after the test name
    let _ = writeln!(std::io::stdout());
    let run = |id: &'static str, f: &dyn Fn() -> Outcome, results: &mut Vec<(&str, Outcome)>| {
        let o = f();
        report(id, &o);
        results.push((id, o));
    };
    run("A1", &a1_parameter_parity, &mut results);
    run("A2", &a2_frame_arithmetic, &mut results);
    run("A5", &a5_gradients, &mut results);
    run("A6", &a6_attention_invariants, &mut results);
    run("A7", &a7_cost, &mut results);
    run("A8", &a8_metrics, &mut results);
    run("A9", &a9_mtl, &mut results);
    run("A10", &a10_reproducibility, &mut results);
    let (a3, a4) = a3_a4_learning();
    report("A3", &a3);
    report("A4", &a4);
    results.push(("A3", a3));
    results.push(("A4", a4));
    let failed: Vec<&str> = results.iter().filter(|(_, o)| !o.pass).map(|(id, _)| *id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
