use std::collections::HashSet;

use rustfft::{num_complex::Complex64, FftPlanner};

use super::*;
use crate::dsp::{ipd, read_wav, sisdr};

fn speakers(n: usize, seed: u64) -> Vec<SyntheticSpeaker> {
    draw_speakers(n, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn ncc(a: &Waveform, b: &Waveform) -> f64 {
    let dot: f64 = a.samples.iter().zip(&b.samples).map(|(x, y)| x * y).sum();
    dot.abs() / (a.energy() * b.energy()).sqrt()
}

/// Frequency of the largest DFT magnitude, zero-padded to 1/8 Hz resolution.
fn peak_hz(w: &Waveform) -> f64 {
    let n = 8 * w.sample_rate as usize * 8;
    let mut buf: Vec<Complex64> = w.samples.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    buf.resize(n, Complex64::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let (bin, _) = buf[1..n / 2].iter().enumerate().max_by(|a, b| a.1.norm().total_cmp(&b.1.norm())).unwrap();
    (bin + 1) as f64 * w.sample_rate as f64 / n as f64
}

#[test]
fn speakers_are_spaced() {
    for seed in 0..20 {
        let s = speakers(8, seed);
        for a in &s {
            assert!((MIN_F0_HZ..MAX_F0_HZ).contains(&a.f0));
            for b in &s {
                if a.id != b.id {
                    assert!(a.distinct_from(b));
                    assert!((a.f0 - b.f0).abs() >= MIN_F0_SPACING_HZ);
                }
            }
        }
    }
    assert!(draw_speakers(40, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
}

#[test]
fn utterance_is_deterministic_and_normalized() {
    let s = &speakers(2, 1)[0];
    let a = synth_utterance(s, 1.0, 5).unwrap();
    let b = synth_utterance(s, 1.0, 5).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 8000);
    assert!((a.rms() - UTTERANCE_RMS).abs() < 1e-12);
    assert_ne!(a, synth_utterance(s, 1.0, 6).unwrap());
}

#[test]
fn too_short_utterance_rejected() {
    let s = &speakers(1, 1)[0];
    assert!(synth_utterance(s, 0.4, 0).is_err());
    assert!(synth_utterance(s, f64::NAN, 0).is_err());
}

#[test]
fn different_speakers_are_uncorrelated() {
    let s = speakers(8, 2);
    let mut pairs = 0;
    for (i, a) in s.iter().enumerate() {
        for b in &s[i + 1..] {
            if pairs == 20 {
                break;
            }
            let c = ncc(&synth_utterance(a, 2.0, 9).unwrap(), &synth_utterance(b, 2.0, 9).unwrap());
            assert!(c < 0.5, "speakers {} and {}: {c}", a.id, b.id);
            pairs += 1;
        }
    }
    assert_eq!(pairs, 20);
}

#[test]
fn spectral_peak_at_fundamental() {
    for seed in 0..4 {
        for s in speakers(8, seed) {
            let w = synth_utterance(&s, 2.0, seed).unwrap();
            let p = peak_hz(&w);
            assert!((p - s.f0).abs() <= 5.0, "f0 {} but peak {p}", s.f0);
        }
    }
}

fn pair(seed: u64) -> (Waveform, Waveform) {
    let s = speakers(2, seed);
    (synth_utterance(&s[0], 1.0, seed).unwrap(), synth_utterance(&s[1], 1.0, seed + 100).unwrap())
}

#[test]
fn dry_mixture_is_exact_sum() {
    let (t, i) = pair(3);
    let m = mix_sources(&t, &i, 0.0, 0.0, &[7]).unwrap();
    assert_eq!(m.target[0], t);
    for n in 0..t.len() {
        assert_eq!(m.mixture[0].samples[n], m.target[0].samples[n] + m.interferer[0].samples[n]);
    }
    assert!((m.interferer[0].energy() - t.energy()).abs() < 1e-9 * t.energy());
}

#[test]
fn requested_sir_is_met() {
    let (t, i) = pair(4);
    for sir in [-10.0, -3.5, 0.0, 7.0, 10.0] {
        let m = mix_sources(&t, &i, sir, 0.0, &[1]).unwrap();
        let got = 10.0 * (m.target[0].energy() / m.interferer[0].energy()).log10();
        assert!((got - sir).abs() < 1e-9);
    }
    assert!(mix_sources(&t, &i, 10.5, 0.0, &[1]).is_err());
    assert!(mix_sources(&t, &i, -11.0, 0.0, &[1]).is_err());
}

#[test]
fn shorter_source_sets_length() {
    let (t, i) = pair(5);
    let short = Waveform::at_8k(i.samples[..5000].to_vec());
    let m = mix_sources(&t, &short, 0.0, 0.3, &[1]).unwrap();
    assert_eq!(m.mixture[0].len(), 5000);
}

#[test]
fn mixture_sisdr_envelope_at_zero_sir() {
    let s = speakers(8, 6);
    for seed in 0..50u64 {
        let a = &s[(seed % 8) as usize];
        let b = &s[((seed + 3) % 8) as usize];
        let t = synth_utterance(a, 1.0, seed).unwrap();
        let i = synth_utterance(b, 1.0, seed + 1000).unwrap();
        let rt60 = 0.2 + 0.4 * (seed as f64 / 50.0);
        let m = mix_sources(&t, &i, 0.0, rt60, &[seed]).unwrap();
        let v = sisdr(&m.mixture[0], &m.target[0]).unwrap();
        assert!((-6.0..=3.0).contains(&v), "seed {seed}: {v}");
    }
}

#[test]
fn identical_channel_seeds_give_zero_ipd() {
    let (t, i) = pair(7);
    let m = mix_sources(&t, &i, 2.0, 0.4, &[9, 9]).unwrap();
    assert_eq!(m.mixture[0], m.mixture[1]);
    let f = ipd(&m.mixture[0], &m.mixture[1]).unwrap();
    assert!(f.values.data().iter().all(|&v| v == 0.0));
    let m = mix_sources(&t, &i, 2.0, 0.4, &[9, 10]).unwrap();
    assert_ne!(m.mixture[0], m.mixture[1]);
}

fn small_cfg(seed: u64) -> DatasetConfig {
    DatasetConfig { seed, utts_per_speaker: 8, mixtures: 12, splits: [0.5, 0.25, 0.25], duration_s: 1.0, ..Default::default() }
}

#[test]
fn dataset_invariants() {
    let dir = tempfile::tempdir().unwrap();
    let ds = gen_dataset(&small_cfg(3), dir.path()).unwrap();
    assert_eq!((ds.train.len(), ds.val.len(), ds.test.len()), (6, 3, 3));
    for split in Split::ALL {
        let conds: HashSet<_> = ds.records(split).iter().map(|r| r.condition).collect();
        assert_eq!(conds.len(), 2, "{split:?} lacks a condition");
    }
    for r in ds.all_records() {
        for p in [&r.mixture, &r.target, &r.interferer, &r.adaptation] {
            assert!(ds.path(p).is_file(), "{p} missing");
        }
        assert_ne!(r.adaptation, r.target);
        assert_ne!(r.adaptation, format!("utts/{}.wav", r.target_utt));
        assert_ne!(r.speaker, r.interferer_utt.speaker);
        assert_eq!(r.speaker, r.target_utt.speaker);
        assert!(r.adaptation.starts_with(&format!("utts/s{}u", r.speaker)));
        assert!((-5.0..=5.0).contains(&r.sir_db));
        assert!((0.2..0.6).contains(&r.rt60));
        let gap = (ds.speakers[r.speaker].f0 - ds.speakers[r.interferer_utt.speaker].f0).abs();
        assert_eq!(r.condition == Condition::Hard, gap < HARD_F0_GAP_HZ);
    }
    let train_utts: HashSet<UttId> = ds.train.iter().flat_map(|r| [r.target_utt, r.interferer_utt]).collect();
    for r in &ds.test {
        assert!(!train_utts.contains(&r.target_utt));
        assert!(!train_utts.contains(&r.interferer_utt));
    }
    // adaptation files are the clean, anechoic utterances
    for r in ds.all_records() {
        let (spk, idx) = r.adaptation.trim_start_matches("utts/s").trim_end_matches(".wav").split_once('u').unwrap();
        let s = &ds.speakers[spk.parse::<usize>().unwrap()];
        let id = UttId { speaker: s.id, index: idx.parse().unwrap() };
        let clean = synth_utterance(s, 1.0, super::dataset_utt_seed(3, id)).unwrap();
        let disk = read_wav(ds.path(&r.adaptation)).unwrap().into_mono().unwrap();
        for (a, b) in clean.samples.iter().zip(&disk.samples) {
            assert_eq!(*a as f32 as f64, *b);
        }
    }
    assert_eq!(Dataset::load(dir.path()).unwrap(), ds);
}

#[test]
fn dataset_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    gen_dataset(&small_cfg(11), a.path()).unwrap();
    gen_dataset(&small_cfg(11), b.path()).unwrap();
    for split in Split::ALL {
        let name = split.manifest_name();
        assert_eq!(std::fs::read(a.path().join(&name)).unwrap(), std::fs::read(b.path().join(&name)).unwrap());
    }
    let r = read_manifest(a.path().join("test.tsv")).unwrap();
    for rec in &r {
        assert_eq!(std::fs::read(a.path().join(&rec.mixture)).unwrap(), std::fs::read(b.path().join(&rec.mixture)).unwrap());
    }
}

#[test]
fn dataset_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let few = DatasetConfig { num_speakers: 3, ..small_cfg(0) };
    assert!(matches!(gen_dataset(&few, dir.path()), Err(crate::Error::InvalidArgument(_))));
    let bad_splits = DatasetConfig { splits: [0.5, 0.5, 0.5], ..small_cfg(0) };
    assert!(gen_dataset(&bad_splits, dir.path()).is_err());
    let thin = DatasetConfig { utts_per_speaker: 3, ..small_cfg(0) };
    assert!(gen_dataset(&thin, dir.path()).is_err());
}

#[test]
fn default_counts() {
    let cfg = DatasetConfig::default();
    assert_eq!(cfg.mixture_counts(), [40, 10, 10]);
    assert_eq!(cfg.utterance_counts(), [8, 2, 2]);
    cfg.validate().unwrap();
}

#[test]
fn two_channel_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let ds = gen_dataset(&DatasetConfig { channels: 2, ..small_cfg(1) }, dir.path()).unwrap();
    let wav = read_wav(ds.path(&ds.test[0].mixture)).unwrap();
    assert_eq!(wav.channels.len(), 2);
    assert_ne!(wav.channels[0], wav.channels[1]);
}

#[test]
fn manifest_rejects_garbage() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.tsv");
    std::fs::write(&p, "nonsense\n").unwrap();
    assert!(read_manifest(&p).is_err());
}
