//! `tse`: generate a synthetic corpus, train and evaluate extraction models,
//! run a checkpoint on a mixture, and benchmark the attention layer.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use config::RunConfig;
use tse_core::adaptation::{Adaptation, AsaConfig, Pooling};
use tse_core::dsp::{read_wav, write_wav, SampleFormat};
use tse_core::harness::{bench_attention, evaluate, load_split, train, Extractor, TrainConfig, BEST_CHECKPOINT};
use tse_core::net::{load_checkpoint, Channels, Mixture, NetConfig};
use tse_core::synth::{gen_dataset, Dataset, Split};

/// Failure classes, mapped to exit codes 2 and 1.
enum Failure {
    Config(String),
    Runtime(String),
}

impl From<tse_core::Error> for Failure {
    fn from(e: tse_core::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn config_err<T>(msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure::Config(msg.into()))
}

#[derive(Parser)]
#[command(name = "tse", version, about = "Target speech extraction with attention-based scaling adaptation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic two-speaker corpus.
    Gen(GenArgs),
    /// Train a model on a generated corpus.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split of a corpus.
    Eval(EvalArgs),
    /// Extract the target speaker from one mixture file.
    Extract(ExtractArgs),
    /// Compare the cost of vector-matrix and matrix-matrix attention.
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenArgs {
    /// TOML run configuration; only the [data] section is used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for audio and manifests.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    speakers: Option<usize>,
    /// Clean utterances per speaker, split like the mixtures.
    #[arg(long)]
    utts: Option<usize>,
    /// Total mixtures over all splits.
    #[arg(long)]
    mixtures: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
    /// Utterance length in seconds.
    #[arg(long)]
    duration: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum AdaptKind {
    Sa,
    Asa,
}

#[derive(Clone, Copy, ValueEnum)]
enum ChannelKind {
    Single,
    #[value(name = "parallel-2ch")]
    Parallel2ch,
    #[value(name = "ipd-2ch")]
    Ipd2ch,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Corpus directory written by `gen`.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for the checkpoint, log and resolved config.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    adaptation: Option<AdaptKind>,
    /// ASA pooling size M.
    #[arg(long)]
    pool: Option<usize>,
    /// Disable mean pooling (M = 1).
    #[arg(long)]
    no_pooling: bool,
    #[arg(long)]
    no_residual: bool,
    #[arg(long)]
    sqrt_scale: bool,
    #[arg(long, value_enum)]
    channels: Option<ChannelKind>,
    /// Cross-entropy weight; a positive value adds a speaker head.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Training crop length in seconds (0 = whole mixtures).
    #[arg(long)]
    crop: Option<f64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Directory for `eval.csv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExtractArgs {
    /// Mixture WAV (one or two channels).
    #[arg(long)]
    mixture: PathBuf,
    /// Clean utterance of the target speaker.
    #[arg(long)]
    adaptation: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory for `estimate.wav` and, for ASA models, `attention.csv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long = "N", default_value_t = 64)]
    n: usize,
    #[arg(long = "T", default_value_t = 3199)]
    t: usize,
    #[arg(long = "M", default_value_t = 20)]
    m: usize,
    #[arg(long, default_value_t = 200)]
    reps: usize,
}

fn prepare_out(dir: &Path) -> Outcome {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Config(format!("cannot create {}: {e}", dir.display())))?;
    let probe = dir.join(".write-test");
    std::fs::write(&probe, b"")
        .and_then(|_| std::fs::remove_file(&probe))
        .map_err(|e| Failure::Config(format!("{} is not writable: {e}", dir.display())))
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    RunConfig::load(path).map_err(Failure::Config)
}

fn cmd_gen(a: GenArgs) -> Outcome {
    let mut cfg = load_config(a.config.as_deref())?.data;
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.speakers {
        cfg.num_speakers = v;
    }
    if let Some(v) = a.utts {
        cfg.utts_per_speaker = v;
    }
    if let Some(v) = a.mixtures {
        cfg.mixtures = v;
    }
    if let Some(v) = a.channels {
        cfg.channels = v;
    }
    if let Some(v) = a.duration {
        cfg.duration_s = v;
    }
    cfg.validate().map_err(|e| Failure::Config(e.to_string()))?;
    prepare_out(&a.out)?;
    let ds = gen_dataset(&cfg, &a.out)?;
    println!(
        "wrote {} mixtures ({} train, {} val, {} test) to {}",
        ds.all_records().count(),
        ds.train.len(),
        ds.val.len(),
        ds.test.len(),
        a.out.display()
    );
    Ok(())
}

fn resolve_train(a: &TrainArgs) -> Result<(NetConfig, TrainConfig), Failure> {
    let run = load_config(a.config.as_deref())?;
    let (mut net, mut tc) = (run.net, run.train);
    if let Some(v) = a.seed {
        tc.seed = v;
    }
    match a.adaptation {
        Some(AdaptKind::Sa) => net.adaptation = Adaptation::Sa,
        Some(AdaptKind::Asa) if net.adaptation == Adaptation::Sa => net.adaptation = Adaptation::Asa(AsaConfig::default()),
        _ => {}
    }
    let asa_flags = a.pool.is_some() || a.no_pooling || a.no_residual || a.sqrt_scale;
    match &mut net.adaptation {
        Adaptation::Asa(asa) => {
            if let Some(m) = a.pool {
                asa.pool = m;
            }
            if a.no_pooling {
                asa.pooling = Pooling::None;
            }
            if a.no_residual {
                asa.residual = false;
            }
            if a.sqrt_scale {
                asa.sqrt_scale = true;
            }
        }
        Adaptation::Sa if asa_flags => return config_err("--pool, --no-pooling, --no-residual and --sqrt-scale need ASA"),
        Adaptation::Sa => {}
    }
    if let Some(c) = a.channels {
        net.channels = match c {
            ChannelKind::Single => Channels::Single,
            ChannelKind::Parallel2ch => Channels::Parallel2ch,
            ChannelKind::Ipd2ch => Channels::Ipd2ch,
        };
    }
    if let Some(v) = a.alpha {
        tc.alpha = v;
    }
    if let Some(v) = a.epochs {
        tc.max_epochs = v;
    }
    if let Some(v) = a.batch {
        tc.batch_size = v;
    }
    if let Some(v) = a.lr {
        tc.lr = v;
    }
    if let Some(v) = a.crop {
        tc.crop_s = v;
    }
    net.validate().map_err(|e| Failure::Config(e.to_string()))?;
    tc.validate(&net).map_err(|e| Failure::Config(e.to_string()))?;
    Ok((net, tc))
}

fn load_dataset(dir: &Path) -> Result<Dataset, Failure> {
    Dataset::load(dir).map_err(|e| Failure::Config(format!("cannot load corpus at {}: {e}", dir.display())))
}

fn cmd_train(a: TrainArgs) -> Outcome {
    let (mut net, tc) = resolve_train(&a)?;
    let ds = load_dataset(&a.data)?;
    if tc.alpha > 0.0 && net.num_speakers == 0 {
        net.num_speakers = ds.speakers.len();
    }
    let channels = read_wav(ds.path(&ds.train[0].mixture))?.channels.len();
    if channels != net.channels.count() {
        return config_err(format!("corpus has {channels}-channel mixtures but the network expects {}", net.channels.count()));
    }
    prepare_out(&a.out)?;
    let run = RunConfig { data: Default::default(), net, train: tc.clone() };
    std::fs::write(a.out.join("config.toml"), run.to_toml()).map_err(|e| Failure::Runtime(e.to_string()))?;
    let tr = load_split(&ds, Split::Train)?;
    let va = load_split(&ds, Split::Val)?;
    let out = train(&net, &tc, &tr, &va, &a.out)?;
    for h in &out.history {
        println!("{}", h.line());
    }
    println!(
        "best epoch {} (validation improvement {:.3} dB); checkpoint {}",
        out.best_epoch,
        out.best_val,
        a.out.join(BEST_CHECKPOINT).display()
    );
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Outcome {
    let split: Split = a.split.parse().map_err(|e: tse_core::Error| Failure::Config(e.to_string()))?;
    let ds = load_dataset(&a.data)?;
    let model = load_checkpoint(&a.checkpoint)?;
    prepare_out(&a.out)?;
    let records = load_split(&ds, split)?;
    let report = evaluate(&model, &records)?;
    print!("{}", report.table());
    std::fs::write(a.out.join("eval.csv"), report.to_csv()).map_err(|e| Failure::Runtime(e.to_string()))?;
    Ok(())
}

fn cmd_extract(a: ExtractArgs) -> Outcome {
    let model = load_checkpoint(&a.checkpoint)?;
    let mixture = Mixture::from_channels(read_wav(&a.mixture)?.channels)?;
    let adaptation = read_wav(&a.adaptation)?.into_mono()?;
    prepare_out(&a.out)?;
    let out = model.extract(&mixture, &adaptation)?;
    write_wav(a.out.join("estimate.wav"), &[&out.estimate], SampleFormat::Float32)?;
    if let Some(w) = out.attention {
        let mut csv = String::from("group,weight\n");
        for (i, v) in w.iter().enumerate() {
            csv.push_str(&format!("{i},{v}\n"));
        }
        std::fs::write(a.out.join("attention.csv"), csv).map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    println!("wrote {}", a.out.join("estimate.wav").display());
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> Outcome {
    if a.n == 0 || a.t == 0 || a.m == 0 || a.reps == 0 {
        return config_err("--N, --T, --M and --reps must be positive");
    }
    let r = bench_attention(a.n, a.t, a.m, a.reps)?;
    print!("{}", r.table());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Extract(a) => cmd_extract(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
