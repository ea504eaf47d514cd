//! Generates the default corpus, trains one model and prints test results.
//!
//! cargo run --release -p tse-core --example desk_run -- [asa|sa|asa1] [seed]

use tse_core::adaptation::{Adaptation, AsaConfig};
use tse_core::harness::{evaluate, load_split, train, IdentityExtractor, TrainConfig};
use tse_core::net::{ModelParams, NetConfig};
use tse_core::synth::{gen_dataset, DatasetConfig, Split};

fn main() -> tse_core::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let kind = args.get(1).map(String::as_str).unwrap_or("asa");
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0);
    let adaptation = match kind {
        "sa" => Adaptation::Sa,
        "asa1" => Adaptation::Asa(AsaConfig { pool: 1, ..AsaConfig::default() }),
        _ => Adaptation::Asa(AsaConfig::default()),
    };
    let root = std::env::temp_dir().join("tse_desk_run");
    let ds = gen_dataset(&DatasetConfig::default(), root.join("data"))?;
    let [tr, va, te] = Split::ALL.map(|s| load_split(&ds, s));
    let (tr, va, te) = (tr?, va?, te?);
    let net = NetConfig::default().with_adaptation(adaptation);
    let untrained = evaluate(&ModelParams::init(net, seed)?, &te)?;
    println!("untrained improvement {:.3}", untrained.all.improvement);
    println!("identity improvement {:.3}", evaluate(&IdentityExtractor, &te)?.all.improvement);
    let cfg = TrainConfig { seed, ..TrainConfig::default() };
    let t0 = std::time::Instant::now();
    let out = train(&net, &cfg, &tr, &va, &root.join(format!("run_{kind}_{seed}")))?;
    for h in &out.history {
        println!("{}", h.line());
    }
    for (name, set) in [("train", &tr), ("val", &va)] {
        println!("{name} improvement {:.3}", evaluate(&out.best, set)?.all.improvement);
    }
    let rep = evaluate(&out.best, &te)?;
    if std::env::var_os("TSE_VERBOSE").is_some() {
        for (r, l) in rep.records.iter().zip(&te) {
            println!(
                "{}\t{}\tspk {} vs {}\tsir {:.2}\trt60 {:.2}\timpr {:.2}",
                r.mixture, r.condition, l.record.speaker, l.record.interferer_utt.speaker, l.record.sir_db, l.record.rt60, r.improvement
            );
        }
    }
    print!("{}", rep.table());
    println!("total {:.1}s best epoch {}", t0.elapsed().as_secs_f64(), out.best_epoch);
    Ok(())
}
