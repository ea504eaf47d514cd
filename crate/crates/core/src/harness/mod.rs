//! Training, evaluation and the attention cost benchmark.

mod bench;
mod data;
mod eval;
mod optim;
mod train;

pub use bench::{bench_attention, BenchReport};
pub use data::{load_split, LoadedRecord};
pub use eval::{evaluate, Aggregate, EntropyStats, EvalReport, ExtractOutput, Extractor, IdentityExtractor, RecordEval};
pub use optim::{clip_grad_norm, Adam};
pub use train::{train, EpochLog, TrainConfig, TrainOutcome, BEST_CHECKPOINT, TRAIN_LOG};
