//! Training: data ingestion, the optimization loop with in-batch negatives,
//! dev validation, and two-stage training with mined hard negatives.

mod config;
mod data;
mod mining;
mod pipeline;
mod schedule;
mod trainer;
mod validate;

pub use config::{Selection, TrainConfig};
pub use data::{
    load_corpus, load_training_file, parse_corpus_jsonl, parse_corpus_tsv, parse_training, save_training_file,
    write_corpus_tsv, CorpusDoc, Passage, TrainingInstance,
};
pub use mining::{combine_negative_pools, contains_answer, mine_hard_negatives};
pub use pipeline::{encode_corpus, two_stage_train, TwoStageOutput};
pub use schedule::lr_at;
pub use trainer::{BatchPlan, EpochStats, FitOutput, StepStats, TrainEvent, Trainer};
pub use validate::{average_rank, dev_pools, mean_contrastive_loss, validate, DevMetric, MetricKind, ScoredPool};
