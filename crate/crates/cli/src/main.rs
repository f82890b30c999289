mod commands;
mod overrides;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use overrides::TrainOverrides;

#[derive(Debug, Parser)]
#[command(name = "mlr", version, about = "Dense retrieval with multi-layer document representations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Train a model from a config file; every config field can be overridden by a flag.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Mine hard negatives with the trained model and train a second stage.
        #[arg(long)]
        stage2: bool,
        /// Continue an interrupted run from a checkpoint with optimizer state.
        #[arg(long, conflicts_with = "stage2")]
        resume: Option<PathBuf>,
        #[command(flatten)]
        overrides: TrainOverrides,
    },
    /// Encode a corpus into index shards and a manifest.
    Encode {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Representation strategy; defaults to the one the model was trained with.
        #[arg(long)]
        strategy: Option<String>,
        /// Comma-separated layers for the mlr strategy, e.g. "3,4".
        #[arg(long)]
        layers: Option<String>,
        #[arg(long, default_value_t = 1)]
        shards: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Search an index with a query file and write a run file.
    IndexSearch {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long, default_value_t = 100)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
        /// Query encoder to use instead of the one recorded in the manifest.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score a run file against relevance judgments.
    Eval {
        #[arg(long)]
        run: PathBuf,
        /// `qid doc_id [grade]` lines, or a JSON-lines query file with answers/doc_ids.
        #[arg(long)]
        qrels: PathBuf,
        /// Corpus for answer-containment relevance.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value = "top5,top20,top100,mrr10,r1000,ndcg10")]
        metrics: String,
        /// Write the table as TSV here (the aligned table goes to stdout).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Append an eval record to this JSON-lines log for `report`.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long, requires = "log")]
        label: Option<String>,
        /// Index manifest whose strategy/layers are copied into the log record.
        #[arg(long, requires = "log")]
        manifest: Option<PathBuf>,
    },
    /// Mine hard negatives for a training file and write the augmented file.
    Mine {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long, default_value_t = 100)]
        depth: usize,
        /// Negatives kept from each of the original and mined pools.
        #[arg(long, default_value_t = 50)]
        per_source: usize,
        /// Corpus the index was built from; defaults to the manifest's.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build CSV series and text tables from training and eval logs.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        logs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate the synthetic two-topic task (corpus, train/dev, test queries, config).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train {
            config,
            stage2,
            resume,
            overrides,
        } => commands::train(config.as_deref(), stage2, resume.as_deref(), &overrides),
        Command::Encode {
            checkpoint,
            corpus,
            strategy,
            layers,
            shards,
            out,
        } => commands::encode(&checkpoint, &corpus, strategy.as_deref(), layers.as_deref(), shards, &out),
        Command::IndexSearch {
            manifest,
            queries,
            k,
            out,
            checkpoint,
        } => commands::index_search(&manifest, &queries, k, &out, checkpoint.as_deref()),
        Command::Eval {
            run,
            qrels,
            corpus,
            metrics,
            out,
            log,
            label,
            manifest,
        } => commands::eval(commands::EvalArgs {
            run: &run,
            qrels: &qrels,
            corpus: corpus.as_deref(),
            metrics: &metrics,
            out: out.as_deref(),
            log: log.as_deref(),
            label: label.as_deref(),
            manifest: manifest.as_deref(),
        }),
        Command::Mine {
            checkpoint,
            manifest,
            train,
            depth,
            per_source,
            corpus,
            out,
        } => commands::mine(&checkpoint, &manifest, &train, depth, per_source, corpus.as_deref(), &out),
        Command::Report { logs, out } => commands::report(&logs, &out),
        Command::Synth { out, seed } => commands::synth(&out, seed),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
