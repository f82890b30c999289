use std::collections::HashSet;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use log::{info, warn};
use mlr_core::encoder::{LayerSet, Strategy};
use mlr_core::eval::{
    evaluate, load_log, load_queries, parse_metrics, report as build_report, table_text, table_tsv, write_queries_jsonl,
    write_report, EvalRecord, LogRecord, NamedLog, QRels, QueryRecord, RunFile,
};
use mlr_core::index::{resolve, Index, Manifest};
use mlr_core::scoring::Pooling;
use mlr_core::synthetic::{generate, SyntheticConfig};
use mlr_core::train::{
    combine_negative_pools, encode_corpus, load_corpus, load_training_file, mine_hard_negatives, save_training_file,
    two_stage_train, write_corpus_tsv, CorpusDoc, FitOutput, TrainConfig, TrainEvent, Trainer, TrainingInstance,
};
use mlr_core::{Checkpoint, Model};

use crate::overrides::TrainOverrides;

const MODEL_FILE: &str = "model.ckpt";
const LAST_FILE: &str = "last.ckpt";
const LOG_FILE: &str = "train_log.jsonl";
const DOC_IDS_FILE: &str = "doc_ids.txt";
const MANIFEST_FILE: &str = "manifest.json";

struct Log(BufWriter<File>);

impl Log {
    fn create(path: &Path) -> Result<Self> {
        let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        Ok(Self(BufWriter::new(f)))
    }

    fn event(&mut self, e: &TrainEvent) -> mlr_core::Result<()> {
        let rec = match e {
            TrainEvent::Step(s) => LogRecord::Step(s.clone()),
            TrainEvent::Epoch(s) => {
                match s.dev {
                    Some(d) => info!(
                        "epoch {} step {} train loss {:.4} dev {:?} {:.4}",
                        s.epoch, s.step, s.train_loss, d.kind, d.value
                    ),
                    None => info!("epoch {} step {} train loss {:.4}", s.epoch, s.step, s.train_loss),
                }
                LogRecord::Epoch(s.clone())
            }
        };
        writeln!(self.0, "{}", rec.to_line())?;
        if matches!(e, TrainEvent::Epoch(_)) {
            self.0.flush()?;
        }
        Ok(())
    }
}

fn load_data(path: &Path) -> Result<Vec<TrainingInstance>> {
    let (data, skipped) = load_training_file(path)?;
    if skipped > 0 {
        warn!("{}: skipped {skipped} instances without a positive passage", path.display());
    }
    Ok(data)
}

fn save_fit(fit: &FitOutput, last: &Trainer, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    fit.selected.save(&dir.join(MODEL_FILE))?;
    last.checkpoint().save(&dir.join(LAST_FILE))?;
    info!("wrote {}", dir.join(MODEL_FILE).display());
    Ok(())
}

pub fn train(config: Option<&Path>, stage2: bool, resume: Option<&Path>, overrides: &TrainOverrides) -> Result<()> {
    let mut cfg = match config {
        Some(p) => TrainConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
        None => TrainConfig::default(),
    };
    overrides.apply(&mut cfg)?;
    cfg.validate()?;
    let out = cfg
        .out_dir
        .clone()
        .context("no output directory: set out_dir in the config or pass --out-dir")?;
    let train_path = cfg
        .train_file
        .clone()
        .context("no training data: set train_file in the config or pass --train-file")?;
    let train = load_data(&train_path)?;
    ensure!(!train.is_empty(), "{} holds no usable training instances", train_path.display());
    let dev = match &cfg.dev_file {
        Some(p) => load_data(p)?,
        None => Vec::new(),
    };
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("config.toml"), cfg.to_toml_string()?)?;

    if stage2 {
        let corpus_path = cfg
            .corpus
            .clone()
            .context("--stage2 needs a corpus to mine from: set corpus or pass --corpus")?;
        let corpus = load_corpus(&corpus_path)?;
        fs::create_dir_all(out.join("stage1"))?;
        let mut logs = [Log::create(&out.join("stage1").join(LOG_FILE))?, Log::create(&out.join(LOG_FILE))?];
        let mut last: [Option<Trainer>; 2] = [None, None];
        let result = two_stage_train(&cfg, &cfg, &train, &dev, &corpus, |stage, e, t| {
            logs[stage - 1].event(e)?;
            if matches!(e, TrainEvent::Epoch(_)) {
                last[stage - 1] = Some(t.clone());
            }
            Ok(())
        })?;
        let [l1, l2] = last;
        save_fit(&result.stage1, &l1.context("stage 1 ran no epochs")?, &out.join("stage1"))?;
        save_training_file(&out.join("train_stage2.json"), &result.stage2_data)?;
        save_fit(&result.stage2, &l2.context("stage 2 ran no epochs")?, &out)?;
        return Ok(());
    }

    let mut trainer = match resume {
        Some(p) => {
            let t = Trainer::resume(Checkpoint::load(p)?)?;
            info!("resuming from step {}", t.step());
            t
        }
        None => Trainer::new(cfg)?,
    };
    let mut log = if resume.is_some() {
        let f = OpenOptions::new().append(true).create(true).open(out.join(LOG_FILE))?;
        Log(BufWriter::new(f))
    } else {
        Log::create(&out.join(LOG_FILE))?
    };
    let fit = trainer.fit(&train, &dev, |e, _| log.event(e))?;
    log.0.flush()?;
    save_fit(&fit, &trainer, &out)
}

/// Applies a requested strategy and layer set to a trained model.
fn respecify(model: &mut Model<f32>, strategy: Option<&str>, layers: Option<&str>) -> Result<()> {
    let num_layers = model.config().layers;
    let trained = model.spec.clone();
    if let Some(s) = strategy {
        model.spec.strategy = s.parse()?;
    }
    match (model.spec.strategy, layers) {
        (Strategy::Mlr, Some(l)) => model.spec.layers = LayerSet::parse(l, num_layers)?,
        (Strategy::Mlr, None) => {}
        (s, Some(_)) => bail!("--layers applies to the mlr strategy only, not {s}"),
        (_, None) => model.spec.layers = LayerSet::last_only(num_layers),
    }
    if model.spec != trained && model.pooling != Pooling::None {
        bail!(
            "the model pools its {} representation over layers {} ({}); it cannot be re-encoded as {} over layers {}",
            trained.strategy,
            trained.layers,
            model.pooling,
            model.spec.strategy,
            model.spec.layers
        );
    }
    model.spec.validate(num_layers)?;
    Ok(())
}

fn absolute(p: &Path) -> Result<String> {
    let abs = fs::canonicalize(p).with_context(|| format!("resolving {}", p.display()))?;
    Ok(abs.to_string_lossy().into_owned())
}

fn check_unique_ids(corpus: &[CorpusDoc]) -> Result<()> {
    let mut seen = HashSet::new();
    if let Some(d) = corpus.iter().find(|d| !seen.insert(d.id.as_str())) {
        bail!("duplicate document id `{}` in corpus", d.id);
    }
    Ok(())
}

pub fn encode(
    checkpoint: &Path,
    corpus: &Path,
    strategy: Option<&str>,
    layers: Option<&str>,
    shards: usize,
    out: &Path,
) -> Result<()> {
    ensure!(shards >= 1, "--shards must be at least 1");
    let mut model = Checkpoint::load(checkpoint)?.model;
    respecify(&mut model, strategy, layers)?;
    let docs = load_corpus(corpus)?;
    check_unique_ids(&docs)?;
    let index = encode_corpus(&model, &docs, shards)?;
    let mut manifest = index.write(out)?;
    let ids: String = docs.iter().map(|d| format!("{}\n", d.id)).collect();
    fs::write(out.join(DOC_IDS_FILE), ids)?;
    manifest.strategy = Some(model.spec.strategy.to_string());
    manifest.layers = Some(model.spec.layers.layers().to_vec());
    manifest.pooling = Some(model.pooling.to_string());
    manifest.checkpoint = Some(absolute(checkpoint)?);
    manifest.corpus = Some(absolute(corpus)?);
    manifest.doc_ids = Some(DOC_IDS_FILE.into());
    manifest.save(&out.join(MANIFEST_FILE))?;
    info!(
        "encoded {} documents, {} vectors each, into {} shard(s) under {}",
        docs.len(),
        manifest.m,
        manifest.shards.len(),
        out.display()
    );
    Ok(())
}

fn doc_ids(manifest_path: &Path, manifest: &Manifest) -> Result<Vec<String>> {
    let ids = match &manifest.doc_ids {
        Some(rel) => {
            let path = resolve(manifest_path, rel);
            let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            text.lines().map(str::to_string).collect()
        }
        None => (0..manifest.num_docs).map(|i| i.to_string()).collect::<Vec<_>>(),
    };
    ensure!(
        ids.len() as u64 == manifest.num_docs,
        "manifest lists {} documents but {} ids",
        manifest.num_docs,
        ids.len()
    );
    Ok(ids)
}

fn checkpoint_for(manifest_path: &Path, manifest: &Manifest, explicit: Option<&Path>) -> Result<PathBuf> {
    match (explicit, &manifest.checkpoint) {
        (Some(p), _) => Ok(p.to_path_buf()),
        (None, Some(rel)) => Ok(resolve(manifest_path, rel)),
        (None, None) => bail!("the manifest records no checkpoint; pass --checkpoint"),
    }
}

pub fn index_search(manifest_path: &Path, queries: &Path, k: usize, out: &Path, checkpoint: Option<&Path>) -> Result<()> {
    ensure!(k >= 1, "--k must be at least 1");
    let (index, manifest) = Index::open(manifest_path)?;
    let model = Checkpoint::load(&checkpoint_for(manifest_path, &manifest, checkpoint)?)?.model;
    ensure!(
        model.config().dim == index.dim(),
        "query encoder has dimension {} but the index holds {}-dimensional vectors",
        model.config().dim,
        index.dim()
    );
    let ids = doc_ids(manifest_path, &manifest)?;
    let queries = load_queries(queries)?;
    let texts: Vec<&str> = queries.iter().map(|q| q.question.as_str()).collect();
    let hq = model.embed_queries(&texts)?;
    let mut run = RunFile::new();
    for (q, h) in queries.iter().zip(&hq) {
        ensure!(run.get(&q.id).is_none(), "duplicate query id `{}`", q.id);
        let hits = index.search(h, k)?;
        run.insert(&q.id, hits.into_iter().map(|r| (ids[r.doc_id as usize].clone(), r.score)).collect())?;
    }
    run.save(out)?;
    info!("searched {} queries, top {k}, into {}", queries.len(), out.display());
    Ok(())
}

pub struct EvalArgs<'a> {
    pub run: &'a Path,
    pub qrels: &'a Path,
    pub corpus: Option<&'a Path>,
    pub metrics: &'a str,
    pub out: Option<&'a Path>,
    pub log: Option<&'a Path>,
    pub label: Option<&'a str>,
    pub manifest: Option<&'a Path>,
}

fn is_jsonl(p: &Path) -> bool {
    p.extension().is_some_and(|e| e == "jsonl" || e == "json")
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let metrics = parse_metrics(a.metrics)?;
    ensure!(!metrics.is_empty(), "no metrics requested");
    let run = RunFile::load(a.run)?;
    let corpus = a.corpus.map(load_corpus).transpose()?;
    let qrels = if is_jsonl(a.qrels) {
        QRels::from_queries(&load_queries(a.qrels)?, corpus.as_deref())?
    } else {
        QRels::load(a.qrels)?
    };
    if let Some(c) = &corpus {
        qrels.check_docs(&c.iter().map(|d| d.id.as_str()).collect())?;
    }
    let manifest = a.manifest.map(|p| Manifest::load(p).map(|m| (p, m))).transpose()?;
    if let Some((p, m)) = &manifest {
        let ids = doc_ids(p, m)?;
        qrels.check_docs(&ids.iter().map(String::as_str).collect())?;
    }
    let rows = evaluate(&run, &qrels, &metrics)?;
    print!("{}", table_text(&rows));
    if let Some(out) = a.out {
        fs::write(out, table_tsv(&rows)).with_context(|| format!("writing {}", out.display()))?;
    }
    if let Some(log) = a.log {
        let label = match a.label {
            Some(l) => l.to_string(),
            None => a.run.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
        };
        let m = manifest.as_ref().map(|(_, m)| m);
        let record = LogRecord::Eval(EvalRecord {
            label,
            strategy: m.and_then(|m| m.strategy.clone()),
            layers: m.and_then(|m| m.layers.clone()),
            m: m.map(|m| m.m),
            pooling: m.and_then(|m| m.pooling.clone()),
            metrics: rows.iter().copied().collect(),
        });
        let mut f = OpenOptions::new().append(true).create(true).open(log)?;
        writeln!(f, "{}", record.to_line())?;
    }
    Ok(())
}

pub fn mine(
    checkpoint: &Path,
    manifest_path: &Path,
    train: &Path,
    depth: usize,
    per_source: usize,
    corpus: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let model = Checkpoint::load(checkpoint)?.model;
    let (index, manifest) = Index::open(manifest_path)?;
    let corpus_path = match (corpus, &manifest.corpus) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(rel)) => resolve(manifest_path, rel),
        (None, None) => bail!("the manifest records no corpus; pass --corpus"),
    };
    let docs = load_corpus(&corpus_path)?;
    let data = load_data(train)?;
    let mined = mine_hard_negatives(&model, &index, &docs, &data, depth)?;
    let combined = combine_negative_pools(&data, &mined, per_source)?;
    save_training_file(out, &combined)?;
    info!("wrote {} instances to {}", combined.len(), out.display());
    Ok(())
}

pub fn report(logs: &[PathBuf], out: &Path) -> Result<()> {
    let named = logs
        .iter()
        .map(|p| {
            Ok(NamedLog {
                name: p.display().to_string(),
                records: load_log(p)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let files = build_report(&named);
    write_report(&files, out)?;
    print!("{}", files["tables.txt"]);
    Ok(())
}

pub fn synth(out: &Path, seed: u64) -> Result<()> {
    let cfg = SyntheticConfig {
        seed,
        ..SyntheticConfig::default()
    };
    let task = generate(&cfg)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_corpus_tsv(&out.join("corpus.tsv"), &task.corpus)?;
    save_training_file(&out.join("train.json"), &task.train)?;
    save_training_file(&out.join("dev.json"), &task.dev)?;
    let test: Vec<QueryRecord> = task
        .test
        .iter()
        .map(|q| QueryRecord {
            id: q.id.clone(),
            question: q.question.clone(),
            answers: q.answers.clone(),
            doc_ids: vec![q.doc_id.clone()],
        })
        .collect();
    write_queries_jsonl(&out.join("test.jsonl"), &test)?;
    let train_cfg = TrainConfig {
        strategy: Strategy::Mlr,
        layers: Some(LayerSet::parse("3,4", 4)?),
        train_file: Some("train.json".into()),
        dev_file: Some("dev.json".into()),
        corpus: Some("corpus.tsv".into()),
        out_dir: Some("run".into()),
        ..TrainConfig::default()
    };
    fs::write(out.join("config.toml"), train_cfg.to_toml_string()?)?;
    info!(
        "wrote {} passages, {} train / {} dev / {} test queries to {}",
        task.corpus.len(),
        task.train.len(),
        task.dev.len(),
        task.test.len(),
        out.display()
    );
    Ok(())
}
