//! Whole-pipeline checks: retrieval runs, determinism and negative mining.

use std::fs;
use std::path::Path;

use mlr_core::encoder::{EncoderConfig, PoolingMode};
use mlr_core::eval::RunFile;
use mlr_core::index::Index;
use mlr_core::synthetic::{SyntheticTask, TestQuery};
use mlr_core::train::{
    encode_corpus, mine_hard_negatives, two_stage_train, CorpusDoc, Passage, TrainConfig, TrainingInstance, Trainer,
};
use mlr_core::Model;

use super::Check;

/// Ranks the whole corpus' top `k` for each test query.
pub fn retrieve(model: &Model<f32>, corpus: &[CorpusDoc], queries: &[TestQuery], k: usize) -> RunFile {
    let index = encode_corpus(model, corpus, 1).unwrap();
    let texts: Vec<&str> = queries.iter().map(|q| q.question.as_str()).collect();
    let hq = model.embed_queries(&texts).unwrap();
    let mut run = RunFile::new();
    for (q, h) in queries.iter().zip(&hq) {
        let hits = index.search(h, k).unwrap();
        run.insert(
            q.id.clone(),
            hits.iter().map(|r| (corpus[r.doc_id as usize].id.clone(), r.score)).collect(),
        )
        .unwrap();
    }
    run
}

/// Fraction of queries whose own passage is ranked first.
pub fn top1(run: &RunFile, queries: &[TestQuery]) -> f64 {
    let hits = queries
        .iter()
        .filter(|q| run.get(&q.id).and_then(|r| r.first()).is_some_and(|(d, _)| *d == q.doc_id))
        .count();
    hits as f64 / queries.len() as f64
}

/// A model small enough to train in a second or two.
pub fn quick_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 4,
        epochs,
        encoder: EncoderConfig {
            vocab_size: 512,
            dim: 16,
            layers: 2,
            heads: 2,
            ff_dim: 32,
            max_len: 16,
            pooling: PoolingMode::Cls,
            ..EncoderConfig::default()
        },
        ..TrainConfig::default()
    }
}

struct Artifacts {
    checkpoint: Vec<u8>,
    run: String,
    shards: Vec<Vec<u8>>,
}

fn train_and_dump(cfg: &TrainConfig, task: &SyntheticTask, dir: &Path) -> Artifacts {
    let mut trainer = Trainer::new(cfg.clone()).unwrap();
    let out = trainer.fit(&task.train, &task.dev, |_, _| Ok(())).unwrap();
    fs::create_dir_all(dir).unwrap();
    let ckpt = dir.join("model.ckpt");
    out.selected.save(&ckpt).unwrap();
    let model = &out.selected.model;
    let index = encode_corpus(model, &task.corpus, 3).unwrap();
    let manifest = index.write(dir).unwrap();
    Artifacts {
        checkpoint: fs::read(&ckpt).unwrap(),
        run: retrieve(model, &task.corpus, &task.test, 20).to_tsv(),
        shards: manifest.shards.iter().map(|s| fs::read(dir.join(&s.path)).unwrap()).collect(),
    }
}

/// Two runs from the same seed, config and data write identical bytes;
/// a different seed does not.
pub fn determinism(cfg: &TrainConfig, task: &SyntheticTask) -> Check {
    let dir = tempfile::tempdir().unwrap();
    let a = train_and_dump(cfg, task, &dir.path().join("a"));
    let b = train_and_dump(cfg, task, &dir.path().join("b"));
    let other = TrainConfig {
        seed: cfg.seed + 1,
        ..cfg.clone()
    };
    let c = train_and_dump(&other, task, &dir.path().join("c"));
    let same_ckpt = a.checkpoint == b.checkpoint;
    let same_run = a.run == b.run;
    let same_shards = a.shards == b.shards;
    let seed_matters = a.checkpoint != c.checkpoint;
    Check::new(
        "identical runs write identical bytes",
        same_ckpt && same_run && same_shards && seed_matters,
        format!(
            "checkpoint {} B equal: {same_ckpt}; run file equal: {same_run}; shards equal: {same_shards}; other seed differs: {seed_matters}",
            a.checkpoint.len()
        ),
    )
}

fn contains_any(text: &str, answers: &[String]) -> bool {
    let text = text.to_lowercase();
    answers.iter().any(|a| text.contains(&a.to_lowercase()))
}

/// Mines with `model` and re-checks every mined passage against its
/// question's answers and positives.
pub fn mined_negatives_are_clean(model: &Model<f32>, task: &SyntheticTask, depth: usize) -> Check {
    let index = encode_corpus(model, &task.corpus, 2).unwrap();
    let mined = mine_hard_negatives(model, &index, &task.corpus, &task.train, depth).unwrap();
    let (mut total, mut dirty, mut positives, mut replaced) = (0, 0, 0, 0);
    for (orig, m) in task.train.iter().zip(&mined) {
        if m.negative_ctxs != orig.negative_ctxs {
            replaced += 1;
        }
        for p in &m.negative_ctxs {
            total += 1;
            if contains_any(&p.title, &orig.answers) || contains_any(&p.text, &orig.answers) {
                dirty += 1;
            }
            if orig.positive_ctxs.contains(p) {
                positives += 1;
            }
        }
    }
    Check::new(
        "mined negatives never contain the answer",
        dirty == 0 && positives == 0 && replaced > 0,
        format!("{total} negatives for {replaced} mined questions: {dirty} contain an answer, {positives} are positives"),
    )
}

/// Mining depth 0 hands the second stage the original data unchanged.
pub fn depth_zero_is_identity(task: &SyntheticTask) -> Check {
    let cfg = TrainConfig {
        mine_depth: 0,
        ..quick_config(1)
    };
    let out = two_stage_train(&cfg, &cfg, &task.train, &task.dev, &task.corpus, |_, _, _| Ok(())).unwrap();
    let same = out.stage2_data == task.train;
    Check::new(
        "mining depth 0 reproduces stage-1 data",
        same,
        format!("{} instances, identical: {same}", task.train.len()),
    )
}

/// Twenty documents ranked by construction; three of the top ten contain
/// the answer, so depth 10 mines exactly the other seven, in rank order.
pub fn constructed_mining() -> Check {
    let model = Model::<f32>::init(
        quick_config(1).encoder,
        quick_config(1).spec(),
        Default::default(),
        1,
    )
    .unwrap();
    let question = "where does bakoti live";
    let hq = &model.embed_queries(&[question]).unwrap()[0];
    let docs: Vec<Vec<Vec<f32>>> = (0..20).map(|i| vec![hq.iter().map(|x| x * (20 - i) as f32).collect()]).collect();
    let index = Index::build(hq.len(), 1, &docs, 2).unwrap();
    let with_answer = [0, 3, 7];
    let corpus: Vec<CorpusDoc> = (0..20)
        .map(|i| CorpusDoc {
            id: format!("d{i}"),
            title: String::new(),
            text: if with_answer.contains(&i) {
                format!("passage {i} says bakoti lives in Muraze")
            } else {
                format!("passage {i} is about someone else")
            },
        })
        .collect();
    let inst = TrainingInstance {
        question: question.into(),
        answers: vec!["muraze".into()],
        positive_ctxs: vec![Passage::new("", "bakoti lives in muraze")],
        negative_ctxs: vec![Passage::new("", "original")],
    };
    let mined = mine_hard_negatives(&model, &index, &corpus, &[inst], 10).unwrap();
    let got: Vec<&str> = mined[0].negative_ctxs.iter().map(|p| p.text.as_str()).collect();
    let want: Vec<String> = (0..10)
        .filter(|i| !with_answer.contains(i))
        .map(|i| corpus[i].text.clone())
        .collect();
    Check::new(
        "3 of top 10 contain the answer → 7 mined",
        got == want,
        format!("{} mined", got.len()),
    )
}
