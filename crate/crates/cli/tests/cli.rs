//! Drives the `mlr` binary end to end on the synthetic task.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use tempfile::TempDir;

fn mlr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mlr"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = mlr(args);
    assert!(
        out.status.success(),
        "mlr {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// A synthetic task and a briefly trained tiny model, shared by the tests.
struct Trained {
    _dir: TempDir,
    root: PathBuf,
}

fn trained() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        ok(&["synth", "--out", p(&root)]);
        let config = root.join("config.toml");
        #[rustfmt::skip]
        ok(&[
            "train", "--config", p(&config), "--epochs", "1", "--encoder-dim", "16", "--encoder-heads", "2",
            "--encoder-ff-dim", "32", "--encoder-max-len", "16",
        ]);
        Trained { _dir: dir, root }
    })
}

fn run_rows(path: &Path) -> BTreeMap<String, Vec<String>> {
    let mut rows: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for line in fs::read_to_string(path).unwrap().lines() {
        let f: Vec<&str> = line.split('\t').collect();
        rows.entry(f[0].to_string()).or_default().push(f[1].to_string());
    }
    rows
}

#[test]
fn eval_hand_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run.tsv");
    let qrels = dir.path().join("qrels.tsv");
    fs::write(&run, "q1\td1\t1\t0.9\nq1\td2\t2\t0.5\nq2\td3\t1\t0.8\nq2\td4\t2\t0.7\n").unwrap();
    fs::write(&qrels, "q1 d2\nq2 d9\n").unwrap();
    let out = dir.path().join("metrics.tsv");
    let stdout = ok(&["eval", "--run", p(&run), "--qrels", p(&qrels), "--metrics", "top1,top2,mrr10,ndcg10", "--out", p(&out)]);
    assert_eq!(
        fs::read_to_string(&out).unwrap(),
        "metric\tvalue\ntop1\t0.000000\ntop2\t0.500000\nmrr10\t0.250000\nndcg10\t0.315465\n"
    );
    assert_eq!(stdout, "metric     value\ntop1      0.0000\ntop2      0.5000\nmrr10     0.2500\nndcg10    0.3155\n");
}

#[test]
fn exhaustive_search_returns_every_document_once() {
    let t = trained();
    let idx = t.root.join("idx");
    ok(&["encode", "--checkpoint", p(&t.root.join("run/model.ckpt")), "--corpus", p(&t.root.join("corpus.tsv")), "--shards", "3", "--out", p(&idx)]);
    let run = t.root.join("full.tsv");
    ok(&["index-search", "--manifest", p(&idx.join("manifest.json")), "--queries", p(&t.root.join("test.jsonl")), "--k", "1000", "--out", p(&run)]);
    let ids: BTreeSet<String> = mlr_core::train::load_corpus(&t.root.join("corpus.tsv"))
        .unwrap()
        .into_iter()
        .map(|d| d.id)
        .collect();
    let rows = run_rows(&run);
    assert_eq!(rows.len(), 100);
    for docs in rows.values() {
        assert_eq!(docs.len(), ids.len());
        assert_eq!(docs.iter().cloned().collect::<BTreeSet<_>>(), ids);
    }
    let stdout = ok(&["eval", "--run", p(&run), "--qrels", p(&t.root.join("test.jsonl")), "--metrics", "r1000"]);
    assert!(stdout.contains("r1000     1.0000"), "{stdout}");
}

#[test]
fn last_layer_mlr_index_is_the_dual_index() {
    let t = trained();
    let ckpt = t.root.join("run/model.ckpt");
    let corpus = t.root.join("corpus.tsv");
    let (a, b) = (t.root.join("mlr4"), t.root.join("dual"));
    ok(&["encode", "--checkpoint", p(&ckpt), "--corpus", p(&corpus), "--strategy", "mlr", "--layers", "4", "--out", p(&a)]);
    ok(&["encode", "--checkpoint", p(&ckpt), "--corpus", p(&corpus), "--strategy", "dual", "--out", p(&b)]);
    let shard = |d: &Path| {
        let mut files: Vec<PathBuf> = fs::read_dir(d)
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|f| f.extension().is_some_and(|x| x == "mvs"))
            .collect();
        files.sort();
        files.iter().map(|f| fs::read(f).unwrap()).collect::<Vec<_>>()
    };
    let (sa, sb) = (shard(&a), shard(&b));
    assert!(!sa.is_empty());
    assert_eq!(sa, sb);
}

#[test]
fn eval_log_feeds_a_pure_report() {
    let t = trained();
    let idx = t.root.join("idx-report");
    ok(&["encode", "--checkpoint", p(&t.root.join("run/model.ckpt")), "--corpus", p(&t.root.join("corpus.tsv")), "--out", p(&idx)]);
    let manifest = idx.join("manifest.json");
    let run = t.root.join("report-run.tsv");
    ok(&["index-search", "--manifest", p(&manifest), "--queries", p(&t.root.join("test.jsonl")), "--k", "20", "--out", p(&run)]);
    let log = t.root.join("evals.jsonl");
    #[rustfmt::skip]
    ok(&["eval", "--run", p(&run), "--qrels", p(&t.root.join("test.jsonl")), "--log", p(&log), "--label", "tiny", "--manifest", p(&manifest)]);
    let train_log = t.root.join("run/train_log.jsonl");
    let (r1, r2) = (t.root.join("report1"), t.root.join("report2"));
    let tables = ok(&["report", "--logs", p(&log), p(&train_log), "--out", p(&r1)]);
    ok(&["report", "--logs", p(&log), p(&train_log), "--out", p(&r2)]);
    for name in ["accuracy_vs_m.csv", "accuracy_vs_layer.csv", "training_curves.csv", "tables.txt"] {
        assert_eq!(fs::read(r1.join(name)).unwrap(), fs::read(r2.join(name)).unwrap(), "{name}");
    }
    let vs_layer = fs::read_to_string(r1.join("accuracy_vs_layer.csv")).unwrap();
    assert!(vs_layer.lines().nth(1).unwrap().starts_with("2,3;4,3,tiny,"), "{vs_layer}");
    assert!(tables.starts_with("Retrieval\n") && tables.contains("\nTraining\n"), "{tables}");
}

#[test]
fn mined_file_keeps_every_question() {
    let t = trained();
    let idx = t.root.join("idx-mine");
    let ckpt = t.root.join("run/model.ckpt");
    ok(&["encode", "--checkpoint", p(&ckpt), "--corpus", p(&t.root.join("corpus.tsv")), "--out", p(&idx)]);
    let out = t.root.join("mined.json");
    #[rustfmt::skip]
    ok(&["mine", "--checkpoint", p(&ckpt), "--manifest", p(&idx.join("manifest.json")), "--train", p(&t.root.join("train.json")), "--depth", "20", "--per-source", "5", "--out", p(&out)]);
    let original = mlr_core::train::load_training_file(&t.root.join("train.json")).unwrap().0;
    let mined = mlr_core::train::load_training_file(&out).unwrap().0;
    assert_eq!(mined.len(), original.len());
    for (o, m) in original.iter().zip(&mined) {
        assert_eq!((&o.question, &o.positive_ctxs), (&m.question, &m.positive_ctxs));
        assert!(m.negative_ctxs.len() <= 10);
        assert!(m.negative_ctxs.iter().all(|n| !mlr_core::train::contains_answer(&n.text, &o.answers)));
    }
}

#[test]
fn bad_invocations_fail() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.tsv");
    let unknown = mlr(&["eval", "--bogus"]);
    assert_eq!(unknown.status.code(), Some(2));
    let out = mlr(&["eval", "--run", p(&missing), "--qrels", p(&missing)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    assert!(!mlr(&["report", "--out", p(dir.path())]).status.success());
    assert!(!mlr(&["train", "--epochs", "1"]).status.success());
}

#[test]
fn layers_require_the_mlr_strategy() {
    let t = trained();
    #[rustfmt::skip]
    let out = mlr(&["encode", "--checkpoint", p(&t.root.join("run/model.ckpt")), "--corpus", p(&t.root.join("corpus.tsv")), "--strategy", "dual", "--layers", "4", "--out", p(&t.root.join("never"))]);
    assert_eq!(out.status.code(), Some(1));
}
