//! Small shared datasets and the hand-checked loss and metric fixtures.

use mlr_autodiff::Tape;
use mlr_core::encoder::{DocRepresentation, Strategy, TapedReps};
use mlr_core::eval::{mrr_at_k, ndcg_at_k, recall_at_k, topk_accuracy, QRels, RunFile};
use mlr_core::scoring::taped::batch_loss;
use mlr_core::scoring::{contrastive_loss, in_batch_negative_count, in_batch_negatives, positive_column, reg_loss, LossConfig, Pooling};
use mlr_core::synthetic::{generate, SyntheticConfig, SyntheticTask};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Check;

pub const TOL: f64 = 1e-6;
pub const BATCH_SIZES: [usize; 4] = [1, 2, 8, 128];

/// A few dozen passages: enough for a handful of batches.
pub fn small_config() -> SyntheticConfig {
    SyntheticConfig {
        passages: 40,
        train_queries: 32,
        dev_queries: 4,
        test_queries: 8,
        negatives: 4,
        places: 6,
        dishes: 6,
        seed: 3,
        ..SyntheticConfig::default()
    }
}

pub fn small_task() -> SyntheticTask {
    generate(&small_config()).unwrap()
}

/// `[pos, negs…]` all equal gives `log(n + 1)` for any common score.
pub fn symmetric_contrastive(seeds: u64) -> Check {
    let mut worst = 0.0f64;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..300);
        let s: f64 = rng.random_range(-50.0..50.0);
        let got = contrastive_loss(s, &vec![s; n]).unwrap();
        worst = worst.max((got - ((n + 1) as f64).ln()).abs());
    }
    Check::new("contrastive, symmetric input = log(n+1)", worst <= TOL, format!("max |Δ| {worst:.2e} over {seeds} cases"))
}

/// Vectors that differ only orthogonally to the query tie, giving `log m`.
pub fn reg_at_equal_products(seeds: u64) -> Check {
    let mut worst = 0.0f64;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, d) = (rng.random_range(1..10), rng.random_range(2..10));
        let mut hq = vec![0.0; d];
        hq[0] = rng.random_range(0.1..4.0);
        let shared: f64 = rng.random_range(-3.0..3.0);
        let vectors: Vec<Vec<f64>> = (0..m)
            .map(|_| {
                let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
                v[0] = shared;
                v
            })
            .collect();
        let rep = DocRepresentation {
            strategy: Strategy::Mlr,
            vectors,
            primary: m - 1,
        };
        let got = reg_loss(&hq, &rep).unwrap();
        worst = worst.max((got - (m as f64).ln()).abs());
    }
    Check::new("reg, equal inner products = log m", worst <= TOL, format!("max |Δ| {worst:.2e} over {seeds} cases"))
}

/// The declared count, the negative columns each query sees, and the loss
/// of an all-zero batch (`log` of the columns in each softmax) all agree
/// with `2(B − 1) + 1`.
pub fn in_batch_counts() -> Vec<Check> {
    BATCH_SIZES
        .iter()
        .map(|&b| {
            let want = 2 * (b - 1) + 1;
            let count = in_batch_negative_count(b).unwrap();
            let cols = in_batch_negatives(b).unwrap();
            let lists_ok = cols.iter().enumerate().all(|(i, c)| c.len() == want && !c.contains(&positive_column(i)));

            let mut tape = Tape::<f64>::new();
            let hq = tape.constant(vec![b, 4], vec![0.0; b * 4]).unwrap();
            let docs = tape.constant(vec![2 * b, 4], vec![1.0; 2 * b * 4]).unwrap();
            let reps = TapedReps {
                vectors: docs,
                docs: 2 * b,
                m: 1,
            };
            let positives: Vec<usize> = (0..b).map(positive_column).collect();
            let cfg = LossConfig {
                lambda: 0.0,
                pooling: Pooling::None,
            };
            let out = batch_loss(&mut tape, hq, &reps, &positives, 0, &cfg, None).unwrap();
            let shape = tape.shape(out.scores).to_vec();
            let loss = tape.item(out.loss);
            let softmax_ok = shape == [b, 2 * b] && (loss - ((want + 1) as f64).ln()).abs() <= TOL;
            Check::new(
                format!("in-batch negatives, B={b}"),
                count == want && lists_ok && softmax_ok,
                format!("count {count}, want {want}; score matrix {shape:?}, zero-score loss {loss:.6}"),
            )
        })
        .collect()
}

pub fn loss_suite(seeds: u64) -> Vec<Check> {
    let mut out = vec![symmetric_contrastive(seeds), reg_at_equal_products(seeds)];
    out.extend(in_batch_counts());
    out
}

fn run(rows: &[(&str, &[&str])]) -> RunFile {
    let mut r = RunFile::new();
    for (q, docs) in rows {
        let n = docs.len();
        r.insert(*q, docs.iter().enumerate().map(|(i, d)| (d.to_string(), (n - i) as f32)).collect())
            .unwrap();
    }
    r
}

fn qrels(rows: &[(&str, &str, u32)]) -> QRels {
    let mut q = QRels::new();
    for (qid, doc, g) in rows {
        q.insert(*qid, *doc, *g);
    }
    q
}

/// Metric values worked out by hand.
pub fn metric_suite() -> Vec<Check> {
    // Ranks of the relevant document: 1, 3, absent.
    let three = run(&[("a", &["x", "y"]), ("b", &["y", "z", "x"]), ("c", &["y", "z"])]);
    let three_q = qrels(&[("a", "x", 1), ("b", "x", 1), ("c", "x", 1)]);
    let second = run(&[("a", &["y", "x"]), ("b", &["z", "x", "y"])]);
    let second_q = qrels(&[("a", "x", 1), ("b", "x", 1)]);
    // Hits within 2 for two of four queries.
    let four = run(&[("a", &["x", "y"]), ("b", &["y", "x"]), ("c", &["y", "z", "x"]), ("d", &["z"])]);
    let four_q = qrels(&[("a", "x", 1), ("b", "x", 1), ("c", "x", 1), ("d", "x", 1)]);
    let half = run(&[("a", &["x", "z", "y"])]);
    let half_q = qrels(&[("a", "x", 1), ("a", "y", 1)]);
    // Grades 2 and 1 retrieved at ranks 3 and 1: (1 + 3/2) / (3 + 1/log2 3).
    let graded = run(&[("a", &["y", "z", "x"])]);
    let graded_q = qrels(&[("a", "x", 2), ("a", "y", 1)]);

    vec![
        Check::close("MRR@10, ranks {1,3,miss}", mrr_at_k(&three, &three_q, 10).unwrap(), 0.444444444, TOL),
        Check::close("MRR@10, all at rank 2", mrr_at_k(&second, &second_q, 10).unwrap(), 0.5, TOL),
        Check::close("top-2 accuracy, 2 of 4 hit", topk_accuracy(&four, &four_q, 2).unwrap(), 0.5, TOL),
        Check::close("top-1 accuracy, ranks {1,3,miss}", topk_accuracy(&three, &three_q, 1).unwrap(), 0.333333333, TOL),
        Check::close("recall@2, 1 of 2 relevant", recall_at_k(&half, &half_q, 2).unwrap(), 0.5, TOL),
        Check::close("recall@3, 2 of 2 relevant", recall_at_k(&half, &half_q, 3).unwrap(), 1.0, TOL),
        Check::close("NDCG@10, single relevant at rank 2", ndcg_at_k(&second, &second_q, 10).unwrap(), 0.630929754, TOL),
        Check::close("NDCG@10, graded", ndcg_at_k(&graded, &graded_q, 10).unwrap(), 0.688528881, TOL),
    ]
}
