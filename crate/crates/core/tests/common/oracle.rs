//! Brute-force document ranking used as the reference for index search.

use mlr_core::index::{Index, SearchResult};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const DOCS: usize = 1000;
pub const DIM: usize = 16;
pub const QUERIES: usize = 100;
pub const K: usize = 10;
pub const MS: [usize; 4] = [1, 2, 4, 8];
pub const SHARDS: [usize; 3] = [2, 3, 7];

/// Documents of `m` vectors each. Integer-valued vectors make exact ties
/// common (and every summation order exact); Gaussian ones make them rare.
pub fn random_docs(rng: &mut ChaCha8Rng, n: usize, m: usize, integer: bool) -> Vec<Vec<Vec<f32>>> {
    (0..n)
        .map(|_| (0..m).map(|_| random_vec(rng, integer)).collect())
        .collect()
}

pub fn random_vec(rng: &mut ChaCha8Rng, integer: bool) -> Vec<f32> {
    (0..DIM)
        .map(|_| {
            if integer {
                rng.random_range(-2i32..=2) as f32
            } else {
                rng.sample::<f32, _>(StandardNormal)
            }
        })
        .collect()
}

/// Max over each document's vectors (first one on ties), then documents by
/// score descending and id ascending.
pub fn brute_force(docs: &[Vec<Vec<f32>>], hq: &[f32], k: usize) -> Vec<(u64, f32, usize)> {
    let mut scored: Vec<(u64, f32, usize)> = docs
        .iter()
        .enumerate()
        .map(|(id, vecs)| {
            let mut best = (f32::NEG_INFINITY, 0);
            for (j, v) in vecs.iter().enumerate() {
                let mut s = 0.0f32;
                for i in 0..hq.len() {
                    s += hq[i] * v[i];
                }
                if s > best.0 {
                    best = (s, j);
                }
            }
            (id as u64, best.0, best.1)
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

fn as_tuples(r: &[SearchResult]) -> Vec<(u64, f32, usize)> {
    r.iter().map(|h| (h.doc_id, h.score, h.best_vector)).collect()
}

/// Every disagreement between the index and the oracle, and between sharded
/// and unsharded indexes, over the full grid. Empty means exact agreement.
pub fn index_oracle_mismatches(seed: u64) -> Vec<String> {
    let mut bad = Vec::new();
    for &m in &MS {
        for integer in [false, true] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (m as u64) << 8 ^ u64::from(integer));
            let docs = random_docs(&mut rng, DOCS, m, integer);
            let single = Index::build(DIM, m, &docs, 1).unwrap();
            let sharded: Vec<(usize, Index)> =
                SHARDS.iter().map(|&s| (s, Index::build(DIM, m, &docs, s).unwrap())).collect();
            for q in 0..QUERIES {
                let hq = random_vec(&mut rng, integer);
                let expect = brute_force(&docs, &hq, K);
                let got = as_tuples(&single.search(&hq, K).unwrap());
                if got != expect {
                    bad.push(format!("m={m} integer={integer} query {q}: {got:?} != {expect:?}"));
                }
                for (s, index) in &sharded {
                    let other = as_tuples(&index.search(&hq, K).unwrap());
                    if other != got {
                        bad.push(format!("m={m} integer={integer} query {q}: {s} shards differ"));
                    }
                }
            }
        }
    }
    bad
}
