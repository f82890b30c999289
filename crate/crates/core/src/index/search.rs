use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use crate::error::{MlrError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchResult {
    pub doc_id: u64,
    pub score: f32,
    /// Which of the document's vectors attained the score.
    pub best_vector: usize,
}

/// Result order: higher score first, then lower id. NaN sorts last.
pub fn rank_order(a: (f32, u64), b: (f32, u64)) -> Ordering {
    b.0.partial_cmp(&a.0)
        .unwrap_or_else(|| a.0.is_nan().cmp(&b.0.is_nan()))
        .then(a.1.cmp(&b.1))
}

pub fn vec_to_doc(vector_id: u64, m: usize) -> u64 {
    vector_id / m as u64
}

/// Keeps the `k` best `(score, id)` pairs in rank order.
pub fn top_k(mut items: Vec<(f32, u64)>, k: usize) -> Vec<(f32, u64)> {
    if k == 0 {
        return Vec::new();
    }
    if items.len() > k {
        items.select_nth_unstable_by(k - 1, |a, b| rank_order(*a, *b));
        items.truncate(k);
    }
    items.sort_unstable_by(|a, b| rank_order(*a, *b));
    items
}

/// Collapses ranked vector hits into ranked documents, keeping each
/// document's best vector, and returns the top `k`.
pub fn dedup_to_docs(vector_hits: &[(f32, u64)], m: usize, k: usize) -> Vec<SearchResult> {
    let mut seen = HashSet::new();
    let mut docs = Vec::new();
    // Hits arrive in rank order, so the first hit per document is its max.
    for &(score, vid) in vector_hits {
        let doc = vec_to_doc(vid, m);
        if seen.insert(doc) {
            docs.push(SearchResult {
                doc_id: doc,
                score,
                best_vector: (vid % m as u64) as usize,
            });
        }
    }
    docs.sort_by(|a, b| rank_order((a.score, a.doc_id), (b.score, b.doc_id)));
    docs.truncate(k);
    docs
}

/// One shard's local result list together with the doc-id range it covers.
#[derive(Debug, Clone)]
pub struct ShardHits {
    pub first_doc: u64,
    pub doc_count: u64,
    pub hits: Vec<SearchResult>,
}

#[derive(PartialEq)]
struct HeapEntry {
    score: f32,
    doc_id: u64,
    shard: usize,
    pos: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap; the best-ranked entry must compare greatest.
        rank_order((other.score, other.doc_id), (self.score, self.doc_id))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Merges sorted per-shard lists into the global top `k`.
pub fn merge_shards(shards: &[ShardHits], k: usize) -> Result<Vec<SearchResult>> {
    let mut ranges: Vec<(u64, u64)> = shards.iter().map(|s| (s.first_doc, s.first_doc + s.doc_count)).collect();
    ranges.sort_unstable();
    if let Some(w) = ranges.windows(2).find(|w| w[0].1 > w[1].0 && w[1].1 > w[1].0 && w[0].1 > w[0].0) {
        return Err(MlrError::Invalid(format!(
            "shard doc ranges {}..{} and {}..{} overlap",
            w[0].0, w[0].1, w[1].0, w[1].1
        )));
    }
    for s in shards {
        if let Some(h) = s.hits.iter().find(|h| h.doc_id < s.first_doc || h.doc_id >= s.first_doc + s.doc_count) {
            return Err(MlrError::Invalid(format!(
                "doc {} outside its shard's range {}..{}",
                h.doc_id,
                s.first_doc,
                s.first_doc + s.doc_count
            )));
        }
    }
    let mut heap: BinaryHeap<HeapEntry> = shards
        .iter()
        .enumerate()
        .filter_map(|(i, s)| {
            s.hits.first().map(|h| HeapEntry {
                score: h.score,
                doc_id: h.doc_id,
                shard: i,
                pos: 0,
            })
        })
        .collect();
    let mut out = Vec::with_capacity(k);
    while out.len() < k {
        let Some(e) = heap.pop() else { break };
        out.push(shards[e.shard].hits[e.pos]);
        if let Some(next) = shards[e.shard].hits.get(e.pos + 1) {
            heap.push(HeapEntry {
                score: next.score,
                doc_id: next.doc_id,
                shard: e.shard,
                pos: e.pos + 1,
            });
        }
    }
    Ok(out)
}
