//! Exact multi-vector inner-product search over sharded flat files.

mod search;
mod shard;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{MlrError, Result};

pub use search::{dedup_to_docs, merge_shards, rank_order, top_k, vec_to_doc, SearchResult, ShardHits};
pub use shard::{inner, Shard, SHARD_MAGIC};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardEntry {
    /// Relative to the manifest's directory.
    pub path: String,
    pub first_doc: u64,
    pub doc_count: u64,
}

/// Describes how an index was built. Only `dim`, `m` and `shards` matter
/// for search; the rest records provenance for later commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub dim: usize,
    pub m: usize,
    pub num_docs: u64,
    pub shards: Vec<ShardEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pooling: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus: Option<String>,
    /// File with one external document id per line, in global id order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doc_ids: Option<String>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(MlrError::io(path))?;
        let m: Self = serde_json::from_str(&text).map_err(|e| MlrError::format("manifest", e.to_string()))?;
        if m.version != MANIFEST_VERSION {
            return Err(MlrError::format("manifest", format!("unsupported version {}", m.version)));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| MlrError::format("manifest", e.to_string()))?;
        fs::write(path, text + "\n").map_err(MlrError::io(path))
    }
}

/// Splits `n` documents into `parts` contiguous ranges whose sizes differ
/// by at most one.
pub fn split_ranges(n: u64, parts: usize) -> Vec<(u64, u64)> {
    let parts = parts.max(1) as u64;
    let (base, extra) = (n / parts, n % parts);
    let mut start = 0;
    (0..parts)
        .map(|i| {
            let len = base + u64::from(i < extra);
            let r = (start, len);
            start += len;
            r
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Index {
    shards: Vec<Shard>,
    dim: usize,
    m: usize,
}

impl Index {
    pub fn new(shards: Vec<Shard>) -> Result<Self> {
        let first = shards
            .first()
            .ok_or_else(|| MlrError::Invalid("an index needs at least one shard".into()))?;
        let (dim, m) = (first.dim(), first.m());
        if let Some(s) = shards.iter().find(|s| s.dim() != dim || s.m() != m) {
            return Err(MlrError::Invalid(format!(
                "shard at doc {} has dim {} and m {}, expected {dim} and {m}",
                s.first_doc(),
                s.dim(),
                s.m()
            )));
        }
        Ok(Self { shards, dim, m })
    }

    /// Lays out per-document vectors into `num_shards` contiguous shards.
    pub fn build(dim: usize, m: usize, docs: &[Vec<Vec<f32>>], num_shards: usize) -> Result<Self> {
        let shards = split_ranges(docs.len() as u64, num_shards)
            .into_iter()
            .map(|(start, len)| Shard::from_docs(dim, m, start, &docs[start as usize..(start + len) as usize]))
            .collect::<Result<Vec<_>>>()?;
        Self::new(shards)
    }

    pub fn open(manifest_path: &Path) -> Result<(Self, Manifest)> {
        let manifest = Manifest::load(manifest_path)?;
        let dir = manifest_path.parent().unwrap_or(Path::new(""));
        let shards = manifest
            .shards
            .iter()
            .map(|e| {
                let shard = Shard::read(&dir.join(&e.path))?;
                if shard.first_doc() != e.first_doc || shard.doc_count() != e.doc_count {
                    return Err(MlrError::format(
                        "manifest",
                        format!("shard {} disagrees with its manifest entry", e.path),
                    ));
                }
                Ok(shard)
            })
            .collect::<Result<Vec<_>>>()?;
        let index = Self::new(shards)?;
        if index.dim != manifest.dim || index.m != manifest.m || index.num_docs() != manifest.num_docs {
            return Err(MlrError::format("manifest", "shard contents disagree with the manifest header"));
        }
        Ok((index, manifest))
    }

    /// Writes every shard into `dir` and returns a manifest listing them
    /// (not yet saved, so callers can fill in provenance).
    pub fn write(&self, dir: &Path) -> Result<Manifest> {
        fs::create_dir_all(dir).map_err(MlrError::io(dir))?;
        let width = self.shards.len().to_string().len().max(3);
        let mut entries = Vec::new();
        for (i, s) in self.shards.iter().enumerate() {
            let name = format!("shard-{i:0width$}.mvs");
            s.write(&dir.join(&name))?;
            entries.push(ShardEntry {
                path: name,
                first_doc: s.first_doc(),
                doc_count: s.doc_count(),
            });
        }
        Ok(Manifest {
            version: MANIFEST_VERSION,
            dim: self.dim,
            m: self.m,
            num_docs: self.num_docs(),
            shards: entries,
            strategy: None,
            layers: None,
            pooling: None,
            checkpoint: None,
            corpus: None,
            doc_ids: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn shards(&self) -> &[Shard] {
        &self.shards
    }

    pub fn num_docs(&self) -> u64 {
        self.shards.iter().map(|s| s.doc_count()).sum()
    }

    pub fn search(&self, hq: &[f32], k: usize) -> Result<Vec<SearchResult>> {
        if k == 0 {
            return Err(MlrError::Invalid("k must be at least 1".into()));
        }
        let per_shard = self
            .shards
            .iter()
            .map(|s| {
                Ok(ShardHits {
                    first_doc: s.first_doc(),
                    doc_count: s.doc_count(),
                    hits: s.search_documents(hq, k)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        merge_shards(&per_shard, k)
    }
}

/// Resolves a manifest-relative path.
pub fn resolve(manifest_path: &Path, rel: &str) -> PathBuf {
    manifest_path.parent().unwrap_or(Path::new("")).join(rel)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_cover_everything() {
        assert_eq!(split_ranges(10, 3), vec![(0, 4), (4, 3), (7, 3)]);
        assert_eq!(split_ranges(2, 3), vec![(0, 1), (1, 1), (2, 0)]);
        assert_eq!(split_ranges(5, 0), vec![(0, 5)]);
    }

    #[test]
    fn write_and_open() {
        let dir = tempfile::tempdir().unwrap();
        let docs: Vec<Vec<Vec<f32>>> = (0..7).map(|i| vec![vec![i as f32, 1.0], vec![-1.0, i as f32]]).collect();
        let index = Index::build(2, 2, &docs, 3).unwrap();
        let manifest = index.write(dir.path()).unwrap();
        let path = dir.path().join("manifest.json");
        manifest.save(&path).unwrap();
        let (back, m) = Index::open(&path).unwrap();
        assert_eq!(m, manifest);
        assert_eq!(back.num_docs(), 7);
        let hits = back.search(&[1.0, 0.0], 3).unwrap();
        assert_eq!(hits.iter().map(|h| h.doc_id).collect::<Vec<_>>(), vec![6, 5, 4]);
    }
}
