use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::search::{dedup_to_docs, top_k, SearchResult};
use crate::error::{MlrError, Result};

pub const SHARD_MAGIC: &[u8; 4] = b"MVS1";
const HEADER_BYTES: usize = 4 + 4 * 8;

/// A contiguous block of documents with exactly `m` vectors each, stored
/// row-major: document `g`'s `j`-th vector has global id `g·m + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Shard {
    dim: usize,
    m: usize,
    first_doc: u64,
    doc_count: u64,
    data: Vec<f32>,
}

impl Shard {
    pub fn new(dim: usize, m: usize, first_doc: u64, data: Vec<f32>) -> Result<Self> {
        if m == 0 || dim == 0 {
            return Err(MlrError::Invalid(format!("shard needs m ≥ 1 and dim ≥ 1 (got m={m}, dim={dim})")));
        }
        if !data.len().is_multiple_of(m * dim) {
            return Err(MlrError::Invalid(format!(
                "{} floats do not form whole documents of {m}×{dim}",
                data.len()
            )));
        }
        let doc_count = (data.len() / (m * dim)) as u64;
        Ok(Self {
            dim,
            m,
            first_doc,
            doc_count,
            data,
        })
    }

    /// Builds a shard from per-document vector lists, which must all have
    /// `m` vectors of dimension `dim`.
    pub fn from_docs(dim: usize, m: usize, first_doc: u64, docs: &[Vec<Vec<f32>>]) -> Result<Self> {
        let mut data = Vec::with_capacity(docs.len() * m * dim);
        for (i, doc) in docs.iter().enumerate() {
            if doc.len() != m {
                return Err(MlrError::Invalid(format!(
                    "document {} has {} vectors, shard expects {m}",
                    first_doc + i as u64,
                    doc.len()
                )));
            }
            for v in doc {
                if v.len() != dim {
                    return Err(MlrError::Invalid(format!(
                        "document {} has a vector of dimension {}, shard expects {dim}",
                        first_doc + i as u64,
                        v.len()
                    )));
                }
                data.extend_from_slice(v);
            }
        }
        Self::new(dim, m, first_doc, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn first_doc(&self) -> u64 {
        self.first_doc
    }

    pub fn doc_count(&self) -> u64 {
        self.doc_count
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn num_vectors(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(MlrError::io(path))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(MlrError::io(path))?;
        w.flush().map_err(MlrError::io(path))
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(SHARD_MAGIC)?;
        for v in [self.dim as u64, self.m as u64, self.doc_count, self.first_doc] {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(MlrError::io(path))?;
        let mut bytes = Vec::new();
        BufReader::new(file).read_to_end(&mut bytes).map_err(MlrError::io(path))?;
        Self::from_bytes(&bytes).map_err(|e| MlrError::Invalid(format!("{}: {e}", path.display())))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_BYTES {
            return Err(MlrError::format("shard", format!("{} bytes is shorter than the header", bytes.len())));
        }
        if &bytes[..4] != SHARD_MAGIC {
            return Err(MlrError::format("shard", format!("bad magic {:?}, expected MVS1", &bytes[..4])));
        }
        let field = |i: usize| u64::from_le_bytes(bytes[4 + 8 * i..12 + 8 * i].try_into().expect("8 bytes"));
        let (dim, m, doc_count, first_doc) = (field(0), field(1), field(2), field(3));
        if m == 0 || dim == 0 {
            return Err(MlrError::format("shard", format!("header has m={m}, dim={dim}")));
        }
        let body = &bytes[HEADER_BYTES..];
        let expected = doc_count
            .checked_mul(m)
            .and_then(|x| x.checked_mul(dim))
            .and_then(|x| x.checked_mul(4));
        if expected != Some(body.len() as u64) {
            return Err(MlrError::format(
                "shard",
                format!(
                    "header declares {doc_count} docs × {m} vectors × {dim} dims, body has {} bytes",
                    body.len()
                ),
            ));
        }
        let data = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::new(dim as usize, m as usize, first_doc, data)
    }

    /// Exact top-`k` vectors by inner product, as `(score, global vector id)`.
    pub fn search_vectors(&self, hq: &[f32], k: usize) -> Result<Vec<(f32, u64)>> {
        if hq.len() != self.dim {
            return Err(MlrError::Invalid(format!(
                "query of dimension {} against shard of dimension {}",
                hq.len(),
                self.dim
            )));
        }
        let base = self.first_doc * self.m as u64;
        let scores: Vec<(f32, u64)> = self
            .data
            .chunks_exact(self.dim)
            .enumerate()
            .map(|(i, v)| (inner(hq, v), base + i as u64))
            .collect();
        Ok(top_k(scores, k))
    }

    /// Top-`k` documents: top `k·m` vectors, mapped to documents, each
    /// document kept at its best score.
    pub fn search_documents(&self, hq: &[f32], k: usize) -> Result<Vec<SearchResult>> {
        let hits = self.search_vectors(hq, k.saturating_mul(self.m))?;
        Ok(dedup_to_docs(&hits, self.m, k))
    }
}

/// Sequential f32 dot product; the summation order is part of the result.
pub fn inner(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}
