use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{MlrError, Result};

/// Ranked retrieval results per query.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunFile {
    queries: BTreeMap<String, Vec<(String, f32)>>,
}

impl RunFile {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a query's ranking, best first. Scores must not increase and doc
    /// ids must not repeat.
    pub fn insert(&mut self, qid: impl Into<String>, ranked: Vec<(String, f32)>) -> Result<()> {
        let qid = qid.into();
        if ranked.windows(2).any(|w| w[1].1 > w[0].1) {
            return Err(MlrError::Invalid(format!("run for `{qid}` has increasing scores")));
        }
        let mut seen = HashSet::new();
        if let Some((d, _)) = ranked.iter().find(|(d, _)| !seen.insert(d.as_str())) {
            return Err(MlrError::Invalid(format!("run for `{qid}` repeats document `{d}`")));
        }
        self.queries.insert(qid, ranked);
        Ok(())
    }

    pub fn get(&self, qid: &str) -> Option<&[(String, f32)]> {
        self.queries.get(qid).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[(String, f32)])> {
        self.queries.iter().map(|(q, r)| (q.as_str(), r.as_slice()))
    }

    /// TSV rows `qid, doc_id, rank, score`, queries in id order, ranks
    /// from 1.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (q, ranked) in &self.queries {
            for (i, (d, s)) in ranked.iter().enumerate() {
                writeln!(out, "{q}\t{d}\t{}\t{s}", i + 1).expect("string write");
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut rows: BTreeMap<String, Vec<(usize, String, f32)>> = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |msg: &str| MlrError::format("run", format!("line {}: {msg}", n + 1));
            let f: Vec<&str> = line.split('\t').collect();
            let [q, d, r, s] = f.as_slice() else {
                return Err(bad("expected qid, doc_id, rank, score"));
            };
            let rank: usize = r.parse().map_err(|_| bad("bad rank"))?;
            let score: f32 = s.parse().map_err(|_| bad("bad score"))?;
            rows.entry(q.to_string()).or_default().push((rank, d.to_string(), score));
        }
        let mut out = Self::new();
        for (q, mut r) in rows {
            r.sort_by_key(|x| x.0);
            if r.iter().enumerate().any(|(i, x)| x.0 != i + 1) {
                return Err(MlrError::format("run", format!("ranks for `{q}` are not 1..n")));
            }
            out.insert(q, r.into_iter().map(|(_, d, s)| (d, s)).collect())?;
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(MlrError::io(path))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv()).map_err(MlrError::io(path))
    }
}
