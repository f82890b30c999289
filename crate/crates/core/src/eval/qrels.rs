use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{MlrError, Result};
use crate::train::{contains_answer, CorpusDoc};

/// One evaluation query. `answers` enables answer-containment relevance;
/// `doc_ids` lists explicitly relevant documents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub id: String,
    pub question: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub answers: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub doc_ids: Vec<String>,
}

/// Queries from JSON-lines records, or TSV `id<TAB>question`.
pub fn load_queries(path: &Path) -> Result<Vec<QueryRecord>> {
    let text = fs::read_to_string(path).map_err(MlrError::io(path))?;
    if path.extension().is_some_and(|e| e == "jsonl" || e == "json") {
        parse_queries_jsonl(&text)
    } else {
        parse_queries_tsv(&text)
    }
}

pub fn parse_queries_jsonl(text: &str) -> Result<Vec<QueryRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| MlrError::format("queries", format!("line {}: {e}", n + 1))))
        .collect()
}

pub fn parse_queries_tsv(text: &str) -> Result<Vec<QueryRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| match l.split_once('\t') {
            Some((id, q)) => Ok(QueryRecord {
                id: id.to_string(),
                question: q.to_string(),
                answers: Vec::new(),
                doc_ids: Vec::new(),
            }),
            None => Err(MlrError::format("queries", format!("line {}: expected id<TAB>question", n + 1))),
        })
        .collect()
}

pub fn write_queries_jsonl(path: &Path, queries: &[QueryRecord]) -> Result<()> {
    let mut out = String::new();
    for q in queries {
        out.push_str(&serde_json::to_string(q).expect("query serializes"));
        out.push('\n');
    }
    fs::write(path, out).map_err(MlrError::io(path))
}

/// Graded relevance per query: doc id → grade (> 0 is relevant).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QRels {
    queries: BTreeMap<String, BTreeMap<String, u32>>,
}

impl QRels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, qid: impl Into<String>, doc_id: impl Into<String>, grade: u32) {
        self.queries.entry(qid.into()).or_default().insert(doc_id.into(), grade);
    }

    /// Registers a query even if nothing is relevant to it.
    pub fn touch(&mut self, qid: impl Into<String>) {
        self.queries.entry(qid.into()).or_default();
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.queries.keys().map(String::as_str)
    }

    pub fn grades(&self, qid: &str) -> Option<&BTreeMap<String, u32>> {
        self.queries.get(qid)
    }

    pub fn grade(&self, qid: &str, doc_id: &str) -> u32 {
        self.queries.get(qid).and_then(|g| g.get(doc_id)).copied().unwrap_or(0)
    }

    pub fn num_relevant(&self, qid: &str) -> usize {
        self.queries.get(qid).map_or(0, |g| g.values().filter(|&&v| v > 0).count())
    }

    /// Whitespace-separated `qid doc_id [grade]`, or the four-column
    /// `qid iteration doc_id grade` layout.
    pub fn parse(text: &str) -> Result<Self> {
        let mut out = Self::new();
        for (n, line) in text.lines().enumerate() {
            let f: Vec<&str> = line.split_whitespace().collect();
            let bad = |msg: &str| MlrError::format("qrels", format!("line {}: {msg}", n + 1));
            let (q, d, g) = match f.as_slice() {
                [] => continue,
                [q, d] => (*q, *d, "1"),
                [q, d, g] => (*q, *d, *g),
                [q, _, d, g] => (*q, *d, *g),
                _ => return Err(bad("expected 2 to 4 columns")),
            };
            let g: u32 = g.parse().map_err(|_| bad("grade must be a non-negative integer"))?;
            out.insert(q, d, g);
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(MlrError::io(path))?;
        Self::parse(&text)
    }

    /// Binary relevance from query records: listed doc ids, plus (when a
    /// corpus is given) every passage containing one of the answers.
    pub fn from_queries(queries: &[QueryRecord], corpus: Option<&[CorpusDoc]>) -> Result<Self> {
        let mut out = Self::new();
        for q in queries {
            out.touch(&q.id);
            for d in &q.doc_ids {
                out.insert(&q.id, d, 1);
            }
            if q.answers.is_empty() {
                continue;
            }
            let Some(corpus) = corpus else {
                if q.doc_ids.is_empty() {
                    return Err(MlrError::Invalid(format!(
                        "query `{}` has only answer strings; answer relevance needs the corpus",
                        q.id
                    )));
                }
                continue;
            };
            for doc in corpus {
                if contains_answer(&doc.passage().full_text(), &q.answers) {
                    out.insert(&q.id, &doc.id, 1);
                }
            }
        }
        Ok(out)
    }

    /// Every referenced document must exist in the collection.
    pub fn check_docs(&self, known: &HashSet<&str>) -> Result<()> {
        for (q, grades) in &self.queries {
            if let Some(d) = grades.keys().find(|d| !known.contains(d.as_str())) {
                return Err(MlrError::Invalid(format!("qrels for `{q}` reference unknown document `{d}`")));
            }
        }
        Ok(())
    }
}
