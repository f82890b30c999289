//! Ranking metrics averaged over the queries of a qrels set. Queries
//! missing from the run count as misses.

use std::fmt;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use super::qrels::QRels;
use super::run::RunFile;
use crate::error::{MlrError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    TopK(usize),
    Mrr(usize),
    Recall(usize),
    Ndcg(usize),
}

impl FromStr for Metric {
    type Err = MlrError;

    /// `top5`, `mrr10`, `r1000` (or `recall1000`), `ndcg10`.
    fn from_str(s: &str) -> Result<Self> {
        let split = s.find(|c: char| c.is_ascii_digit()).unwrap_or(s.len());
        let (name, k) = s.split_at(split);
        let k: usize = k
            .parse()
            .map_err(|_| MlrError::Config(format!("metric `{s}` needs a cutoff, e.g. top20 or mrr10")))?;
        if k == 0 {
            return Err(MlrError::Config(format!("metric `{s}`: cutoff must be at least 1")));
        }
        match name {
            "top" => Ok(Self::TopK(k)),
            "mrr" => Ok(Self::Mrr(k)),
            "r" | "recall" => Ok(Self::Recall(k)),
            "ndcg" => Ok(Self::Ndcg(k)),
            _ => Err(MlrError::Config(format!("unknown metric `{s}`"))),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::TopK(k) => write!(f, "top{k}"),
            Self::Mrr(k) => write!(f, "mrr{k}"),
            Self::Recall(k) => write!(f, "r{k}"),
            Self::Ndcg(k) => write!(f, "ndcg{k}"),
        }
    }
}

impl Serialize for Metric {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Metric {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub fn parse_metrics(list: &str) -> Result<Vec<Metric>> {
    list.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::parse).collect()
}

fn ranked<'a>(run: &'a RunFile, qid: &str) -> &'a [(String, f32)] {
    run.get(qid).unwrap_or_else(|| {
        warn!("query `{qid}` missing from run; counted as a miss");
        &[]
    })
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(MlrError::Invalid("metric cutoff must be at least 1".into()));
    }
    Ok(())
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Fraction of queries with a relevant document in the top `k`.
pub fn topk_accuracy(run: &RunFile, qrels: &QRels, k: usize) -> Result<f64> {
    check_k(k)?;
    let hits: Vec<f64> = qrels
        .query_ids()
        .map(|q| {
            let hit = ranked(run, q).iter().take(k).any(|(d, _)| qrels.grade(q, d) > 0);
            f64::from(u8::from(hit))
        })
        .collect();
    Ok(mean(&hits))
}

pub fn mrr_at_k(run: &RunFile, qrels: &QRels, k: usize) -> Result<f64> {
    check_k(k)?;
    let rr: Vec<f64> = qrels
        .query_ids()
        .map(|q| {
            ranked(run, q)
                .iter()
                .take(k)
                .position(|(d, _)| qrels.grade(q, d) > 0)
                .map_or(0.0, |i| 1.0 / (i + 1) as f64)
        })
        .collect();
    Ok(mean(&rr))
}

/// Mean fraction of each query's relevant documents found in the top `k`;
/// queries with nothing relevant are skipped.
pub fn recall_at_k(run: &RunFile, qrels: &QRels, k: usize) -> Result<f64> {
    check_k(k)?;
    let mut per_query = Vec::new();
    for q in qrels.query_ids() {
        let total = qrels.num_relevant(q);
        if total == 0 {
            warn!("query `{q}` has no relevant documents; excluded from recall");
            continue;
        }
        let found = ranked(run, q).iter().take(k).filter(|(d, _)| qrels.grade(q, d) > 0).count();
        per_query.push(found as f64 / total as f64);
    }
    Ok(mean(&per_query))
}

fn dcg(grades: impl Iterator<Item = u32>) -> f64 {
    grades
        .enumerate()
        .map(|(i, g)| (2f64.powi(g as i32) - 1.0) / ((i + 2) as f64).log2())
        .sum()
}

/// Gain `2^rel − 1`, discount `log2(rank + 1)`, normalized by the ideal
/// ordering; queries with zero ideal DCG are skipped.
pub fn ndcg_at_k(run: &RunFile, qrels: &QRels, k: usize) -> Result<f64> {
    check_k(k)?;
    let mut per_query = Vec::new();
    for q in qrels.query_ids() {
        let mut ideal: Vec<u32> = qrels.grades(q).map(|g| g.values().copied().collect()).unwrap_or_default();
        ideal.sort_unstable_by(|a, b| b.cmp(a));
        let idcg = dcg(ideal.into_iter().take(k));
        if idcg == 0.0 {
            warn!("query `{q}` has zero ideal DCG; excluded from NDCG");
            continue;
        }
        let got = dcg(ranked(run, q).iter().take(k).map(|(d, _)| qrels.grade(q, d)));
        per_query.push(got / idcg);
    }
    Ok(mean(&per_query))
}

pub fn compute(run: &RunFile, qrels: &QRels, metric: Metric) -> Result<f64> {
    match metric {
        Metric::TopK(k) => topk_accuracy(run, qrels, k),
        Metric::Mrr(k) => mrr_at_k(run, qrels, k),
        Metric::Recall(k) => recall_at_k(run, qrels, k),
        Metric::Ndcg(k) => ndcg_at_k(run, qrels, k),
    }
}

pub fn evaluate(run: &RunFile, qrels: &QRels, metrics: &[Metric]) -> Result<Vec<(Metric, f64)>> {
    if qrels.is_empty() {
        return Err(MlrError::Invalid("no queries to evaluate".into()));
    }
    metrics.iter().map(|&m| Ok((m, compute(run, qrels, m)?))).collect()
}

/// `metric<TAB>value` rows.
pub fn table_tsv(rows: &[(Metric, f64)]) -> String {
    let mut out = String::from("metric\tvalue\n");
    for (m, v) in rows {
        out.push_str(&format!("{m}\t{v:.6}\n"));
    }
    out
}

pub fn table_text(rows: &[(Metric, f64)]) -> String {
    let width = rows.iter().map(|(m, _)| m.to_string().len()).max().unwrap_or(0).max(6);
    let mut out = format!("{:<width$}  {:>8}\n", "metric", "value");
    for (m, v) in rows {
        out.push_str(&format!("{:<width$}  {:>8.4}\n", m.to_string(), v));
    }
    out
}
