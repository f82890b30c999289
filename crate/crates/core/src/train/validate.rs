use serde::{Deserialize, Serialize};

use super::data::TrainingInstance;
use crate::error::{MlrError, Result};
use crate::index::inner;
use crate::model::Model;
use crate::scoring::contrastive_loss;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    /// Mean contrastive loss against each query's attached negatives.
    Loss,
    /// Mean 1-based rank of the positive within its candidate pool.
    Rank,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DevMetric {
    #[serde(rename = "dev_metric")]
    pub kind: MetricKind,
    #[serde(rename = "dev_value")]
    pub value: f64,
}

impl DevMetric {
    /// Lower is better for both kinds; once ranks are in use, any rank
    /// beats a loss from the earlier phase.
    pub fn better_than(&self, other: &DevMetric) -> bool {
        match (self.kind, other.kind) {
            (a, b) if a == b => self.value < other.value,
            (MetricKind::Rank, _) => true,
            _ => false,
        }
    }
}

/// Positive and negative scores of one dev query's candidate pool.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPool {
    pub positive: f32,
    pub negatives: Vec<f32>,
}

/// Scores each dev query against its positive and up to `pool − 1` attached
/// negatives, exactly as the index would score them. Queries without
/// negatives are skipped.
pub fn dev_pools(model: &Model<f32>, dev: &[TrainingInstance], pool: usize) -> Result<Vec<ScoredPool>> {
    let usable: Vec<&TrainingInstance> = dev
        .iter()
        .filter(|i| !i.positive_ctxs.is_empty() && !i.negative_ctxs.is_empty())
        .collect();
    if usable.is_empty() {
        return Err(MlrError::Invalid("dev set has no queries with a positive and a negative".into()));
    }
    let queries: Vec<&str> = usable.iter().map(|i| i.question.as_str()).collect();
    let hq = model.embed_queries(&queries)?;
    let mut texts = Vec::new();
    let mut sizes = Vec::new();
    for inst in &usable {
        texts.push(inst.positive_ctxs[0].full_text());
        let negs = &inst.negative_ctxs[..inst.negative_ctxs.len().min(pool.saturating_sub(1).max(1))];
        texts.extend(negs.iter().map(|p| p.full_text()));
        sizes.push(1 + negs.len());
    }
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let docs = model.embed_docs(&refs)?;
    let mut out = Vec::with_capacity(usable.len());
    let mut at = 0;
    for (q, n) in hq.iter().zip(sizes) {
        let scores: Vec<f32> = docs[at..at + n]
            .iter()
            .map(|vs| vs.iter().map(|v| inner(q, v)).fold(f32::NEG_INFINITY, f32::max))
            .collect();
        at += n;
        out.push(ScoredPool {
            positive: scores[0],
            negatives: scores[1..].to_vec(),
        });
    }
    Ok(out)
}

/// Mean rank of the positive; ties count against it.
pub fn average_rank(pools: &[ScoredPool]) -> f64 {
    let total: usize = pools
        .iter()
        .map(|p| 1 + p.negatives.iter().filter(|&&s| s >= p.positive).count())
        .sum();
    total as f64 / pools.len() as f64
}

pub fn mean_contrastive_loss(pools: &[ScoredPool]) -> Result<f64> {
    let mut total = 0.0;
    for p in pools {
        let negs: Vec<f64> = p.negatives.iter().map(|&s| s as f64).collect();
        total += contrastive_loss(p.positive as f64, &negs)?;
    }
    Ok(total / pools.len() as f64)
}

/// Dev loss before `switch_epoch`, average rank from it on.
pub fn validate(
    model: &Model<f32>,
    dev: &[TrainingInstance],
    epoch: usize,
    switch_epoch: usize,
    pool: usize,
) -> Result<DevMetric> {
    if dev.is_empty() {
        return Err(MlrError::Invalid("empty dev set".into()));
    }
    let pools = dev_pools(model, dev, pool)?;
    Ok(if epoch >= switch_epoch {
        DevMetric {
            kind: MetricKind::Rank,
            value: average_rank(&pools),
        }
    } else {
        DevMetric {
            kind: MetricKind::Loss,
            value: mean_contrastive_loss(&pools)?,
        }
    })
}
