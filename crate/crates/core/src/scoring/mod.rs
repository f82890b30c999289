//! Similarity scores and losses. The functions here work on plain vectors;
//! [`taped`] holds the batched, differentiable versions used for training.

pub mod taped;

use mlr_autodiff::{log_sum_exp, Scalar};
use serde::{Deserialize, Serialize};

use crate::encoder::DocRepresentation;
use crate::error::{MlrError, Result};

/// How a multi-vector representation is reduced when scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Max-sim over every vector.
    #[default]
    None,
    Average,
    ScalarMix,
    /// Max-sim for negatives, the last-layer vector for the positive; a
    /// single vector at inference.
    SelfContrastive,
}

impl std::str::FromStr for Pooling {
    type Err = MlrError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "average" => Ok(Self::Average),
            "scalar_mix" => Ok(Self::ScalarMix),
            "self_contrastive" => Ok(Self::SelfContrastive),
            other => Err(MlrError::Config(format!(
                "unknown pooling `{other}` (expected none, average, scalar_mix or self_contrastive)"
            ))),
        }
    }
}

impl std::fmt::Display for Pooling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::Average => "average",
            Self::ScalarMix => "scalar_mix",
            Self::SelfContrastive => "self_contrastive",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda: f64,
    pub pooling: Pooling,
}

/// The regularization grid searched when sweeping λ.
pub const LAMBDA_GRID: [f64; 4] = [0.01, 0.1, 1.0, 10.0];

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Best score and the index of the first vector attaining it.
pub fn max_sim<T: Scalar>(hq: &[T], rep: &DocRepresentation<T>) -> Result<(T, usize)> {
    max_sim_vectors(hq, &rep.vectors)
}

pub fn max_sim_vectors<T: Scalar>(hq: &[T], vectors: &[Vec<T>]) -> Result<(T, usize)> {
    let mut best: Option<(T, usize)> = None;
    for (j, v) in vectors.iter().enumerate() {
        if v.len() != hq.len() {
            return Err(MlrError::Invalid(format!(
                "vector of dimension {} scored against query of dimension {}",
                v.len(),
                hq.len()
            )));
        }
        let s = dot(hq, v);
        if best.is_none_or(|(b, _)| s > b) {
            best = Some((s, j));
        }
    }
    best.ok_or_else(|| MlrError::Invalid("empty document representation".into()))
}

/// `-log softmax` of the positive among `[pos, negs...]`.
pub fn contrastive_loss<T: Scalar>(pos: T, negs: &[T]) -> Result<T> {
    if negs.is_empty() {
        return Err(MlrError::Invalid("contrastive loss needs at least one negative".into()));
    }
    let mut all = Vec::with_capacity(negs.len() + 1);
    all.push(pos);
    all.extend_from_slice(negs);
    if all.iter().any(|s| !s.is_finite()) {
        return Err(MlrError::Invalid("non-finite score".into()));
    }
    Ok(log_sum_exp(&all) - pos)
}

/// Column of query `i`'s positive when a batch's documents are laid out as
/// `[pos_0, neg_0, pos_1, neg_1, ...]`.
pub fn positive_column(i: usize) -> usize {
    2 * i
}

/// Negative columns seen by each query: its own sampled negative plus every
/// other query's positive and negative.
pub fn in_batch_negatives(batch: usize) -> Result<Vec<Vec<usize>>> {
    if batch == 0 {
        return Err(MlrError::Invalid("batch size must be at least 1".into()));
    }
    Ok((0..batch)
        .map(|i| (0..2 * batch).filter(|&c| c != positive_column(i)).collect())
        .collect())
}

pub fn in_batch_negative_count(batch: usize) -> Result<usize> {
    if batch == 0 {
        return Err(MlrError::Invalid("batch size must be at least 1".into()));
    }
    Ok(2 * (batch - 1) + 1)
}

/// Contrastive loss with the positive scored by its last-layer vector only
/// and negatives by max-sim.
pub fn self_contrastive_loss<T: Scalar>(hq: &[T], pos: &DocRepresentation<T>, negs: &[DocRepresentation<T>]) -> Result<T> {
    let s_pos = primary_score(hq, pos)?;
    let s_neg = negs
        .iter()
        .map(|r| max_sim(hq, r).map(|(s, _)| s))
        .collect::<Result<Vec<_>>>()?;
    contrastive_loss(s_pos, &s_neg)
}

fn primary_score<T: Scalar>(hq: &[T], rep: &DocRepresentation<T>) -> Result<T> {
    let v = rep
        .vectors
        .get(rep.primary)
        .ok_or_else(|| MlrError::Invalid("empty document representation".into()))?;
    if v.len() != hq.len() {
        return Err(MlrError::Invalid("query/document dimension mismatch".into()));
    }
    Ok(dot(hq, v))
}

/// Softmax over the positive's own vectors, favouring the last-layer one.
pub fn reg_loss<T: Scalar>(hq: &[T], pos: &DocRepresentation<T>) -> Result<T> {
    let scores: Vec<T> = pos.vectors.iter().map(|v| dot(hq, v)).collect();
    let s = primary_score(hq, pos)?;
    if scores.len() == 1 {
        return Ok(T::zero());
    }
    Ok(log_sum_exp(&scores) - s)
}

pub fn total_loss<T: Scalar>(con: T, reg: T, lambda: T) -> Result<T> {
    if lambda < T::zero() {
        return Err(MlrError::Invalid("λ must be nonnegative".into()));
    }
    Ok(con + lambda * reg)
}

pub fn average_pool<T: Scalar>(vectors: &[Vec<T>]) -> Result<Vec<T>> {
    let first = vectors
        .first()
        .ok_or_else(|| MlrError::Invalid("cannot pool an empty representation".into()))?;
    let mut acc = vec![T::zero(); first.len()];
    for v in vectors {
        for (a, &x) in acc.iter_mut().zip(v) {
            *a += x;
        }
    }
    let inv = T::one() / T::lit(vectors.len() as f64);
    acc.iter_mut().for_each(|a| *a *= inv);
    Ok(acc)
}

pub fn softmax<T: Scalar>(xs: &[T]) -> Vec<T> {
    let lse = log_sum_exp(xs);
    xs.iter().map(|&x| (x - lse).exp()).collect()
}

pub fn scalar_mix_pool<T: Scalar>(vectors: &[Vec<T>], alpha: &[T]) -> Result<Vec<T>> {
    if vectors.is_empty() || alpha.len() != vectors.len() {
        return Err(MlrError::Invalid(format!(
            "scalar mix has {} weights for {} vectors",
            alpha.len(),
            vectors.len()
        )));
    }
    let w = softmax(alpha);
    let mut acc = vec![T::zero(); vectors[0].len()];
    for (v, &wl) in vectors.iter().zip(&w) {
        for (a, &x) in acc.iter_mut().zip(v) {
            *a += wl * x;
        }
    }
    Ok(acc)
}

/// The vectors that go into the index for a representation under a given
/// pooling: all of them for max-sim, one pooled vector otherwise.
pub fn index_vectors<T: Scalar>(rep: &DocRepresentation<T>, pooling: Pooling, alpha: Option<&[T]>) -> Result<Vec<Vec<T>>> {
    Ok(match pooling {
        Pooling::None => rep.vectors.clone(),
        Pooling::Average => vec![average_pool(&rep.vectors)?],
        Pooling::ScalarMix => {
            let alpha = alpha.ok_or_else(|| MlrError::Invalid("scalar mix without weights".into()))?;
            vec![scalar_mix_pool(&rep.vectors, alpha)?]
        }
        Pooling::SelfContrastive => vec![rep.vectors[rep.primary].clone()],
    })
}
