use mlr_autodiff::{Scalar, Tape, Var};

use super::{LossConfig, Pooling};
use crate::encoder::TapedReps;
use crate::error::{MlrError, Result};

/// Loss pieces of one batch; `scores` is the `[queries, docs]` matrix the
/// contrastive term was computed from.
#[derive(Debug, Clone, Copy)]
pub struct BatchLoss {
    pub loss: Var,
    pub con: Var,
    pub reg: Option<Var>,
    pub scores: Var,
}

/// Raw inner products `[queries * docs, m]` between every query and every
/// document vector.
pub fn vector_scores<T: Scalar>(tape: &mut Tape<T>, hq: Var, docs: &TapedReps) -> Result<Var> {
    let b = tape.shape(hq)[0];
    let dt = tape.transpose(docs.vectors)?;
    let s = tape.matmul(hq, dt)?;
    Ok(tape.reshape(s, vec![b * docs.docs, docs.m])?)
}

/// Reduces per-vector scores to one score per (query, document) pair.
/// `positives[i]` is query `i`'s positive column, used only by
/// self-contrastive pooling.
#[allow(clippy::too_many_arguments)]
pub fn pooled_scores<T: Scalar>(
    tape: &mut Tape<T>,
    flat: Var,
    queries: usize,
    docs: &TapedReps,
    pooling: Pooling,
    primary: usize,
    positives: &[usize],
    alpha: Option<Var>,
) -> Result<Var> {
    let (nd, m) = (docs.docs, docs.m);
    let pooled = match pooling {
        Pooling::None => tape.max_axis(flat, 1)?,
        Pooling::Average => tape.mean_axis(flat, 1)?,
        Pooling::ScalarMix => {
            let alpha = alpha.ok_or_else(|| MlrError::Invalid("scalar mix without weights".into()))?;
            if tape.shape(alpha) != [m] {
                return Err(MlrError::Invalid(format!(
                    "scalar mix has {:?} weights for {m} vectors",
                    tape.shape(alpha)
                )));
            }
            let row = tape.reshape(alpha, vec![1, m])?;
            let w = tape.softmax(row)?;
            let w = tape.reshape(w, vec![m, 1])?;
            tape.matmul(flat, w)?
        }
        Pooling::SelfContrastive => {
            let maxed = tape.max_axis(flat, 1)?;
            let last = tape.slice(flat, 1, primary, primary + 1)?;
            let last = tape.reshape(last, vec![queries * nd])?;
            let mut mask = vec![T::zero(); queries * nd];
            for (i, &p) in positives.iter().enumerate() {
                mask[i * nd + p] = T::one();
            }
            let keep: Vec<T> = mask.iter().map(|&x| T::one() - x).collect();
            let mask = tape.constant(vec![queries * nd], mask)?;
            let keep = tape.constant(vec![queries * nd], keep)?;
            let a = tape.mul(maxed, keep)?;
            let b = tape.mul(last, mask)?;
            tape.add(a, b)?
        }
    };
    Ok(tape.reshape(pooled, vec![queries, nd])?)
}

/// Mean over rows of `-row[col]`, picking one column per row of `[rows, cols]`.
fn mean_negated_pick<T: Scalar>(tape: &mut Tape<T>, m: Var, cols: &[usize]) -> Result<Var> {
    let (rows, width) = (tape.shape(m)[0], tape.shape(m)[1]);
    let flat = tape.reshape(m, vec![rows * width, 1])?;
    let idx: Vec<usize> = cols.iter().enumerate().map(|(i, &c)| i * width + c).collect();
    let picked = tape.gather_rows(flat, &idx)?;
    let total = tape.sum(picked)?;
    Ok(tape.scale(total, T::lit(-1.0 / rows as f64))?)
}

/// Batch loss: contrastive over every document in the batch plus, when
/// λ > 0, the regularizer on each positive's own vectors.
pub fn batch_loss<T: Scalar>(
    tape: &mut Tape<T>,
    hq: Var,
    docs: &TapedReps,
    positives: &[usize],
    primary: usize,
    cfg: &LossConfig,
    alpha: Option<Var>,
) -> Result<BatchLoss> {
    let b = tape.shape(hq)[0];
    if positives.len() != b {
        return Err(MlrError::Invalid(format!("{} positives for {b} queries", positives.len())));
    }
    if docs.docs < 2 {
        return Err(MlrError::Invalid("a batch needs at least one negative document".into()));
    }
    if let Some(&p) = positives.iter().find(|&&p| p >= docs.docs) {
        return Err(MlrError::Invalid(format!("positive column {p} outside {} documents", docs.docs)));
    }
    if primary >= docs.m {
        return Err(MlrError::Invalid(format!("primary vector {primary} outside m={}", docs.m)));
    }
    if cfg.lambda < 0.0 || !cfg.lambda.is_finite() {
        return Err(MlrError::Invalid("λ must be a finite nonnegative number".into()));
    }
    let flat = vector_scores(tape, hq, docs)?;
    let scores = pooled_scores(tape, flat, b, docs, cfg.pooling, primary, positives, alpha)?;
    let ls = tape.log_softmax(scores)?;
    let con = mean_negated_pick(tape, ls, positives)?;
    if cfg.lambda == 0.0 {
        return Ok(BatchLoss {
            loss: con,
            con,
            reg: None,
            scores,
        });
    }
    let rows: Vec<usize> = positives.iter().enumerate().map(|(i, &p)| i * docs.docs + p).collect();
    let own = tape.gather_rows(flat, &rows)?;
    let own = tape.log_softmax(own)?;
    let reg = mean_negated_pick(tape, own, &vec![primary; b])?;
    let weighted = tape.scale(reg, T::lit(cfg.lambda))?;
    let loss = tape.add(con, weighted)?;
    Ok(BatchLoss {
        loss,
        con,
        reg: Some(reg),
        scores,
    })
}
