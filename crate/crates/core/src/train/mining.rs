use std::collections::HashSet;

use super::data::{CorpusDoc, Passage, TrainingInstance};
use crate::error::{MlrError, Result};
use crate::index::Index;
use crate::model::Model;

/// Case-insensitive substring test against any non-empty answer.
pub fn contains_answer(text: &str, answers: &[String]) -> bool {
    let text = text.to_lowercase();
    answers
        .iter()
        .map(|a| a.trim().to_lowercase())
        .any(|a| !a.is_empty() && text.contains(&a))
}

/// Retrieves the top `depth` passages for each question and keeps those
/// that contain none of its answers (and are not one of its positives) as
/// the new negatives. Questions left with no mined negatives keep their
/// original ones.
pub fn mine_hard_negatives(
    model: &Model<f32>,
    index: &Index,
    corpus: &[CorpusDoc],
    instances: &[TrainingInstance],
    depth: usize,
) -> Result<Vec<TrainingInstance>> {
    if index.num_docs() != corpus.len() as u64 {
        return Err(MlrError::Invalid(format!(
            "index holds {} documents but the corpus has {}",
            index.num_docs(),
            corpus.len()
        )));
    }
    let hq = if depth == 0 {
        Vec::new()
    } else {
        let questions: Vec<&str> = instances.iter().map(|i| i.question.as_str()).collect();
        model.embed_queries(&questions)?
    };
    let mut kept_original = 0usize;
    let mut out = Vec::with_capacity(instances.len());
    for (qi, inst) in instances.iter().enumerate() {
        let mut mined = Vec::new();
        if depth > 0 {
            let positives: HashSet<&Passage> = inst.positive_ctxs.iter().collect();
            for hit in index.search(&hq[qi], depth)? {
                let doc = &corpus[hit.doc_id as usize];
                let passage = doc.passage();
                if positives.contains(&passage) || contains_answer(&passage.full_text(), &inst.answers) {
                    continue;
                }
                mined.push(passage);
            }
        }
        let mut next = inst.clone();
        if mined.is_empty() {
            kept_original += 1;
        } else {
            next.negative_ctxs = mined;
        }
        out.push(next);
    }
    if kept_original > 0 {
        log::warn!("{kept_original} questions had no surviving mined negatives and keep their original ones");
    }
    Ok(out)
}

/// Second-stage training pool: up to `per_source` original negatives plus up
/// to `per_source` mined ones not already present. Instances for which
/// mining found nothing new are returned unchanged.
pub fn combine_negative_pools(
    original: &[TrainingInstance],
    mined: &[TrainingInstance],
    per_source: usize,
) -> Result<Vec<TrainingInstance>> {
    if original.len() != mined.len() {
        return Err(MlrError::Invalid(format!(
            "{} original instances but {} mined",
            original.len(),
            mined.len()
        )));
    }
    Ok(original
        .iter()
        .zip(mined)
        .map(|(o, m)| {
            let known: HashSet<&Passage> = o.negative_ctxs.iter().collect();
            let fresh: Vec<Passage> = m
                .negative_ctxs
                .iter()
                .filter(|p| !known.contains(p))
                .take(per_source)
                .cloned()
                .collect();
            if fresh.is_empty() {
                return o.clone();
            }
            let mut next = o.clone();
            next.negative_ctxs.truncate(per_source);
            next.negative_ctxs.extend(fresh);
            next
        })
        .collect())
}
