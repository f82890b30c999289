use super::config::TrainConfig;
use super::data::{CorpusDoc, TrainingInstance};
use super::mining::{combine_negative_pools, mine_hard_negatives};
use super::trainer::{FitOutput, TrainEvent, Trainer};
use crate::error::Result;
use crate::index::Index;
use crate::model::Model;

/// Encodes a corpus with the document encoder into an in-memory index.
pub fn encode_corpus(model: &Model<f32>, corpus: &[CorpusDoc], shards: usize) -> Result<Index> {
    let texts: Vec<String> = corpus.iter().map(|d| d.passage().full_text()).collect();
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let docs = model.embed_docs(&refs)?;
    Index::build(model.config().dim, model.index_m(), &docs, shards)
}

#[derive(Debug, Clone)]
pub struct TwoStageOutput {
    pub stage1: FitOutput,
    pub stage2: FitOutput,
    /// The training data the second stage saw.
    pub stage2_data: Vec<TrainingInstance>,
}

/// Trains on the original data, mines negatives with the result, then trains
/// again on the original data with the mined negatives added. The second
/// stage starts from fresh parameters unless `stage2.stage2_reinit` is off.
pub fn two_stage_train(
    stage1: &TrainConfig,
    stage2: &TrainConfig,
    train: &[TrainingInstance],
    dev: &[TrainingInstance],
    corpus: &[CorpusDoc],
    mut on_event: impl FnMut(usize, &TrainEvent, &Trainer) -> Result<()>,
) -> Result<TwoStageOutput> {
    let mut first = Trainer::new(stage1.clone())?;
    let out1 = first.fit(train, dev, |e, t| on_event(1, e, t))?;
    let model1 = out1.selected.model.clone();
    let index = encode_corpus(&model1, corpus, 1)?;
    let mined = mine_hard_negatives(&model1, &index, corpus, train, stage2.mine_depth)?;
    let stage2_data = combine_negative_pools(train, &mined, stage2.per_source)?;
    let mut second = if stage2.stage2_reinit {
        Trainer::new(stage2.clone())?
    } else {
        Trainer::with_model(stage2.clone(), model1)?
    };
    let out2 = second.fit(&stage2_data, dev, |e, t| on_event(2, e, t))?;
    Ok(TwoStageOutput {
        stage1: out1,
        stage2: out2,
        stage2_data,
    })
}
