use mlr_autodiff::{clip_grad_norm, AdamW, Tape};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Selection, TrainConfig};
use super::data::{Passage, TrainingInstance};
use super::schedule::lr_at;
use super::validate::{validate, DevMetric};
use crate::checkpoint::Checkpoint;
use crate::error::{MlrError, Result};
use crate::model::Model;

/// Derives independent RNG streams from the run seed.
fn stream(seed: u64, tag: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ a.rotate_left(21) ^ b.rotate_left(42));
    rng
}

const ORDER_STREAM: u64 = 1;
const NEGATIVE_STREAM: u64 = 2;

/// The batches of one optimizer update: `grad_accum` micro-batches of
/// instance indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    pub epoch: usize,
    pub update: usize,
    pub micro_batches: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub step: u64,
    pub train_loss: f64,
    #[serde(flatten)]
    pub dev: Option<DevMetric>,
}

#[derive(Debug, Clone)]
pub enum TrainEvent {
    Step(StepStats),
    Epoch(EpochStats),
}

#[derive(Debug, Clone)]
pub struct FitOutput {
    /// The selected model (last or best on dev, per config).
    pub selected: Checkpoint,
    pub epochs: Vec<EpochStats>,
}

#[derive(Debug, Clone)]
pub struct Trainer {
    config: TrainConfig,
    model: Model<f32>,
    optimizer: AdamW<f32>,
    step: u64,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = Model::init(config.encoder.clone(), config.spec(), config.pooling, config.seed)?;
        Self::with_model(config, model)
    }

    /// Starts a fresh optimization run from existing parameters.
    pub fn with_model(config: TrainConfig, model: Model<f32>) -> Result<Self> {
        config.validate()?;
        if model.config() != &config.encoder || model.spec != config.spec() || model.pooling != config.pooling {
            return Err(MlrError::Config("model does not match the training config".into()));
        }
        let optimizer = AdamW::new(config.adamw());
        Ok(Self {
            config,
            model,
            optimizer,
            step: 0,
        })
    }

    pub fn resume(ckpt: Checkpoint) -> Result<Self> {
        let config = ckpt
            .train
            .ok_or_else(|| MlrError::Config("checkpoint has no training config to resume".into()))?;
        let optimizer = ckpt
            .optimizer
            .ok_or_else(|| MlrError::Config("checkpoint has no optimizer state to resume".into()))?;
        let mut t = Self::with_model(config, ckpt.model)?;
        t.optimizer = optimizer;
        t.step = ckpt.step;
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            optimizer: Some(self.optimizer.clone()),
            step: self.step,
            train: Some(self.config.clone()),
        }
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &Model<f32> {
        &self.model
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Optimizer updates per epoch; a trailing partial batch is dropped.
    pub fn updates_per_epoch(&self, n: usize) -> usize {
        n / (self.config.batch_size * self.config.grad_accum)
    }

    pub fn total_steps(&self, n: usize) -> u64 {
        (self.updates_per_epoch(n) * self.config.epochs) as u64
    }

    pub fn epoch_order(&self, n: usize, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream(self.config.seed, ORDER_STREAM, epoch as u64, 0));
        order
    }

    pub fn plan(&self, n: usize, step: u64) -> Result<BatchPlan> {
        let upe = self.updates_per_epoch(n);
        if upe == 0 {
            return Err(MlrError::Invalid(format!(
                "{n} instances cannot fill one update of {} × {}",
                self.config.batch_size, self.config.grad_accum
            )));
        }
        let epoch = (step / upe as u64) as usize;
        let update = (step % upe as u64) as usize;
        let order = self.epoch_order(n, epoch);
        let b = self.config.batch_size;
        let start = update * b * self.config.grad_accum;
        let micro_batches = (0..self.config.grad_accum)
            .map(|j| order[start + j * b..start + (j + 1) * b].to_vec())
            .collect();
        Ok(BatchPlan {
            epoch,
            update,
            micro_batches,
        })
    }

    /// Queries, documents laid out `[pos_0, neg_0, pos_1, neg_1, …]`, and the
    /// instance indices of one micro-batch.
    fn micro_batch(&self, data: &[TrainingInstance], idx: &[usize], epoch: usize) -> (Vec<Vec<u32>>, Vec<Vec<u32>>) {
        let enc = &self.config.encoder;
        let mut queries = Vec::with_capacity(idx.len());
        let mut docs = Vec::with_capacity(2 * idx.len());
        for &i in idx {
            let inst = &data[i];
            queries.push(enc.tokenize(&inst.question));
            docs.push(enc.tokenize(&inst.positive_ctxs[0].full_text()));
            docs.push(enc.tokenize(&self.sample_negative(data, i, epoch).full_text()));
        }
        (queries, docs)
    }

    /// One negative per instance, drawn from its pool; instances without
    /// negatives borrow the next instance's positive.
    fn sample_negative<'a>(&self, data: &'a [TrainingInstance], i: usize, epoch: usize) -> &'a Passage {
        let negs = &data[i].negative_ctxs;
        if negs.is_empty() {
            return &data[(i + 1) % data.len()].positive_ctxs[0];
        }
        let mut rng = stream(self.config.seed, NEGATIVE_STREAM, epoch as u64, i as u64);
        &negs[rng.random_range(0..negs.len())]
    }

    /// Forward and backward over one micro-batch, accumulating `scale ×`
    /// the gradient into the parameters. Returns the unscaled loss.
    fn accumulate(&mut self, queries: &[Vec<u32>], docs: &[Vec<u32>], scale: f32) -> Result<f64> {
        let loss_cfg = self.config.loss();
        let mut tape = Tape::new();
        let bound = self.model.bind(&mut tape)?;
        let out = self.model.batch_loss(&mut tape, &bound, queries, docs, &loss_cfg)?;
        let loss = tape.item(out.loss) as f64;
        if !loss.is_finite() {
            return Ok(loss);
        }
        let root = if scale == 1.0 { out.loss } else { tape.scale(out.loss, scale)? };
        let grads = tape.backward(root)?;
        self.model.absorb(&bound, &grads)?;
        Ok(loss)
    }

    /// Loss of one micro-batch under the current parameters, without
    /// touching gradients.
    pub fn batch_loss(&self, data: &[TrainingInstance], idx: &[usize], epoch: usize) -> Result<f64> {
        let mut probe = self.clone();
        let (q, d) = self.micro_batch(data, idx, epoch);
        probe.accumulate(&q, &d, 1.0)
    }

    /// Performs the next optimizer update.
    pub fn train_step(&mut self, data: &[TrainingInstance]) -> Result<StepStats> {
        let plan = self.plan(data.len(), self.step)?;
        let scale = 1.0 / plan.micro_batches.len() as f32;
        let mut loss = 0.0;
        for (j, idx) in plan.micro_batches.iter().enumerate() {
            let (q, d) = self.micro_batch(data, idx, plan.epoch);
            let l = self.accumulate(&q, &d, scale)?;
            if !l.is_finite() {
                self.zero_grad();
                return Err(MlrError::NonFiniteLoss {
                    epoch: plan.epoch,
                    batch: plan.update * plan.micro_batches.len() + j,
                    instances: idx.clone(),
                });
            }
            loss += l / plan.micro_batches.len() as f64;
        }
        let total = self.total_steps(data.len());
        let lr = lr_at(self.step + 1, total, self.config.lr, self.config.warmup);
        let grad_norm = clip_grad_norm(self.model.named_params_mut().map(|(_, t)| t), self.config.clip);
        let result = self.optimizer.step(self.model.named_params_mut(), lr);
        self.zero_grad();
        result?;
        self.step += 1;
        Ok(StepStats {
            step: self.step,
            epoch: plan.epoch,
            lr,
            loss,
            grad_norm,
        })
    }

    fn zero_grad(&mut self) {
        self.model.named_params_mut().for_each(|(_, t)| t.zero_grad());
    }

    /// Trains to the configured number of epochs, validating after each.
    /// Resumes from the current step.
    pub fn fit(
        &mut self,
        train: &[TrainingInstance],
        dev: &[TrainingInstance],
        mut on_event: impl FnMut(&TrainEvent, &Trainer) -> Result<()>,
    ) -> Result<FitOutput> {
        if train.is_empty() {
            return Err(MlrError::Invalid("no training data".into()));
        }
        let upe = self.updates_per_epoch(train.len()) as u64;
        let total = self.total_steps(train.len());
        let mut epochs = Vec::new();
        let mut best: Option<(DevMetric, Checkpoint)> = None;
        let mut epoch_loss = 0.0;
        let mut epoch_steps = 0usize;
        while self.step < total {
            let stats = self.train_step(train)?;
            epoch_loss += stats.loss;
            epoch_steps += 1;
            on_event(&TrainEvent::Step(stats.clone()), self)?;
            if self.step.is_multiple_of(upe) {
                let epoch = stats.epoch;
                let dev_metric = if dev.is_empty() {
                    None
                } else {
                    Some(validate(
                        &self.model,
                        dev,
                        epoch,
                        self.config.switch_epoch(),
                        self.config.dev_pool,
                    )?)
                };
                let record = EpochStats {
                    epoch,
                    step: self.step,
                    train_loss: epoch_loss / epoch_steps as f64,
                    dev: dev_metric,
                };
                if let Some(m) = dev_metric {
                    if best.as_ref().is_none_or(|(b, _)| m.better_than(b)) {
                        best = Some((m, self.checkpoint()));
                    }
                }
                on_event(&TrainEvent::Epoch(record.clone()), self)?;
                epochs.push(record);
                epoch_loss = 0.0;
                epoch_steps = 0;
            }
        }
        let selected = match (self.config.select, best) {
            (Selection::Best, Some((_, ckpt))) => ckpt,
            _ => self.checkpoint(),
        };
        Ok(FitOutput { selected, epochs })
    }
}
