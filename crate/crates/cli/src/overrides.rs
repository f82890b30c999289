use std::path::PathBuf;

use clap::Args;
use mlr_core::encoder::{LayerSet, PoolingMode, Strategy};
use mlr_core::scoring::Pooling;
use mlr_core::train::{Selection, TrainConfig};

/// One flag per config field; anything given replaces the file's value.
#[derive(Debug, Clone, Default, Args)]
pub struct TrainOverrides {
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    warmup: Option<f64>,
    #[arg(long)]
    clip: Option<f64>,
    #[arg(long)]
    switch_epoch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    strategy: Option<Strategy>,
    /// Comma-separated layer set, e.g. "3,4".
    #[arg(long)]
    layers: Option<String>,
    #[arg(long)]
    mebert_m: Option<usize>,
    #[arg(long)]
    pooling: Option<Pooling>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    select: Option<Selection>,
    #[arg(long)]
    grad_accum: Option<usize>,
    #[arg(long)]
    dev_pool: Option<usize>,
    #[arg(long)]
    train_file: Option<PathBuf>,
    #[arg(long)]
    dev_file: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    mine_depth: Option<usize>,
    #[arg(long)]
    per_source: Option<usize>,
    #[arg(long)]
    stage2_reinit: Option<bool>,
    #[arg(long)]
    encoder_vocab_size: Option<usize>,
    #[arg(long)]
    encoder_dim: Option<usize>,
    #[arg(long)]
    encoder_layers: Option<usize>,
    #[arg(long)]
    encoder_heads: Option<usize>,
    #[arg(long)]
    encoder_ff_dim: Option<usize>,
    #[arg(long)]
    encoder_max_len: Option<usize>,
    #[arg(long)]
    encoder_pooling: Option<PoolingMode>,
}

macro_rules! set {
    ($src:ident, $dst:expr, $($field:ident),*) => {
        $(if let Some(v) = $src.$field.clone() { $dst.$field = v; })*
    };
}

impl TrainOverrides {
    pub fn apply(&self, cfg: &mut TrainConfig) -> mlr_core::Result<()> {
        set!(self, cfg, lr, batch_size, epochs, warmup, clip, seed, lambda, strategy, mebert_m, pooling);
        set!(self, cfg, beta1, beta2, eps, weight_decay, select, grad_accum, dev_pool, mine_depth, per_source);
        set!(self, cfg, stage2_reinit);
        if let Some(e) = self.switch_epoch {
            cfg.switch_epoch = Some(e);
        }
        for (src, dst) in [
            (&self.train_file, &mut cfg.train_file),
            (&self.dev_file, &mut cfg.dev_file),
            (&self.out_dir, &mut cfg.out_dir),
            (&self.corpus, &mut cfg.corpus),
        ] {
            if let Some(p) = src {
                *dst = Some(p.clone());
            }
        }
        let enc = &mut cfg.encoder;
        for (src, dst) in [
            (self.encoder_vocab_size, &mut enc.vocab_size),
            (self.encoder_dim, &mut enc.dim),
            (self.encoder_layers, &mut enc.layers),
            (self.encoder_heads, &mut enc.heads),
            (self.encoder_ff_dim, &mut enc.ff_dim),
            (self.encoder_max_len, &mut enc.max_len),
        ] {
            if let Some(v) = src {
                *dst = v;
            }
        }
        if let Some(p) = self.encoder_pooling {
            enc.pooling = p;
        }
        // Parsed last so the layer count reflects any encoder override.
        if let Some(l) = &self.layers {
            cfg.layers = Some(LayerSet::parse(l, cfg.encoder.layers)?);
        }
        Ok(())
    }
}
