use std::path::{Path, PathBuf};

use mlr_autodiff::AdamWConfig;
use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderConfig, LayerSet, RepresentationSpec, Strategy};
use crate::error::{MlrError, Result};
use crate::scoring::{LossConfig, Pooling};

/// Which checkpoint a run returns: the final one or the best on dev.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    #[default]
    Last,
    Best,
}

impl std::str::FromStr for Selection {
    type Err = MlrError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "last" => Ok(Self::Last),
            "best" => Ok(Self::Best),
            other => Err(MlrError::Config(format!("unknown selection `{other}` (expected last or best)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup: f64,
    pub clip: f64,
    /// First epoch (0-based) validated by average rank instead of dev loss.
    /// Defaults to three quarters of the epochs.
    pub switch_epoch: Option<usize>,
    pub seed: u64,
    pub lambda: f64,
    pub strategy: Strategy,
    /// Selected layers; defaults to the last layer only.
    pub layers: Option<LayerSet>,
    pub mebert_m: usize,
    pub pooling: Pooling,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub select: Selection,
    /// Micro-batches accumulated per optimizer update.
    pub grad_accum: usize,
    /// Candidates per dev query (positive included) for rank validation.
    pub dev_pool: usize,
    pub train_file: Option<PathBuf>,
    pub dev_file: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    /// Corpus searched when mining negatives for the second stage.
    pub corpus: Option<PathBuf>,
    pub mine_depth: usize,
    /// Negatives kept from each of the original and mined pools.
    pub per_source: usize,
    /// Second stage starts from fresh parameters rather than the first
    /// stage's result.
    pub stage2_reinit: bool,
    pub encoder: EncoderConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let d = AdamWConfig::default();
        Self {
            lr: 1e-3,
            batch_size: 16,
            epochs: 40,
            warmup: 0.05,
            clip: 2.0,
            switch_epoch: None,
            seed: 12345,
            lambda: 0.0,
            strategy: Strategy::Dual,
            layers: None,
            mebert_m: 8,
            pooling: Pooling::None,
            beta1: d.beta1,
            beta2: d.beta2,
            eps: d.eps,
            weight_decay: d.weight_decay,
            select: Selection::Last,
            grad_accum: 1,
            dev_pool: 10,
            train_file: None,
            dev_file: None,
            out_dir: None,
            corpus: None,
            mine_depth: 100,
            per_source: 50,
            stage2_reinit: true,
            encoder: EncoderConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| MlrError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(MlrError::io(path))?;
        let mut cfg = Self::from_toml_str(&text)?;
        // Data paths in a config file are relative to that file.
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.train_file,
            &mut cfg.dev_file,
            &mut cfg.out_dir,
            &mut cfg.corpus,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| MlrError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.spec().validate(self.encoder.layers)?;
        let bad = |msg: &str| Err(MlrError::Config(msg.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.warmup) {
            return bad("warmup must lie in [0, 1]");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if !(self.clip.is_finite() && self.clip > 0.0) {
            return bad("clip must be positive");
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad("lambda must be nonnegative");
        }
        if self.grad_accum == 0 {
            return bad("grad_accum must be at least 1");
        }
        if self.dev_pool < 2 {
            return bad("dev_pool must be at least 2");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.pooling == Pooling::ScalarMix && self.strategy == Strategy::ColBert {
            return bad("scalar_mix needs a fixed vector count; colbert has none");
        }
        Ok(())
    }

    pub fn layer_set(&self) -> LayerSet {
        self.layers
            .clone()
            .unwrap_or_else(|| LayerSet::last_only(self.encoder.layers))
    }

    pub fn spec(&self) -> RepresentationSpec {
        RepresentationSpec {
            strategy: self.strategy,
            layers: self.layer_set(),
            mebert_m: self.mebert_m,
            pooling: self.encoder.pooling,
        }
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            lambda: self.lambda,
            pooling: self.pooling,
        }
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn switch_epoch(&self) -> usize {
        self.switch_epoch.unwrap_or(self.epochs * 3 / 4)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_switch() {
        let c = TrainConfig::default();
        assert_eq!(c.switch_epoch(), 30);
        assert_eq!(c.warmup, 0.05);
        assert_eq!(c.clip, 2.0);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn toml_round_trip() {
        let c = TrainConfig::from_toml_str(
            "lr = 0.002\nstrategy = \"mlr\"\nlayers = [3, 4]\npooling = \"self_contrastive\"\n[encoder]\ndim = 32\n",
        )
        .unwrap();
        assert_eq!(c.strategy, Strategy::Mlr);
        assert_eq!(c.layer_set().layers(), &[3, 4]);
        assert_eq!(c.encoder.dim, 32);
        assert_eq!(c.encoder.layers, 4);
        let back = TrainConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(TrainConfig::from_toml_str("bogus = 1").is_err());
        assert!(TrainConfig::from_toml_str("layers = [0, 4]").is_err());
        let c = TrainConfig {
            warmup: 1.5,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
        let c = TrainConfig {
            layers: Some(LayerSet::try_from(vec![2]).unwrap()),
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
