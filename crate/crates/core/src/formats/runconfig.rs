//! TOML run configuration shared by every CLI command.
//!
//! ```toml
//! [model]
//! fusion = "mmtm"
//!
//! [loss]
//! lambda1 = 0.1
//! lambda2 = 0.1
//! lambda3 = 0.8
//! label_strategy = "max_likelihood_selection"
//! clip = { enabled = false, tau = 0.9995 }
//!
//! [train]
//! epochs = 20
//! batch_size = 16
//! seed = 0
//!
//! [data]
//! path = "data/"          # or a [data.synth] table
//!
//! [eval]
//! theta = 0.5
//!
//! [output]
//! dir = "runs/mmtm"
//! ```

use serde::{Deserialize, Serialize};

use super::parse_toml;
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::grouping::{AIR, MIN_POSITIVE_SLICES};
use crate::loss::LossWeights;
use crate::metrics::DEFAULT_THETA;
use crate::synth::SynthConfig;
use crate::train::{ClipConfig, LabelStrategy, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSection {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub label_strategy: LabelStrategy,
    pub clip: ClipConfig,
}

impl Default for LossSection {
    fn default() -> Self {
        let w = LossWeights::default();
        LossSection {
            lambda1: w.lambda1,
            lambda2: w.lambda2,
            lambda3: w.lambda3,
            label_strategy: LabelStrategy::MaxLikelihoodSelection,
            clip: ClipConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub pretrain_epochs: usize,
    pub pretrain_lr_max: f64,
    pub balance_pretrain: bool,
    pub checkpoint_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr_max: t.lr_max,
            lr_min: t.lr_min,
            weight_decay: t.weight_decay,
            seed: t.seed,
            pretrain_epochs: t.pretrain_epochs,
            pretrain_lr_max: t.pretrain_lr_max,
            balance_pretrain: t.balance_pretrain,
            checkpoint_every: t.checkpoint_every,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Dataset directory written by `gen-data`.
    pub path: Option<String>,
    /// Generate in memory instead of reading `path`.
    pub synth: Option<SynthConfig>,
    pub group_size: usize,
    pub pad_value: f64,
    pub min_positive: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            path: None,
            synth: None,
            group_size: 8,
            pad_value: AIR,
            min_positive: MIN_POSITIVE_SLICES,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub theta: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { theta: DEFAULT_THETA }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub loss: LossSection,
    pub train: TrainSection,
    pub data: DataSection,
    pub eval: EvalSection,
    pub output: OutputSection,
}

/// Where a run's cases come from.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Path(String),
    Synth(SynthConfig),
}

impl RunConfig {
    /// Parse and validate. Errors name the offending key.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = parse_toml(text, "run config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every field written out, defaults included.
    pub fn resolved_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda1: self.loss.lambda1,
            lambda2: self.loss.lambda2,
            lambda3: self.loss.lambda3,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr_max: t.lr_max,
            lr_min: t.lr_min,
            weight_decay: t.weight_decay,
            seed: t.seed,
            weights: self.weights(),
            strategy: self.loss.label_strategy,
            clip: self.loss.clip,
            pretrain_epochs: t.pretrain_epochs,
            pretrain_lr_max: t.pretrain_lr_max,
            balance_pretrain: t.balance_pretrain,
            group_size: self.data.group_size,
            pad_value: self.data.pad_value,
            min_positive: self.data.min_positive,
            theta: self.eval.theta,
            checkpoint_every: t.checkpoint_every,
        }
    }

    /// The data source; a synthetic config inherits the grouping settings.
    pub fn data_source(&self) -> DataSource {
        match (&self.data.path, &self.data.synth) {
            (Some(p), _) => DataSource::Path(p.clone()),
            (None, s) => {
                let mut s = s.clone().unwrap_or_default();
                s.group_size = self.data.group_size;
                s.min_positive = self.data.min_positive;
                DataSource::Synth(s)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.weights().validate().map_err(|e| Error::Config(format!("loss: {e}")))?;
        self.train_config().validate()?;
        if self.data.path.is_some() && self.data.synth.is_some() {
            return Err(Error::Config("data: set either `path` or `synth`, not both".into()));
        }
        if !self.data.pad_value.is_finite() {
            return Err(Error::Config("data: `pad_value` must be finite".into()));
        }
        let input = self.model.image.input;
        if input[3] != self.data.group_size {
            return Err(Error::Config(format!(
                "model.image.input depth {} differs from data.group_size {}",
                input[3], self.data.group_size
            )));
        }
        if let DataSource::Synth(s) = self.data_source() {
            s.validate()?;
            if s.volume[..3] != input[..3] {
                return Err(Error::Config(format!(
                    "data.synth.volume {:?} does not match model.image.input {:?}",
                    s.volume, input
                )));
            }
            if s.n_attr != self.model.tabular.n_attr {
                return Err(Error::Config(format!(
                    "data.synth.n_attr {} differs from model.tabular.n_attr {}",
                    s.n_attr, self.model.tabular.n_attr
                )));
            }
            if s.classes != self.model.classes {
                return Err(Error::Config(format!(
                    "data.synth.classes {} differs from model.classes {}",
                    s.classes, self.model.classes
                )));
            }
        }
        Ok(())
    }
}
