use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{Schema, SynthSpec};
use crate::elbo::{BatchOrder, ObjectiveConfig, ObjectiveMode, TrainConfig};
use crate::group::{AdaptConfig, LambdaSchedule, LatentSpec};
use crate::nets::ModelConfig;
use crate::tensor::AdamConfig;
use crate::{Error, Result};

fn config_err(field: &str, message: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub latent: usize,
    /// Segment sizes; a single segment of `latent` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub segments: Option<Vec<usize>>,
    pub hidden: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            latent: 12,
            segments: None,
            hidden: 64,
        }
    }
}

impl ModelSection {
    pub fn segment_sizes(&self) -> Vec<usize> {
        self.segments.clone().unwrap_or_else(|| vec![self.latent])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveSection {
    pub mode: ObjectiveMode,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for ObjectiveSection {
    fn default() -> Self {
        ObjectiveSection {
            mode: ObjectiveMode::Dts,
            alpha: 4.0,
            beta: 4.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub clip: f64,
    pub lambda: f64,
    pub w_cls: f64,
    pub w_adv: f64,
    /// Epochs of λ warm-up; constant λ when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warmup_epochs: Option<usize>,
    pub eval_samples: usize,
    pub eval_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            lr: 1e-3,
            batch: 64,
            epochs: 10,
            seed: 0,
            clip: 5.0,
            lambda: 1.0,
            w_cls: 1.0,
            w_adv: 1.0,
            warmup_epochs: None,
            eval_samples: 8,
            eval_every: 1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub factors: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

/// Everything a run needs besides its data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema: Schema,
    pub model: ModelSection,
    pub objective: ObjectiveSection,
    pub train: TrainSection,
    pub paths: PathsSection,
    /// Generator settings for `generate`; its window length is `schema.t`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema: Schema { t: 128, d: 1, k: 0 },
            model: ModelSection::default(),
            objective: ObjectiveSection::default(),
            train: TrainSection::default(),
            paths: PathsSection::default(),
            synth: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            row: Some(e.line()),
            message: e.to_string(),
        })
    }

    /// Checks every field; the first failure names the offending field.
    pub fn validate(&self) -> Result<()> {
        if self.schema.t == 0 {
            return Err(config_err("schema.t", "must be positive"));
        }
        if self.schema.d == 0 {
            return Err(config_err("schema.d", "must be positive"));
        }
        if self.model.latent == 0 {
            return Err(config_err("model.latent", "must be positive"));
        }
        if self.model.hidden == 0 {
            return Err(config_err("model.hidden", "must be positive"));
        }
        let sizes = self.model.segment_sizes();
        if sizes.is_empty() || sizes.contains(&0) {
            return Err(config_err("model.segments", "sizes must be positive"));
        }
        if sizes.iter().sum::<usize>() != self.model.latent {
            return Err(config_err(
                "model.segments",
                format!("sizes {sizes:?} do not sum to latent {}", self.model.latent),
            ));
        }
        self.objective(1)?;
        let t = &self.train;
        if !(t.lr.is_finite() && t.lr > 0.0) {
            return Err(config_err("train.lr", format!("must be positive, got {}", t.lr)));
        }
        if t.batch < 2 {
            return Err(config_err("train.batch", format!("must be at least 2, got {}", t.batch)));
        }
        if !(t.clip.is_finite() && t.clip >= 0.0) {
            return Err(config_err("train.clip", format!("must be >= 0, got {}", t.clip)));
        }
        if !(t.lambda.is_finite() && t.lambda >= 0.0) {
            return Err(config_err("train.lambda", format!("must be >= 0, got {}", t.lambda)));
        }
        if !(t.w_cls.is_finite() && t.w_cls >= 0.0) {
            return Err(config_err("train.w_cls", format!("must be >= 0, got {}", t.w_cls)));
        }
        if !(t.w_adv.is_finite() && t.w_adv >= 0.0) {
            return Err(config_err("train.w_adv", format!("must be >= 0, got {}", t.w_adv)));
        }
        if t.warmup_epochs == Some(0) {
            return Err(config_err("train.warmup_epochs", "must be positive"));
        }
        if t.eval_samples == 0 {
            return Err(config_err("train.eval_samples", "must be positive"));
        }
        if let Some(s) = &self.synth {
            s.validate().map_err(|e| config_err("synth", e.to_string()))?;
        }
        Ok(())
    }

    pub fn latent_spec(&self) -> Result<LatentSpec> {
        LatentSpec::from_sizes(&self.model.segment_sizes()).map_err(|e| config_err("model.segments", e.to_string()))
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        ModelConfig::new(self.schema.d, self.model.hidden, self.latent_spec()?)
    }

    pub fn objective(&self, dataset_size: usize) -> Result<ObjectiveConfig> {
        let o = &self.objective;
        ObjectiveConfig::new(o.mode, o.alpha, o.beta, dataset_size)
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            adam: AdamConfig {
                lr: t.lr,
                ..AdamConfig::default()
            },
            batch_size: t.batch,
            clip: t.clip,
            seed: t.seed,
            eval_samples: t.eval_samples,
            eval_every: t.eval_every,
            batch_order: BatchOrder::Shuffled,
            ..TrainConfig::default()
        }
    }

    pub fn adapt_config(&self, dataset_size: usize, source_only: bool) -> Result<AdaptConfig> {
        let t = &self.train;
        Ok(AdaptConfig {
            objective: self.objective(dataset_size)?,
            train: self.train_config(),
            lambda: t.lambda,
            schedule: match t.warmup_epochs {
                Some(epochs) => LambdaSchedule::Warmup { epochs },
                None => LambdaSchedule::Constant,
            },
            w_cls: t.w_cls,
            w_adv: t.w_adv,
            freeze_classifiers: false,
            source_only,
        })
    }

    /// Generator settings with the window length taken from the schema.
    pub fn synth_spec(&self) -> SynthSpec {
        SynthSpec {
            window: self.schema.t,
            ..self.synth.clone().unwrap_or_default()
        }
    }
}
