use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::config::RunConfig;
use crate::data::NormStats;
use crate::elbo::IndividualTrainer;
use crate::group::{AdaptTrainer, GroupModel};
use crate::nets::VaeModel;
use crate::tensor::{AdamState, ParamStore, Tensor};
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Individual,
    Group,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Individual => "individual",
            ModelKind::Group => "group",
        })
    }
}

/// A parameter array; `values` nests one JSON array per dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamRecord {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

/// Everything needed to rebuild and resume a model. Random draws are keyed
/// by `(config.train.seed, epoch, batch)`, so the seed and epoch counter are
/// the complete RNG state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub kind: ModelKind,
    /// Seconds since the Unix epoch.
    pub saved_at: u64,
    pub config: RunConfig,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub num_classes: Option<usize>,
    pub params: Vec<NamedArray>,
    pub adam: AdamRecord,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub norm_stats: Option<NormStats>,
    pub seed: u64,
    pub epoch: usize,
}

fn nest(shape: &[usize], data: &[f64]) -> Value {
    match shape {
        [] | [_] => Value::Array(data.iter().map(|&v| Value::from(v)).collect()),
        [_, rest @ ..] => {
            let stride: usize = rest.iter().product();
            Value::Array(data.chunks(stride).map(|c| nest(rest, c)).collect())
        }
    }
}

fn flatten(name: &str, shape: &[usize], value: &Value, out: &mut Vec<f64>) -> Result<()> {
    let bad = || Error::Integrity(format!("parameter {name}: values do not match shape {shape:?}"));
    let items = value.as_array().ok_or_else(bad)?;
    match shape {
        [] => Err(bad()),
        [n] => {
            if items.len() != *n {
                return Err(bad());
            }
            for v in items {
                out.push(v.as_f64().ok_or_else(bad)?);
            }
            Ok(())
        }
        [n, rest @ ..] => {
            if items.len() != *n {
                return Err(bad());
            }
            items.iter().try_for_each(|v| flatten(name, rest, v, out))
        }
    }
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

impl Checkpoint {
    fn from_parts(
        kind: ModelKind,
        config: &RunConfig,
        num_classes: Option<usize>,
        store: &ParamStore<f64>,
        adam: &AdamState<f64>,
        norm_stats: Option<NormStats>,
        epoch: usize,
    ) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            kind,
            saved_at: now(),
            config: config.clone(),
            num_classes,
            params: store
                .iter()
                .map(|p| NamedArray {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                    values: nest(p.value.shape(), p.value.data()),
                })
                .collect(),
            adam: AdamRecord {
                step: adam.step,
                m: adam.m.clone(),
                v: adam.v.clone(),
            },
            norm_stats,
            seed: config.train.seed,
            epoch,
        }
    }

    pub fn from_individual(t: &IndividualTrainer<f64>, config: &RunConfig, norm_stats: Option<NormStats>) -> Self {
        Self::from_parts(ModelKind::Individual, config, None, &t.model.store, &t.adam, norm_stats, t.epoch)
    }

    pub fn from_group(t: &AdaptTrainer<f64>, config: &RunConfig, norm_stats: Option<NormStats>) -> Self {
        Self::from_parts(
            ModelKind::Group,
            config,
            Some(t.model.num_classes),
            &t.model.store,
            &t.adam,
            norm_stats,
            t.epoch,
        )
    }

    pub fn expect_kind(&self, kind: ModelKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Integrity(format!(
                "checkpoint holds a {} model, this command needs {kind}",
                self.kind
            )));
        }
        Ok(())
    }

    fn fill(&self, store: &mut ParamStore<f64>) -> Result<()> {
        let values = self
            .params
            .iter()
            .map(|p| {
                let mut data = Vec::with_capacity(p.shape.iter().product());
                flatten(&p.name, &p.shape, &p.values, &mut data)?;
                Ok((p.name.clone(), Tensor::new(p.shape.clone(), data).map_err(|e| Error::Integrity(e.to_string()))?))
            })
            .collect::<Result<Vec<_>>>()?;
        store.load_values(values)
    }

    fn adam_state(&self, store: &ParamStore<f64>) -> Result<AdamState<f64>> {
        let aligned = |moments: &[Vec<f64>]| {
            moments.len() == store.len() && moments.iter().zip(store.iter()).all(|(m, p)| m.len() == p.value.len())
        };
        if !aligned(&self.adam.m) || !aligned(&self.adam.v) {
            return Err(Error::Integrity("optimizer moments do not match the parameters".into()));
        }
        Ok(AdamState {
            m: self.adam.m.clone(),
            v: self.adam.v.clone(),
            step: self.adam.step,
        })
    }

    pub fn vae_model(&self) -> Result<VaeModel<f64>> {
        self.expect_kind(ModelKind::Individual)?;
        let mut model = VaeModel::new(self.config.model_config()?, self.config.train.seed);
        self.fill(&mut model.store)?;
        Ok(model)
    }

    pub fn group_model(&self) -> Result<GroupModel<f64>> {
        self.expect_kind(ModelKind::Group)?;
        let classes = self
            .num_classes
            .ok_or_else(|| Error::Integrity("group checkpoint lacks num_classes".into()))?;
        let mut model = GroupModel::new(self.config.model_config()?, classes, self.config.train.seed)?;
        self.fill(&mut model.store)?;
        Ok(model)
    }

    /// Trainer positioned after the stored epoch, with `config`'s objective
    /// and optimizer settings.
    pub fn individual_trainer(&self, dataset_size: usize) -> Result<IndividualTrainer<f64>> {
        let model = self.vae_model()?;
        let mut t = IndividualTrainer::new(model, self.config.objective(dataset_size)?, self.config.train_config())?;
        t.adam = self.adam_state(&t.model.store)?;
        t.epoch = self.epoch;
        Ok(t)
    }

    pub fn adapt_trainer(&self, dataset_size: usize, source_only: bool) -> Result<AdaptTrainer<f64>> {
        let model = self.group_model()?;
        let mut t = AdaptTrainer::new(model, self.config.adapt_config(dataset_size, source_only)?)?;
        t.adam = self.adam_state(&t.model.store)?;
        t.epoch = self.epoch;
        Ok(t)
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string(ckpt).map_err(|e| Error::Integrity(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads a checkpoint, checking the format version before anything else.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse = |e: serde_json::Error| Error::Parse {
        path: path.display().to_string(),
        row: Some(e.line()),
        message: e.to_string(),
    };
    let doc: Value = serde_json::from_str(&text).map_err(parse)?;
    let version = doc
        .get("version")
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::Parse {
            path: path.display().to_string(),
            row: None,
            message: "missing format version".into(),
        })?;
    if version > u64::from(CHECKPOINT_VERSION) {
        return Err(Error::Integrity(format!(
            "checkpoint format {version} is newer than supported format {CHECKPOINT_VERSION}"
        )));
    }
    if version != u64::from(CHECKPOINT_VERSION) {
        return Err(Error::Integrity(format!("unsupported checkpoint format {version}")));
    }
    serde_json::from_value(doc).map_err(parse)
}
