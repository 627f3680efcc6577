use serde::{Deserialize, Serialize};

use super::model::{adversarial_losses, group_elbo, AdaptBatch, GroupModel};
use crate::data::SeriesDataset;
use crate::elbo::{
    batch_noise, check_loss, evaluate_terms, optimizer_step, plan_batches, BatchOrder, DecompositionTerms, ObjectiveConfig,
    Snapshot, TrainConfig,
};
use crate::rng::tag;
use crate::tensor::{AdamState, Graph, Tensor};
use crate::{Error, Result, Scalar};

/// Gradient-reversal weight over training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum LambdaSchedule {
    Constant,
    /// `λ·(2/(1 + e^{−10p}) − 1)` with progress `p` reaching 1 after
    /// `epochs` epochs.
    Warmup { epochs: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptConfig {
    pub objective: ObjectiveConfig,
    pub train: TrainConfig,
    pub lambda: f64,
    pub schedule: LambdaSchedule,
    /// Weight of the two task losses relative to the ELBO.
    pub w_cls: f64,
    /// Weight of the two adversarial losses.
    pub w_adv: f64,
    /// Keep both classifiers at their current values.
    pub freeze_classifiers: bool,
    /// Baseline: train on labeled source rows only with the class task and
    /// no domain branches.
    pub source_only: bool,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            objective: ObjectiveConfig::dts_default(1),
            train: TrainConfig::default(),
            lambda: 1.0,
            schedule: LambdaSchedule::Constant,
            w_cls: 1.0,
            w_adv: 1.0,
            freeze_classifiers: false,
            source_only: false,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        self.objective.validate()?;
        self.train.validate()?;
        let bad = |field: &str, message: String| Err(Error::Config {
            field: format!("train.{field}"),
            message,
        });
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad("lambda", format!("must be finite and >= 0, got {}", self.lambda));
        }
        if !(self.w_cls.is_finite() && self.w_cls >= 0.0) {
            return bad("w_cls", format!("must be finite and >= 0, got {}", self.w_cls));
        }
        if !(self.w_adv.is_finite() && self.w_adv >= 0.0) {
            return bad("w_adv", format!("must be finite and >= 0, got {}", self.w_adv));
        }
        if self.schedule == (LambdaSchedule::Warmup { epochs: 0 }) {
            return bad("schedule", "warm-up needs at least one epoch".into());
        }
        Ok(())
    }

    /// λ after `step` of `per_epoch` minibatch steps per epoch.
    pub fn lambda_at(&self, step: usize, per_epoch: usize) -> f64 {
        match self.schedule {
            LambdaSchedule::Constant => self.lambda,
            LambdaSchedule::Warmup { epochs } => {
                let p = (step as f64 / (epochs * per_epoch) as f64).min(1.0);
                self.lambda * (2.0 / (1.0 + (-10.0 * p).exp()) - 1.0)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptEpochLog {
    pub epoch: usize,
    /// Mean combined minibatch loss.
    pub loss: f64,
    /// Mean ELBO-objective part of the loss.
    pub elbo_loss: f64,
    pub task_m: Option<f64>,
    pub task_n: Option<f64>,
    pub adv_m: Option<f64>,
    pub adv_n: Option<f64>,
    /// λ at the last step of the epoch.
    pub lambda: f64,
    pub minibatch: DecompositionTerms,
    pub full: Option<DecompositionTerms>,
}

#[derive(Default)]
struct Mean {
    sum: f64,
    count: usize,
}

impl Mean {
    fn add(&mut self, v: Option<f64>) {
        if let Some(v) = v {
            self.sum += v;
            self.count += 1;
        }
    }

    fn get(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }
}

/// Resumable adversarial adaptation trainer. Source rows come first in the
/// training set and batches interleave source and target rows equally.
#[derive(Clone, Debug)]
pub struct AdaptTrainer<S> {
    pub model: GroupModel<S>,
    pub adam: AdamState<S>,
    pub cfg: AdaptConfig,
    /// Completed epochs.
    pub epoch: usize,
}

impl<S: Scalar> AdaptTrainer<S> {
    pub fn new(mut model: GroupModel<S>, cfg: AdaptConfig) -> Result<Self> {
        cfg.validate()?;
        for id in model.classifier_params() {
            model.store.set_frozen(id, cfg.freeze_classifiers);
        }
        let adam = AdamState::new(&model.store);
        Ok(AdaptTrainer {
            model,
            adam,
            cfg,
            epoch: 0,
        })
    }

    /// Training rows: the source set relabeled to domain 0, then (unless
    /// training the source-only baseline) the target set as domain 1 with
    /// its labels dropped.
    pub fn training_set(&self, source: &SeriesDataset, target: &SeriesDataset) -> Result<SeriesDataset> {
        let mut src = source.clone();
        src.domains.iter_mut().for_each(|d| *d = 0);
        if let Some(i) = src.labels.iter().position(Option::is_none) {
            return Err(Error::contract(format!("source row {} has no class label", src.ids[i])));
        }
        if let Some(&bad) = src.labels.iter().flatten().find(|&&l| l >= self.model.num_classes) {
            return Err(Error::contract(format!(
                "label {bad} out of range for {} classes",
                self.model.num_classes
            )));
        }
        if self.cfg.source_only {
            return Ok(src);
        }
        let mut tgt = target.clone();
        tgt.domains.iter_mut().for_each(|d| *d = 1);
        tgt.labels.iter_mut().for_each(|l| *l = None);
        src.concat(&tgt)
    }

    pub fn run(&mut self, source: &SeriesDataset, target: &SeriesDataset, epochs: usize) -> Result<Vec<AdaptEpochLog>> {
        if epochs == 0 {
            return Ok(Vec::new());
        }
        let data = self.training_set(source, target)?;
        if data.d != self.model.config.input_dim {
            return Err(Error::contract(format!(
                "model expects {} channels, data has {}",
                self.model.config.input_dim, data.d
            )));
        }
        let order = if self.cfg.source_only {
            BatchOrder::Shuffled
        } else {
            BatchOrder::Interleaved { first: source.len() }
        };
        let x = data.tensor::<S>()?;
        let mut logs = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            let snapshot = Snapshot::take(&self.model.store, &self.adam);
            match self.run_epoch(&data, &x, &order) {
                Ok(log) => logs.push(log),
                Err(e) => {
                    snapshot.restore(&mut self.model.store, &mut self.adam);
                    return Err(e);
                }
            }
        }
        Ok(logs)
    }

    fn run_epoch(&mut self, data: &SeriesDataset, x: &Tensor<S>, order: &BatchOrder) -> Result<AdaptEpochLog> {
        let epoch = self.epoch + 1;
        let train = self.cfg.train.clone();
        let dim = self.model.config.latent_dim();
        let batches = plan_batches(data.len(), train.batch_size, order, train.seed, epoch)?;
        let per_epoch = batches.len();
        let w = 1.0 / per_epoch as f64;
        let (mut loss_sum, mut elbo_sum) = (0.0, 0.0);
        let (mut task_m, mut task_n, mut adv_m, mut adv_n) = (Mean::default(), Mean::default(), Mean::default(), Mean::default());
        let mut terms = DecompositionTerms::default();
        let mut lambda = self.cfg.lambda;
        for (b, rows) in batches.iter().enumerate() {
            lambda = self.cfg.lambda_at(self.epoch * per_epoch + b, per_epoch);
            let annotations = AdaptBatch::from_rows(data, rows)?;
            let noise = batch_noise::<S>(train.seed, &[tag::NOISE, epoch as u64, b as u64], rows.len(), dim);
            let g = Graph::new();
            let p = g.bind(&self.model.store);
            let xb = g.constant_owned(x.select_rows(rows));
            let elbo = group_elbo(&self.model, &p, xb, &noise, &self.cfg.objective)?;
            let ce = adversarial_losses(&self.model, &p, elbo.pass.z, &annotations, lambda)?;
            let loss = if self.cfg.source_only {
                match ce.task_m {
                    Some(m) => elbo.pass.loss + m.scale(S::of(self.cfg.w_cls)),
                    None => elbo.pass.loss,
                }
            } else {
                elbo.pass.loss + ce.combined(self.cfg.w_cls, self.cfg.w_adv)
            };
            let value = loss.item().as_f64();
            check_loss(value, epoch, b, train.max_loss)?;
            loss_sum += value;
            elbo_sum += elbo.pass.loss.item().as_f64();
            terms.add_scaled(&elbo.pass.values(), w);
            let item = |v: Option<crate::tensor::Var<'_, S>>| v.map(|v| v.item().as_f64());
            task_m.add(item(ce.task_m));
            if !self.cfg.source_only {
                task_n.add(Some(ce.task_n.item().as_f64()));
                adv_m.add(Some(ce.adv_m.item().as_f64()));
                adv_n.add(item(ce.adv_n));
            }
            let grads = g.backward(loss)?;
            optimizer_step(&mut self.model.store, &mut self.adam, grads, &train)?;
        }
        let full = if train.eval_every > 0 && epoch % train.eval_every == 0 {
            Some(evaluate_terms(&self.model, x, &self.cfg.objective, train.eval_samples, train.seed)?.0)
        } else {
            None
        };
        self.epoch = epoch;
        Ok(AdaptEpochLog {
            epoch,
            loss: loss_sum * w,
            elbo_loss: elbo_sum * w,
            task_m: task_m.get(),
            task_n: task_n.get(),
            adv_m: adv_m.get(),
            adv_n: adv_n.get(),
            lambda,
            minibatch: terms,
            full,
        })
    }
}

/// Adapts `model` from labeled `source` to unlabeled `target` for `epochs`
/// epochs from a fresh optimizer.
pub fn adapt_train<S: Scalar>(
    model: GroupModel<S>,
    source: &SeriesDataset,
    target: &SeriesDataset,
    cfg: AdaptConfig,
    epochs: usize,
) -> Result<(GroupModel<S>, Vec<AdaptEpochLog>)> {
    let mut trainer = AdaptTrainer::new(model, cfg)?;
    let logs = trainer.run(source, target, epochs)?;
    Ok((trainer.model, logs))
}
