use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::decompose::{decompose_minibatch, DecompositionTerms, DecompositionVars};
use super::density::{recon_loglik, HALF_LN_2PI};
use super::objective::{objective, objective_var, ObjectiveConfig};
use crate::data::SeriesDataset;
use crate::nets::{reparameterize, Decoder, Encoder, Posterior, SequenceVae, VaeModel};
use crate::rng::{self, tag};
use crate::tensor::{AdamConfig, AdamState, Bound, Graph, Gradients, ParamStore, Tensor, Var};
use crate::{Error, Result, Scalar};

/// Rows per mega-batch in full-dataset evaluation.
const EVAL_BLOCK: usize = 512;

/// How each epoch's rows are grouped into minibatches.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum BatchOrder {
    /// One fresh permutation of all rows per epoch.
    Shuffled,
    /// Rows `[0, first)` and `[first, N)` are permuted separately and every
    /// batch takes half its rows from each; the smaller group wraps around.
    Interleaved { first: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip: f64,
    pub seed: u64,
    /// Posterior samples per window when reporting decomposition terms.
    pub eval_samples: usize,
    /// Full-dataset evaluation every this many epochs; 0 disables it.
    pub eval_every: usize,
    pub batch_order: BatchOrder,
    /// Minibatch losses above this abort training.
    pub max_loss: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            batch_size: 64,
            clip: 5.0,
            seed: 0,
            eval_samples: 8,
            eval_every: 1,
            batch_order: BatchOrder::Shuffled,
            max_loss: 1e6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, message: &str| Err(Error::Config {
            field: format!("train.{field}"),
            message: message.into(),
        });
        if !(self.adam.lr.is_finite() && self.adam.lr > 0.0) {
            return bad("lr", "must be positive");
        }
        if self.batch_size < 2 {
            return bad("batch", "must be at least 2");
        }
        if !(self.clip.is_finite() && self.clip >= 0.0) {
            return bad("clip", "must be >= 0");
        }
        if self.eval_samples == 0 {
            return bad("eval_samples", "must be positive");
        }
        Ok(())
    }
}

/// Per-epoch training record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based epoch number over the trainer's lifetime.
    pub epoch: usize,
    /// Mean minibatch loss.
    pub loss: f64,
    /// Mean of the minibatch estimates.
    pub minibatch: DecompositionTerms,
    pub full: Option<DecompositionTerms>,
    pub full_loss: Option<f64>,
}

/// Splits `n` rows into the minibatches of one epoch.
pub fn plan_batches(n: usize, batch: usize, order: &BatchOrder, seed: u64, epoch: usize) -> Result<Vec<Vec<usize>>> {
    if batch < 2 {
        return Err(Error::contract("batches need at least 2 rows"));
    }
    if n < 2 {
        return Err(Error::EmptyDataset(format!("{n} rows cannot form a batch")));
    }
    let mut r = rng::stream(seed, &[tag::PLAN, epoch as u64]);
    match *order {
        BatchOrder::Shuffled => {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut r);
            let mut batches: Vec<Vec<usize>> = perm.chunks(batch).map(<[usize]>::to_vec).collect();
            if batches.len() > 1 && batches.last().is_some_and(|b| b.len() < 2) {
                let tail = batches.pop().unwrap_or_default();
                batches.last_mut().expect("nonempty").extend(tail);
            }
            Ok(batches)
        }
        BatchOrder::Interleaved { first } => {
            if first == 0 || first >= n {
                return Err(Error::contract(format!("interleaving needs rows on both sides of {first} in {n}")));
            }
            let mut a: Vec<usize> = (0..first).collect();
            let mut b: Vec<usize> = (first..n).collect();
            a.shuffle(&mut r);
            b.shuffle(&mut r);
            let half = batch / 2;
            let count = a.len().max(b.len()).div_ceil(half);
            Ok((0..count)
                .map(|k| {
                    let mut rows: Vec<usize> = (0..half).map(|j| a[(k * half + j) % a.len()]).collect();
                    rows.extend((0..half).map(|j| b[(k * half + j) % b.len()]));
                    rows
                })
                .collect())
        }
    }
}

pub(crate) fn batch_noise<S: Scalar>(seed: u64, path: &[u64], rows: usize, dim: usize) -> Tensor<S> {
    let mut r = rng::stream(seed, path);
    let data = (0..rows * dim)
        .map(|_| {
            let e: f64 = StandardNormal.sample(&mut r);
            S::of(e)
        })
        .collect();
    Tensor::new(vec![rows, dim], data).expect("nonempty noise")
}

/// Forward pass of one ELBO evaluation on a batch.
pub struct ElboPass<'g, S> {
    pub post: Posterior<'g, S>,
    pub z: Var<'g, S>,
    pub x_hat: Var<'g, S>,
    pub recon: Var<'g, S>,
    pub terms: DecompositionVars<'g, S>,
    pub loss: Var<'g, S>,
}

impl<'g, S: Scalar> ElboPass<'g, S> {
    pub fn values(&self) -> DecompositionTerms {
        self.terms.values(self.recon.item().as_f64())
    }
}

/// Encodes `x`, reparameterizes with `noise`, decodes and assembles the
/// objective for `cfg`.
pub fn elbo_pass<'g, S: Scalar>(
    encoder: &Encoder,
    decoder: &Decoder,
    p: &Bound<'g, S>,
    x: Var<'g, S>,
    noise: &Tensor<S>,
    cfg: &ObjectiveConfig,
) -> Result<ElboPass<'g, S>> {
    let steps = x.shape()[1];
    let post = encoder.encode(p, x)?;
    let z = reparameterize(&post, noise)?;
    let x_hat = decoder.decode(p, z, steps)?;
    let recon = recon_loglik(x, x_hat)?;
    let terms = decompose_minibatch(z, &post, cfg.dataset_size)?;
    let loss = objective_var(cfg, recon, &terms);
    Ok(ElboPass {
        post,
        z,
        x_hat,
        recon,
        terms,
        loss,
    })
}

/// Full-dataset decomposition and objective of `x` with `samples` posterior
/// draws per window for the KL terms and one draw for the reconstruction.
pub fn evaluate_terms<S: Scalar, M: SequenceVae<S> + ?Sized>(
    model: &M,
    x: &Tensor<S>,
    cfg: &ObjectiveConfig,
    samples: usize,
    seed: u64,
) -> Result<(DecompositionTerms, f64)> {
    let n = x.shape()[0];
    if n < 2 {
        return Err(Error::EmptyDataset("evaluation needs at least 2 windows".into()));
    }
    if samples == 0 {
        return Err(Error::contract("evaluation needs at least one sample"));
    }
    let dim = model.config().latent_dim();
    let post = model.posterior(x)?;
    let blocks = n.div_ceil(EVAL_BLOCK);
    let mut terms = DecompositionTerms::default();
    let mut first_draw = Vec::with_capacity(n * dim);
    for k in 0..blocks {
        let rows: Vec<usize> = (k * n / blocks..(k + 1) * n / blocks).collect();
        let mean = post.mean.select_rows(&rows);
        let log_std = post.log_std.select_rows(&rows);
        for s in 0..samples {
            let noise = batch_noise::<S>(seed, &[tag::EVAL, k as u64, s as u64], rows.len(), dim);
            let g = Graph::new();
            let bp = Posterior {
                mean: g.constant(&mean),
                log_std: g.constant(&log_std),
            };
            let z = reparameterize(&bp, &noise)?;
            if s == 0 {
                first_draw.extend_from_slice(z.value().data());
            }
            let t = decompose_minibatch(z, &bp, n)?.values(0.0);
            terms.add_scaled(&t, rows.len() as f64 / (n * samples) as f64);
        }
    }
    let x_hat = model.reconstruct(&Tensor::new(vec![n, dim], first_draw)?, x.shape()[1])?;
    let sq: f64 = x
        .data()
        .iter()
        .zip(x_hat.data())
        .map(|(&a, &b)| {
            let e = (a - b).as_f64();
            e * e
        })
        .sum();
    let per_window = (x.len() / n) as f64;
    terms.recon_loglik = -0.5 * sq / n as f64 - per_window * HALF_LN_2PI;
    if !terms.is_finite() {
        return Err(Error::Numeric {
            node: 0,
            op: "evaluation".into(),
        });
    }
    let loss = objective(cfg, &terms)?;
    Ok((terms, loss))
}

/// Clips and applies one Adam update.
pub(crate) fn optimizer_step<S: Scalar>(
    store: &mut ParamStore<S>,
    adam: &mut AdamState<S>,
    mut grads: Gradients<S>,
    cfg: &TrainConfig,
) -> Result<()> {
    if cfg.clip > 0.0 {
        grads.clip_global_norm(S::of(cfg.clip));
    }
    adam.step(store, &grads, &cfg.adam)
}

/// Guards a minibatch loss against divergence.
pub(crate) fn check_loss(loss: f64, epoch: usize, batch: usize, max_loss: f64) -> Result<()> {
    if !loss.is_finite() || loss > max_loss {
        return Err(Error::Divergence {
            epoch,
            reason: format!("minibatch {batch} loss {loss} exceeds {max_loss}"),
        });
    }
    Ok(())
}

/// Parameters and optimizer state to roll back to after a failed epoch.
pub(crate) struct Snapshot<S> {
    store: ParamStore<S>,
    adam: AdamState<S>,
}

impl<S: Scalar> Snapshot<S> {
    pub(crate) fn take(store: &ParamStore<S>, adam: &AdamState<S>) -> Self {
        Snapshot {
            store: store.clone(),
            adam: adam.clone(),
        }
    }

    pub(crate) fn restore(self, store: &mut ParamStore<S>, adam: &mut AdamState<S>) {
        *store = self.store;
        *adam = self.adam;
    }
}

/// Resumable trainer for a [`VaeModel`]. Every random draw derives from
/// `(seed, epoch, batch)`, so `n` epochs followed by `m` more reproduce an
/// uninterrupted `n + m` epoch run exactly.
#[derive(Clone, Debug)]
pub struct IndividualTrainer<S> {
    pub model: VaeModel<S>,
    pub adam: AdamState<S>,
    pub objective: ObjectiveConfig,
    pub train: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
}

impl<S: Scalar> IndividualTrainer<S> {
    pub fn new(model: VaeModel<S>, objective: ObjectiveConfig, train: TrainConfig) -> Result<Self> {
        objective.validate()?;
        train.validate()?;
        let adam = AdamState::new(&model.store);
        Ok(IndividualTrainer {
            model,
            adam,
            objective,
            train,
            epoch: 0,
        })
    }

    /// Runs `epochs` more epochs. On failure the model and optimizer are
    /// restored to the end of the last completed epoch.
    pub fn run(&mut self, data: &SeriesDataset, epochs: usize) -> Result<Vec<EpochLog>> {
        if epochs == 0 {
            return Ok(Vec::new());
        }
        if data.d != self.model.config.input_dim {
            return Err(Error::contract(format!(
                "model expects {} channels, data has {}",
                self.model.config.input_dim, data.d
            )));
        }
        let x = data.tensor::<S>()?;
        let mut logs = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            let snapshot = Snapshot::take(&self.model.store, &self.adam);
            match self.run_epoch(&x) {
                Ok(log) => logs.push(log),
                Err(e) => {
                    snapshot.restore(&mut self.model.store, &mut self.adam);
                    return Err(e);
                }
            }
        }
        Ok(logs)
    }

    fn run_epoch(&mut self, x: &Tensor<S>) -> Result<EpochLog> {
        let n = x.shape()[0];
        let epoch = self.epoch + 1;
        let dim = self.model.config.latent_dim();
        let batches = plan_batches(n, self.train.batch_size, &self.train.batch_order, self.train.seed, epoch)?;
        let mut loss_sum = 0.0;
        let mut terms = DecompositionTerms::default();
        let w = 1.0 / batches.len() as f64;
        for (b, rows) in batches.iter().enumerate() {
            let noise = batch_noise::<S>(self.train.seed, &[tag::NOISE, epoch as u64, b as u64], rows.len(), dim);
            let g = Graph::new();
            let p = g.bind(&self.model.store);
            let xb = g.constant_owned(x.select_rows(rows));
            let pass = elbo_pass(&self.model.encoder, &self.model.decoder, &p, xb, &noise, &self.objective)?;
            let loss = pass.loss.item().as_f64();
            check_loss(loss, epoch, b, self.train.max_loss)?;
            loss_sum += loss;
            terms.add_scaled(&pass.values(), w);
            let grads = g.backward(pass.loss)?;
            optimizer_step(&mut self.model.store, &mut self.adam, grads, &self.train)?;
        }
        let (full, full_loss) = if self.train.eval_every > 0 && epoch % self.train.eval_every == 0 {
            let (t, l) = evaluate_terms(&self.model, x, &self.objective, self.train.eval_samples, self.train.seed)?;
            (Some(t), Some(l))
        } else {
            (None, None)
        };
        self.epoch = epoch;
        Ok(EpochLog {
            epoch,
            loss: loss_sum * w,
            minibatch: terms,
            full,
            full_loss,
        })
    }
}

/// Trains `model` for `epochs` epochs from a fresh optimizer.
pub fn train_individual<S: Scalar>(
    model: VaeModel<S>,
    data: &SeriesDataset,
    objective: ObjectiveConfig,
    train: TrainConfig,
    epochs: usize,
) -> Result<(VaeModel<S>, Vec<EpochLog>)> {
    let mut trainer = IndividualTrainer::new(model, objective, train)?;
    let logs = trainer.run(data, epochs)?;
    Ok((trainer.model, logs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::LatentSpec;
    use crate::nets::ModelConfig;

    fn toy_data(n: usize, t: usize) -> SeriesDataset {
        let windows: Vec<f64> = (0..n * t)
            .map(|i| {
                let (row, step) = (i / t, i % t);
                (row as f64 * 0.37).sin() * (step as f64 * 0.9 + row as f64).cos()
            })
            .collect();
        SeriesDataset::new(t, 1, windows, (0..n).map(|i| i.to_string()).collect(), vec![None; n], vec![0; n]).unwrap()
    }

    fn model(seed: u64) -> VaeModel<f64> {
        VaeModel::new(ModelConfig::new(1, 6, LatentSpec::single(3).unwrap()).unwrap(), seed)
    }

    #[test]
    fn shuffled_plan_covers_rows_once() {
        let batches = plan_batches(21, 4, &BatchOrder::Shuffled, 3, 1).unwrap();
        let mut all: Vec<usize> = batches.concat();
        all.sort();
        assert_eq!(all, (0..21).collect::<Vec<_>>());
        assert!(batches.iter().all(|b| b.len() >= 2));
        assert_ne!(batches, plan_batches(21, 4, &BatchOrder::Shuffled, 3, 2).unwrap());
    }

    #[test]
    fn interleaved_plan_is_balanced() {
        let batches = plan_batches(30, 6, &BatchOrder::Interleaved { first: 10 }, 0, 1).unwrap();
        assert_eq!(batches.len(), 7);
        for b in &batches {
            assert_eq!(b.iter().filter(|&&r| r < 10).count(), 3);
            assert_eq!(b.iter().filter(|&&r| r >= 10).count(), 3);
        }
        let mut second: Vec<usize> = batches.iter().flat_map(|b| b[3..].to_vec()).collect();
        second.sort();
        second.dedup();
        assert_eq!(second.len(), 20);
    }

    #[test]
    fn zero_epochs_leave_model_unchanged() {
        let data = toy_data(8, 5);
        let m = model(1);
        let (out, logs) = train_individual(m.clone(), &data, ObjectiveConfig::dts_default(8), TrainConfig::default(), 0).unwrap();
        assert_eq!(out, m);
        assert!(logs.is_empty());
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let data = toy_data(12, 6);
        let train = TrainConfig {
            batch_size: 4,
            eval_every: 0,
            adam: AdamConfig { lr: 1e-2, ..AdamConfig::default() },
            ..TrainConfig::default()
        };
        let cfg = ObjectiveConfig::dts_default(12);
        let mut a = IndividualTrainer::new(model(2), cfg.clone(), train.clone()).unwrap();
        a.run(&data, 2).unwrap();
        a.run(&data, 1).unwrap();
        let mut b = IndividualTrainer::new(model(2), cfg, train).unwrap();
        b.run(&data, 3).unwrap();
        assert_eq!(a.model.store, b.model.store);
        assert_eq!(a.adam, b.adam);
    }

    #[test]
    fn evaluation_is_deterministic_and_identity_holds() {
        let data = toy_data(40, 6);
        let m = model(4);
        let x = data.tensor::<f64>().unwrap();
        let cfg = ObjectiveConfig::dts_default(40);
        let (t1, l1) = evaluate_terms(&m, &x, &cfg, 4, 7).unwrap();
        let (t2, l2) = evaluate_terms(&m, &x, &cfg, 4, 7).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(l1, l2);
        let post = m.posterior(&x).unwrap();
        let kl = crate::elbo::kl_diag_gaussian_tensor(&post).data().iter().sum::<f64>() / 40.0;
        assert!((t1.kl() - kl).abs() <= 0.05 * kl.max(1.0), "{} vs {kl}", t1.kl());
    }

    #[test]
    fn divergence_restores_last_good_state() {
        let data = toy_data(8, 5);
        let train = TrainConfig {
            batch_size: 4,
            eval_every: 0,
            max_loss: -1e9,
            ..TrainConfig::default()
        };
        let mut t = IndividualTrainer::new(model(5), ObjectiveConfig::dts_default(8), train).unwrap();
        let before = t.model.clone();
        let err = t.run(&data, 1).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
        assert_eq!(t.model, before);
        assert_eq!(t.epoch, 0);
    }
}
