use crate::data::SeriesDataset;
use crate::elbo::{elbo_pass, kl_diag_gaussian, ElboPass, ObjectiveConfig};
use crate::nets::{cross_entropy, Classifier, Decoder, Encoder, ModelConfig, SequenceVae};
use crate::rng::{self, tag};
use crate::tensor::{Bound, Graph, ParamId, ParamStore, Tensor, Var};
use crate::{Error, Result, Scalar};

use super::latent::{segment_columns, split_latent};

/// Dual-segment model: shared encoder trunk with per-segment heads, a
/// decoder over the concatenated latent, a class classifier `C_m` reading
/// the first segment (`z_y`) and a domain classifier `C_n` reading the
/// second (`z_d`).
///
/// The adversarial branches apply each classifier to the *other* segment,
/// so both segments must have the same width.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupModel<S> {
    pub config: ModelConfig,
    pub num_classes: usize,
    pub store: ParamStore<S>,
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub class_head: Classifier,
    pub domain_head: Classifier,
}

impl<S: Scalar> GroupModel<S> {
    /// Encoder and decoder are initialized exactly as a [`crate::nets::VaeModel`]
    /// built from the same config and seed; the classifiers follow.
    pub fn new(config: ModelConfig, num_classes: usize, seed: u64) -> Result<Self> {
        let sizes = config.latent.sizes();
        if sizes.len() != 2 || sizes[0] != sizes[1] {
            return Err(Error::contract(format!(
                "group model needs two equal latent segments, got {sizes:?}"
            )));
        }
        if num_classes < 2 {
            return Err(Error::contract(format!("class head needs at least 2 classes, got {num_classes}")));
        }
        let mut rng = rng::stream(seed, &[tag::INIT]);
        let mut store = ParamStore::new();
        let encoder = Encoder::new(&mut store, &config, &mut rng);
        let decoder = Decoder::new(&mut store, &config, &mut rng);
        let class_head = Classifier::new(&mut store, "class_head", sizes[0], num_classes, &mut rng);
        let domain_head = Classifier::new(&mut store, "domain_head", sizes[1], 2, &mut rng);
        Ok(GroupModel {
            config,
            num_classes,
            store,
            encoder,
            decoder,
            class_head,
            domain_head,
        })
    }

    pub fn classifier_params(&self) -> [ParamId; 4] {
        [
            self.class_head.linear.w,
            self.class_head.linear.b,
            self.domain_head.linear.w,
            self.domain_head.linear.b,
        ]
    }

    /// Number of leading store entries that belong to the encoder/decoder.
    pub fn vae_param_count(&self) -> usize {
        self.class_head.linear.w.0
    }

    /// Class predictions of the class head on the posterior means of `z_y`.
    pub fn predict_classes(&self, x: &Tensor<S>) -> Result<Vec<usize>> {
        let means = self.posterior(x)?.mean;
        let range = self.config.latent.ranges()[0].clone();
        let g = Graph::new();
        let p = g.bind_constant(&self.store);
        let logits = self
            .class_head
            .classify(&p, g.constant_owned(segment_columns(&means, range)))?
            .value();
        let k = self.num_classes;
        Ok(logits
            .data()
            .chunks(k)
            .map(|row| (0..k).fold(0, |best, j| if row[j] > row[best] { j } else { best }))
            .collect())
    }

    /// Fraction of labeled rows of `data` the class head gets right; `None`
    /// when no row is labeled.
    pub fn class_accuracy(&self, data: &SeriesDataset) -> Result<Option<f64>> {
        let rows: Vec<usize> = (0..data.len()).filter(|&i| data.labels[i].is_some()).collect();
        if rows.is_empty() {
            return Ok(None);
        }
        let x = data.subset(&rows).tensor::<S>()?;
        let pred = self.predict_classes(&x)?;
        let hits = rows.iter().zip(&pred).filter(|(&i, &c)| data.labels[i] == Some(c)).count();
        Ok(Some(hits as f64 / rows.len() as f64))
    }

    pub fn cast<T: Scalar>(&self) -> GroupModel<T> {
        GroupModel {
            config: self.config.clone(),
            num_classes: self.num_classes,
            store: self.store.cast(),
            encoder: self.encoder.clone(),
            decoder: self.decoder.clone(),
            class_head: self.class_head.clone(),
            domain_head: self.domain_head.clone(),
        }
    }
}

impl<S: Scalar> SequenceVae<S> for GroupModel<S> {
    fn config(&self) -> &ModelConfig {
        &self.config
    }
    fn store(&self) -> &ParamStore<S> {
        &self.store
    }
    fn encoder(&self) -> &Encoder {
        &self.encoder
    }
    fn decoder(&self) -> &Decoder {
        &self.decoder
    }
}

/// Row annotations of an adaptation minibatch: which rows are labeled
/// source rows, their class labels and every row's domain.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptBatch {
    pub source_rows: Vec<usize>,
    pub labels: Vec<usize>,
    pub domains: Vec<usize>,
}

impl AdaptBatch {
    /// Annotations of `rows` of `data`; rows of domain 0 must be labeled and
    /// labels of other domains are ignored.
    pub fn from_rows(data: &SeriesDataset, rows: &[usize]) -> Result<Self> {
        let mut source_rows = Vec::new();
        let mut labels = Vec::new();
        let mut domains = Vec::with_capacity(rows.len());
        for (pos, &r) in rows.iter().enumerate() {
            let domain = data.domains[r];
            if domain > 1 {
                return Err(Error::contract(format!("row {r} has domain {domain}, expected 0 or 1")));
            }
            domains.push(domain);
            if domain == 0 {
                let label = data.labels[r]
                    .ok_or_else(|| Error::contract(format!("source row {} has no class label", data.ids[r])))?;
                source_rows.push(pos);
                labels.push(label);
            }
        }
        Ok(AdaptBatch {
            source_rows,
            labels,
            domains,
        })
    }
}

/// Group ELBO of a batch: the shared objective on the concatenated latent
/// plus the closed-form KL of each segment (batch means).
pub struct GroupElbo<'g, S> {
    pub pass: ElboPass<'g, S>,
    pub segment_kl: Vec<Var<'g, S>>,
}

pub fn group_elbo<'g, S: Scalar>(
    model: &GroupModel<S>,
    p: &Bound<'g, S>,
    x: Var<'g, S>,
    noise: &Tensor<S>,
    cfg: &ObjectiveConfig,
) -> Result<GroupElbo<'g, S>> {
    let pass = elbo_pass(&model.encoder, &model.decoder, p, x, noise, cfg)?;
    let b = x.shape()[0];
    let kl = kl_diag_gaussian(&pass.post);
    let inv_b = S::one() / S::of(b as f64);
    let segment_kl = model
        .config
        .latent
        .ranges()
        .into_iter()
        .map(|r| kl.slice(1, r.start, r.len()).sum().scale(inv_b))
        .collect();
    Ok(GroupElbo { pass, segment_kl })
}

/// Classification losses of a batch. `task_m` and `adv_n` need labeled
/// source rows and are `None` for batches without them.
#[derive(Clone, Copy)]
pub struct AdversarialLosses<'g, S> {
    /// Class head on `z_y`, source rows.
    pub task_m: Option<Var<'g, S>>,
    /// Domain head on `z_d`, all rows.
    pub task_n: Var<'g, S>,
    /// Domain head on reversed `z_y`, all rows.
    pub adv_m: Var<'g, S>,
    /// Class head on reversed `z_d`, source rows.
    pub adv_n: Option<Var<'g, S>>,
}

impl<'g, S: Scalar> AdversarialLosses<'g, S> {
    /// `w_cls·(task_m + task_n) + w_adv·(adv_m + adv_n)` over present terms.
    pub fn combined(&self, w_cls: f64, w_adv: f64) -> Var<'g, S> {
        let task = match self.task_m {
            Some(m) => m + self.task_n,
            None => self.task_n,
        };
        let adv = match self.adv_n {
            Some(n) => self.adv_m + n,
            None => self.adv_m,
        };
        task.scale(S::of(w_cls)) + adv.scale(S::of(w_adv))
    }
}

fn losses<'g, S: Scalar>(
    model: &GroupModel<S>,
    p: &Bound<'g, S>,
    z: Var<'g, S>,
    batch: &AdaptBatch,
    reverse: impl Fn(Var<'g, S>) -> Result<Var<'g, S>>,
) -> Result<AdversarialLosses<'g, S>> {
    if batch.domains.len() != z.shape()[0] || batch.labels.len() != batch.source_rows.len() {
        return Err(Error::contract("batch annotations do not match the latent rows"));
    }
    let segs = split_latent(z, &model.config.latent)?;
    let (z_m, z_n) = (segs[0], segs[1]);
    let has_source = !batch.source_rows.is_empty();
    let task_m = if has_source {
        let logits = model.class_head.classify(p, z_m.select_rows(&batch.source_rows))?;
        Some(cross_entropy(logits, &batch.labels)?)
    } else {
        None
    };
    let task_n = cross_entropy(model.domain_head.classify(p, z_n)?, &batch.domains)?;
    let adv_m = cross_entropy(model.domain_head.classify(p, reverse(z_m)?)?, &batch.domains)?;
    let adv_n = if has_source {
        let reversed = reverse(z_n)?.select_rows(&batch.source_rows);
        Some(cross_entropy(model.class_head.classify(p, reversed)?, &batch.labels)?)
    } else {
        None
    };
    Ok(AdversarialLosses {
        task_m,
        task_n,
        adv_m,
        adv_n,
    })
}

/// Task and adversarial cross-entropies with the adversarial branches routed
/// through a gradient reversal of weight `lambda`.
pub fn adversarial_losses<'g, S: Scalar>(
    model: &GroupModel<S>,
    p: &Bound<'g, S>,
    z: Var<'g, S>,
    batch: &AdaptBatch,
    lambda: f64,
) -> Result<AdversarialLosses<'g, S>> {
    losses(model, p, z, batch, |v| v.grl(S::of(lambda)))
}

/// The same losses without gradient reversal.
pub fn adversarial_losses_plain<'g, S: Scalar>(
    model: &GroupModel<S>,
    p: &Bound<'g, S>,
    z: Var<'g, S>,
    batch: &AdaptBatch,
) -> Result<AdversarialLosses<'g, S>> {
    losses(model, p, z, batch, Ok)
}
