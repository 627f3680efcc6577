use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::nets::{argmax_rows, cross_entropy, Classifier};
use crate::rng::{self, tag};
use crate::tensor::{AdamConfig, AdamState, Graph, ParamStore, Tensor};
use crate::{Error, Result};

/// Fewest rows a probe accuracy is reported on.
pub const PROBE_MIN_ROWS: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub heldout_fraction: f64,
    /// Full-batch Adam steps.
    pub steps: usize,
    pub lr: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            heldout_fraction: 0.3,
            steps: 300,
            lr: 0.05,
        }
    }
}

/// Held-out accuracy of a fresh linear classifier trained on standardized
/// `features: B x m`.
pub fn probe_accuracy(features: &Tensor<f64>, labels: &[usize], cfg: &ProbeConfig, seed: u64) -> Result<f64> {
    let b = features.shape()[0];
    if b < PROBE_MIN_ROWS {
        return Err(Error::contract(format!("probe needs at least {PROBE_MIN_ROWS} rows, got {b}")));
    }
    fit_probe(features, labels, cfg, seed)
}

fn fit_probe(features: &Tensor<f64>, labels: &[usize], cfg: &ProbeConfig, seed: u64) -> Result<f64> {
    let shape = features.shape();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(Error::contract(format!(
            "probe features {shape:?} do not match {} labels",
            labels.len()
        )));
    }
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::contract("probe needs at least two classes"));
    }
    if !(cfg.heldout_fraction > 0.0 && cfg.heldout_fraction < 1.0) {
        return Err(Error::contract("held-out fraction must lie in (0, 1)"));
    }
    let (b, m) = (shape[0], shape[1]);
    let k = classes[classes.len() - 1] + 1;
    let mut order: Vec<usize> = (0..b).collect();
    order.shuffle(&mut rng::stream(seed, &[tag::SPLIT]));
    let held = ((b as f64 * cfg.heldout_fraction).round() as usize).clamp(1, b - 1);
    let (test_rows, train_rows) = order.split_at(held);

    let train_x = features.select_rows(train_rows);
    let mut mean = vec![0.0; m];
    let mut std = vec![0.0; m];
    for row in train_x.data().chunks(m) {
        for (j, v) in row.iter().enumerate() {
            mean[j] += v / train_rows.len() as f64;
        }
    }
    for row in train_x.data().chunks(m) {
        for (j, v) in row.iter().enumerate() {
            std[j] += (v - mean[j]).powi(2) / train_rows.len() as f64;
        }
    }
    std.iter_mut().for_each(|s| *s = s.sqrt().max(1e-8));
    let standardize = |t: Tensor<f64>| {
        let mut t = t;
        for row in t.data_mut().chunks_mut(m) {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - mean[j]) / std[j];
            }
        }
        t
    };
    let train_x = standardize(train_x);
    let test_x = standardize(features.select_rows(test_rows));
    let train_y: Vec<usize> = train_rows.iter().map(|&r| labels[r]).collect();

    let mut store = ParamStore::new();
    let head = Classifier::new(&mut store, "probe", m, k, &mut rng::stream(seed, &[tag::PROBE]));
    let mut adam = AdamState::new(&store);
    let adam_cfg = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    for _ in 0..cfg.steps {
        let g = Graph::new();
        let p = g.bind(&store);
        let loss = cross_entropy(head.classify(&p, g.constant(&train_x))?, &train_y)?;
        let grads = g.backward(loss)?;
        adam.step(&mut store, &grads, &adam_cfg)?;
    }
    let g = Graph::new();
    let p = g.bind_constant(&store);
    let predicted = argmax_rows(&head.classify(&p, g.constant(&test_x))?.value());
    let correct = predicted
        .iter()
        .zip(test_rows)
        .filter(|(&y, &r)| y == labels[r])
        .count();
    Ok(correct as f64 / test_rows.len() as f64)
}

/// `2(1 − 2ε)` clamped to `[0, 2]`.
pub fn proxy_from_error(error: f64) -> f64 {
    (2.0 * (1.0 - 2.0 * error)).clamp(0.0, 2.0)
}

/// Proxy discrepancy from the held-out error of a probe separating source
/// features from target features.
pub fn proxy_discrepancy(source: &Tensor<f64>, target: &Tensor<f64>, cfg: &ProbeConfig, seed: u64) -> Result<f64> {
    if source.shape().len() != 2 || target.shape().len() != 2 || source.shape()[1] != target.shape()[1] {
        return Err(Error::contract(format!(
            "feature shapes {:?} and {:?} are incompatible",
            source.shape(),
            target.shape()
        )));
    }
    let (ns, nt) = (source.shape()[0], target.shape()[0]);
    let mut data = source.data().to_vec();
    data.extend_from_slice(target.data());
    let features = Tensor::new(vec![ns + nt, source.shape()[1]], data)?;
    let labels: Vec<usize> = (0..ns + nt).map(|i| usize::from(i >= ns)).collect();
    let acc = fit_probe(&features, &labels, cfg, seed)?;
    Ok(proxy_from_error(1.0 - acc))
}
