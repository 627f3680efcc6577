use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::mig::{mig, MigConfig};
use super::probe::{probe_accuracy, proxy_discrepancy, ProbeConfig, PROBE_MIN_ROWS};
use crate::data::SeriesDataset;
use crate::elbo::{evaluate_terms, ObjectiveConfig};
use crate::group::segment_columns;
use crate::nets::SequenceVae;
use crate::tensor::Tensor;
use crate::{Error, Result, Scalar};

/// Posterior-mean variance above which a latent dimension counts as active.
pub const ACTIVE_VARIANCE: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub samples: usize,
    pub seed: u64,
    pub mig: MigConfig,
    pub probe: ProbeConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            samples: 8,
            seed: 0,
            mig: MigConfig::default(),
            probe: ProbeConfig::default(),
        }
    }
}

/// Metrics of a model on a dataset; metrics whose annotations are missing
/// are `None` and omitted from the JSON form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mig: Option<f64>,
    pub mi: f64,
    pub tc: f64,
    pub dim_kl: f64,
    pub recon_loglik: f64,
    pub active_units: usize,
    pub accuracies: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub proxy_discrepancy: Option<f64>,
    #[serde(default)]
    pub config_echo: serde_json::Value,
}

/// Count of columns of `means: B x |Z|` whose variance exceeds 0.01.
pub fn active_units(means: &Tensor<f64>) -> usize {
    let (b, z) = (means.shape()[0], means.shape()[1]);
    (0..z)
        .filter(|&j| {
            let col: Vec<f64> = (0..b).map(|i| means.data()[i * z + j]).collect();
            let m = col.iter().sum::<f64>() / b as f64;
            col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / b as f64 > ACTIVE_VARIANCE
        })
        .count()
}

/// Decomposition terms, active units, and every metric the dataset's
/// annotations support: MIG with factors; `class_from_<segment>` probes
/// with at least 50 labeled rows of two classes; `domain_from_<segment>`
/// probes and the proxy discrepancy on the first segment when both
/// domains are present.
pub fn evaluate<S: Scalar, M: SequenceVae<S> + ?Sized>(
    model: &M,
    data: &SeriesDataset,
    cfg: &EvalConfig,
    config_echo: serde_json::Value,
) -> Result<MetricsReport> {
    if data.d != model.config().input_dim {
        return Err(Error::contract(format!(
            "model expects {} channels, data has {}",
            model.config().input_dim,
            data.d
        )));
    }
    let x = data.tensor::<S>()?;
    let n = data.len();
    let (terms, _) = evaluate_terms(model, &x, &ObjectiveConfig::vanilla(n), cfg.samples, cfg.seed)?;
    let means = model.posterior(&x)?.mean.to_f64();

    let mig = match &data.factors {
        Some(f) => Some(mig(&means, f, &cfg.mig)?),
        None => None,
    };

    let spec = &model.config().latent;
    let mut accuracies = BTreeMap::new();
    let labeled: Vec<usize> = (0..n).filter(|&i| data.labels[i].is_some()).collect();
    let labels: Vec<usize> = labeled.iter().filter_map(|&i| data.labels[i]).collect();
    let distinct = |v: &[usize]| {
        let mut v = v.to_vec();
        v.sort_unstable();
        v.dedup();
        v.len()
    };
    let two_domains = distinct(&data.domains) >= 2;
    for (seg, range) in spec.segments().iter().zip(spec.ranges()) {
        let feats = segment_columns(&means, range);
        if labeled.len() >= PROBE_MIN_ROWS && distinct(&labels) >= 2 {
            let acc = probe_accuracy(&feats.select_rows(&labeled), &labels, &cfg.probe, cfg.seed)?;
            accuracies.insert(format!("class_from_{}", seg.name), acc);
        }
        if n >= PROBE_MIN_ROWS && two_domains {
            let acc = probe_accuracy(&feats, &data.domains, &cfg.probe, cfg.seed)?;
            accuracies.insert(format!("domain_from_{}", seg.name), acc);
        }
    }
    let proxy = if two_domains {
        let feats = segment_columns(&means, spec.ranges()[0].clone());
        let source = feats.select_rows(&data.rows_in_domain(0));
        let target_rows: Vec<usize> = (0..n).filter(|&i| data.domains[i] != 0).collect();
        Some(proxy_discrepancy(&source, &feats.select_rows(&target_rows), &cfg.probe, cfg.seed)?)
    } else {
        None
    };

    Ok(MetricsReport {
        mig,
        mi: terms.index_code_mi,
        tc: terms.total_correlation,
        dim_kl: terms.dimension_kl,
        recon_loglik: terms.recon_loglik,
        active_units: active_units(&means),
        accuracies,
        proxy_discrepancy: proxy,
        config_echo,
    })
}
