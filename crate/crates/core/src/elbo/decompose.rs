//! Minibatch estimators of the index-code MI / total correlation /
//! dimension-wise KL decomposition of `KL(q(z|x) ‖ p(z))`.
//!
//! The aggregate posterior `q(z) = (1/N) Σ_n q(z|x_n)` is estimated at each
//! sampled `z_i` from the batch posteriors: the posterior that generated
//! `z_i` carries weight `1/N`, every other batch posterior stands in for
//! `(N − 1)/(B − 1)` dataset points and carries `(N − 1)/(N(B − 1))`. When the
//! batch is the whole dataset every weight is `1/N` and the aggregate is
//! exact. The same weights estimate each marginal `q(z_d)`.

use serde::{Deserialize, Serialize};

use super::density::{gaussian_logpdf, standard_normal_logpdf};
use crate::nets::Posterior;
use crate::tensor::{Tensor, Var};
use crate::{Error, Result, Scalar};

/// Estimated decomposition of the KL term plus the reconstruction
/// log-likelihood, all in nats.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DecompositionTerms {
    pub index_code_mi: f64,
    pub total_correlation: f64,
    pub dimension_kl: f64,
    pub recon_loglik: f64,
}

impl DecompositionTerms {
    /// `MI + TC + dimKL`, the estimated `KL(q(z|x) ‖ p(z))`.
    pub fn kl(&self) -> f64 {
        self.index_code_mi + self.total_correlation + self.dimension_kl
    }

    pub fn is_finite(&self) -> bool {
        [self.index_code_mi, self.total_correlation, self.dimension_kl, self.recon_loglik]
            .iter()
            .all(|v| v.is_finite())
    }

    pub(crate) fn add_scaled(&mut self, other: &DecompositionTerms, w: f64) {
        self.index_code_mi += w * other.index_code_mi;
        self.total_correlation += w * other.total_correlation;
        self.dimension_kl += w * other.dimension_kl;
        self.recon_loglik += w * other.recon_loglik;
    }
}

/// Decomposition terms recorded on a graph.
#[derive(Clone, Copy)]
pub struct DecompositionVars<'g, S> {
    pub mi: Var<'g, S>,
    pub tc: Var<'g, S>,
    pub dim_kl: Var<'g, S>,
}

impl<'g, S: Scalar> DecompositionVars<'g, S> {
    pub fn values(&self, recon_loglik: f64) -> DecompositionTerms {
        DecompositionTerms {
            index_code_mi: self.mi.item().as_f64(),
            total_correlation: self.tc.item().as_f64(),
            dimension_kl: self.dim_kl.item().as_f64(),
            recon_loglik,
        }
    }
}

/// Log importance weights `R x B` of batch posteriors for each sample row;
/// row `r` was drawn from posterior `r % B`.
fn log_weights<S: Scalar>(rows: usize, batch: usize, dataset_size: usize) -> Tensor<S> {
    let n = dataset_size as f64;
    let own = S::of(-n.ln());
    let other = S::of(((n - 1.0) / (n * (batch as f64 - 1.0))).ln());
    let mut data = vec![other; rows * batch];
    for r in 0..rows {
        data[r * batch + r % batch] = own;
    }
    Tensor::new(vec![rows, batch], data).expect("non-empty weights")
}

/// Estimates MI, TC and dimension-wise KL from samples `z: R x |Z|`, where
/// row `r` was reparameterized from posterior `r % B` of `post` (`B x |Z|`),
/// for a dataset of `dataset_size` points.
pub fn decompose_minibatch<'g, S: Scalar>(
    z: Var<'g, S>,
    post: &Posterior<'g, S>,
    dataset_size: usize,
) -> Result<DecompositionVars<'g, S>> {
    let ps = post.mean.shape();
    let zs = z.shape();
    if ps.len() != 2 || post.log_std.shape() != ps {
        return Err(Error::contract(format!("posterior parameters must be B x |Z|, got {ps:?}")));
    }
    let (b, dim) = (ps[0], ps[1]);
    if b < 2 {
        return Err(Error::contract(format!(
            "decomposition estimator needs a batch of at least 2, got {b}"
        )));
    }
    if dataset_size < b {
        return Err(Error::contract(format!(
            "dataset size {dataset_size} is smaller than the batch {b}"
        )));
    }
    if zs.len() != 2 || zs[1] != dim || zs[0] == 0 || zs[0] % b != 0 {
        return Err(Error::contract(format!(
            "samples of shape {zs:?} do not tile posteriors of shape {ps:?}"
        )));
    }
    let r = zs[0];
    let g = z.graph();

    let pair = gaussian_logpdf(
        z.reshape(&[r, 1, dim]),
        post.mean.reshape(&[1, b, dim]),
        post.log_std.reshape(&[1, b, dim]),
    );
    let logw = g.constant_owned(log_weights(r, b, dataset_size));
    let log_qz = (pair.sum_axis(2) + logw).logsumexp(1);
    let log_prod_marginals = (pair + logw.reshape(&[r, b, 1])).logsumexp(1).sum_axis(1);

    let own: Vec<usize> = (0..r).map(|i| i % b).collect();
    let (mean_own, log_std_own) = if r == b {
        (post.mean, post.log_std)
    } else {
        (post.mean.select_rows(&own), post.log_std.select_rows(&own))
    };
    let log_qzx = gaussian_logpdf(z, mean_own, log_std_own).sum_axis(1);
    let log_pz = standard_normal_logpdf(z).sum_axis(1);

    let terms = DecompositionVars {
        mi: (log_qzx - log_qz).mean(),
        tc: (log_qz - log_prod_marginals).mean(),
        dim_kl: (log_prod_marginals - log_pz).mean(),
    };
    g.check_finite()?;
    Ok(terms)
}
