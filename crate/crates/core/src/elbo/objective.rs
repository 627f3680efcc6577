use serde::{Deserialize, Serialize};

use super::decompose::{DecompositionTerms, DecompositionVars};
use crate::tensor::Var;
use crate::{Error, Result, Scalar};

/// MI weights below this trigger a runaway-maximization warning.
const MI_WEIGHT_WARN: f64 = -10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveMode {
    /// Plain ELBO: weights (1, 1, 1).
    Vanilla,
    /// β-VAE: weights (β, β, β).
    Beta,
    /// Weights (β − α, β, β).
    Dts,
}

impl std::str::FromStr for ObjectiveMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(ObjectiveMode::Vanilla),
            "beta" => Ok(ObjectiveMode::Beta),
            "dts" => Ok(ObjectiveMode::Dts),
            other => Err(Error::Config {
                field: "objective.mode".into(),
                message: format!("expected vanilla, beta or dts, got {other:?}"),
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub mode: ObjectiveMode,
    pub alpha: f64,
    pub beta: f64,
    /// Number of windows the estimator's aggregate posterior ranges over.
    pub dataset_size: usize,
}

impl ObjectiveConfig {
    pub fn new(mode: ObjectiveMode, alpha: f64, beta: f64, dataset_size: usize) -> Result<Self> {
        let cfg = ObjectiveConfig {
            mode,
            alpha,
            beta,
            dataset_size,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn vanilla(dataset_size: usize) -> Self {
        ObjectiveConfig {
            mode: ObjectiveMode::Vanilla,
            alpha: 0.0,
            beta: 1.0,
            dataset_size,
        }
    }

    pub fn beta(beta: f64, dataset_size: usize) -> Result<Self> {
        Self::new(ObjectiveMode::Beta, 0.0, beta, dataset_size)
    }

    /// `α = β = 4`: MI unpenalized, TC and dimension-wise KL at weight 4.
    pub fn dts_default(dataset_size: usize) -> Self {
        ObjectiveConfig {
            mode: ObjectiveMode::Dts,
            alpha: 4.0,
            beta: 4.0,
            dataset_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, message: String| Err(Error::Config {
            field: format!("objective.{field}"),
            message,
        });
        if self.dataset_size == 0 {
            return bad("dataset_size", "must be positive".into());
        }
        if self.mode == ObjectiveMode::Vanilla {
            return Ok(());
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return bad("alpha", format!("must be finite and >= 0, got {}", self.alpha));
        }
        if !(self.beta.is_finite() && self.beta >= 1.0) {
            return bad("beta", format!("must be finite and >= 1, got {}", self.beta));
        }
        let (w_mi, _, _) = self.weights();
        if w_mi < MI_WEIGHT_WARN {
            log::warn!("MI weight beta - alpha = {w_mi} rewards unbounded mutual information");
        }
        Ok(())
    }

    /// Weights on (MI, TC, dimension-wise KL).
    pub fn weights(&self) -> (f64, f64, f64) {
        match self.mode {
            ObjectiveMode::Vanilla => (1.0, 1.0, 1.0),
            ObjectiveMode::Beta => (self.beta, self.beta, self.beta),
            ObjectiveMode::Dts => (self.beta - self.alpha, self.beta, self.beta),
        }
    }
}

/// Loss to minimize: `−recon + w_mi·MI + w_tc·TC + w_kl·dimKL`.
pub fn objective(cfg: &ObjectiveConfig, terms: &DecompositionTerms) -> Result<f64> {
    if !terms.is_finite() {
        return Err(Error::contract(format!("objective of non-finite terms {terms:?}")));
    }
    let (w_mi, w_tc, w_kl) = cfg.weights();
    Ok(-terms.recon_loglik + w_mi * terms.index_code_mi + w_tc * terms.total_correlation + w_kl * terms.dimension_kl)
}

/// [`objective`] recorded on a graph.
pub fn objective_var<'g, S: Scalar>(
    cfg: &ObjectiveConfig,
    recon: Var<'g, S>,
    terms: &DecompositionVars<'g, S>,
) -> Var<'g, S> {
    let (w_mi, w_tc, w_kl) = cfg.weights();
    -recon + terms.mi.scale(S::of(w_mi)) + terms.tc.scale(S::of(w_tc)) + terms.dim_kl.scale(S::of(w_kl))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Graph, Tensor};

    fn terms() -> DecompositionTerms {
        DecompositionTerms {
            index_code_mi: 0.5,
            total_correlation: 0.2,
            dimension_kl: 0.3,
            recon_loglik: -10.0,
        }
    }

    #[test]
    fn weighted_sum_example() {
        let cfg = ObjectiveConfig::new(ObjectiveMode::Dts, 3.0, 4.0, 10).unwrap();
        assert!((objective(&cfg, &terms()).unwrap() - 12.5).abs() < 1e-12);
    }

    #[test]
    fn mode_identities_are_exact() {
        let t = DecompositionTerms {
            index_code_mi: 0.123456789,
            total_correlation: 1.0 / 3.0,
            dimension_kl: 2.718281828,
            recon_loglik: -117.25,
        };
        let dts0 = ObjectiveConfig::new(ObjectiveMode::Dts, 0.0, 4.0, 10).unwrap();
        let beta4 = ObjectiveConfig::beta(4.0, 10).unwrap();
        assert_eq!(objective(&dts0, &t).unwrap(), objective(&beta4, &t).unwrap());
        let beta1 = ObjectiveConfig::beta(1.0, 10).unwrap();
        assert_eq!(objective(&beta1, &t).unwrap(), objective(&ObjectiveConfig::vanilla(10), &t).unwrap());
    }

    #[test]
    fn validation() {
        assert!(matches!(
            ObjectiveConfig::new(ObjectiveMode::Dts, -1.0, 4.0, 10),
            Err(Error::Config { .. })
        ));
        assert!(matches!(ObjectiveConfig::beta(0.5, 10), Err(Error::Config { .. })));
        assert!(ObjectiveConfig::new(ObjectiveMode::Dts, 30.0, 4.0, 10).is_ok());
        assert!("dts".parse::<ObjectiveMode>().is_ok());
        assert!("bogus".parse::<ObjectiveMode>().is_err());
    }

    #[test]
    fn mi_gradient_cancels_when_alpha_equals_beta() {
        let g = Graph::<f64>::new();
        let mi = g.variable(&Tensor::scalar(0.7));
        let tc = g.variable(&Tensor::scalar(0.2));
        let kl = g.variable(&Tensor::scalar(0.4));
        let recon = g.variable(&Tensor::scalar(-3.0));
        let vars = DecompositionVars { mi, tc, dim_kl: kl };
        let loss = objective_var(&ObjectiveConfig::dts_default(10), recon, &vars);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.wrt(mi).unwrap().item(), 0.0);
        assert_eq!(grads.wrt(tc).unwrap().item(), 4.0);
        assert_eq!(grads.wrt(recon).unwrap().item(), -1.0);
    }

    #[test]
    fn var_and_value_forms_agree() {
        let g = Graph::<f64>::new();
        let t = terms();
        let vars = DecompositionVars {
            mi: g.scalar(t.index_code_mi),
            tc: g.scalar(t.total_correlation),
            dim_kl: g.scalar(t.dimension_kl),
        };
        let cfg = ObjectiveConfig::new(ObjectiveMode::Dts, 1.5, 4.0, 10).unwrap();
        let v = objective_var(&cfg, g.scalar(t.recon_loglik), &vars).item();
        assert_eq!(v, objective(&cfg, &t).unwrap());
    }
}
