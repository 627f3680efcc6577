use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParamId, ParamStore};
use crate::{Error, Result, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators aligned with a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<S> {
    pub m: Vec<Vec<S>>,
    pub v: Vec<Vec<S>>,
    pub step: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(store: &ParamStore<S>) -> Self {
        let zeros: Vec<Vec<S>> = store.iter().map(|p| vec![S::zero(); p.value.len()]).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    /// One bias-corrected Adam update of every parameter that has a gradient.
    /// Frozen or unused parameters keep their values and moments.
    pub fn step(&mut self, store: &mut ParamStore<S>, grads: &Gradients<S>, cfg: &AdamConfig) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(Error::contract(format!(
                "optimizer state tracks {} parameters, store has {}",
                self.m.len(),
                store.len()
            )));
        }
        self.step += 1;
        for i in 0..store.len() {
            let id = ParamId(i);
            if store.param(id).frozen {
                continue;
            }
            let Some(g) = grads.param(id) else { continue };
            let p = store.get_mut(id);
            if p.len() != g.len() || self.m[i].len() != p.len() {
                return Err(Error::contract(format!(
                    "shape mismatch for parameter {i}: value {:?}, gradient {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
            adam_update(p.data_mut(), g.data(), &mut self.m[i], &mut self.v[i], self.step, cfg);
        }
        Ok(())
    }
}

/// Adam update of one parameter array at (1-based) step `t`.
pub fn adam_update<S: Scalar>(param: &mut [S], grad: &[S], m: &mut [S], v: &mut [S], t: u64, cfg: &AdamConfig) {
    let (b1, b2) = (S::of(cfg.beta1), S::of(cfg.beta2));
    let lr = S::of(cfg.lr);
    let eps = S::of(cfg.eps);
    let c1 = S::one() - b1.powi(t as i32);
    let c2 = S::one() - b2.powi(t as i32);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (S::one() - b1) * g;
        v[i] = b2 * v[i] + (S::one() - b2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        param[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}
