//! Central finite-difference verification of autodiff gradients.

use super::dense::Tensor;
use super::graph::{Bound, Graph, Var};
use super::params::{ParamId, ParamStore};
use crate::{Error, Result, Scalar};

/// Maximum over trainable parameter entries of
/// `|autodiff - central difference| / max(1, |central difference|)`.
pub fn grad_check_store<S, F>(store: &ParamStore<S>, f: F, h: S) -> Result<S>
where
    S: Scalar,
    F: for<'g> Fn(&'g Graph<S>, &Bound<'g, S>) -> Result<Var<'g, S>>,
{
    if !(h > S::zero()) {
        return Err(Error::contract("finite-difference step must be positive"));
    }
    let eval = |s: &ParamStore<S>| -> Result<S> {
        let g = Graph::new();
        let p = g.bind_constant(s);
        let out = f(&g, &p)?;
        g.check_finite()?;
        let v = out.item();
        if !v.is_finite() {
            return Err(Error::Numeric {
                node: out.id(),
                op: "objective".into(),
            });
        }
        Ok(v)
    };

    let g = Graph::new();
    let bound = g.bind(store);
    let loss = f(&g, &bound)?;
    let grads = g.backward(loss)?;

    let mut work = store.clone();
    let two_h = h + h;
    let mut worst = S::zero();
    for i in 0..store.len() {
        let id = ParamId(i);
        if store.param(id).frozen {
            continue;
        }
        let analytic = grads.param(id).map(|t| t.data().to_vec());
        for k in 0..store.get(id).len() {
            let orig = store.get(id).data()[k];
            work.get_mut(id).data_mut()[k] = orig + h;
            let up = eval(&work)?;
            work.get_mut(id).data_mut()[k] = orig - h;
            let down = eval(&work)?;
            work.get_mut(id).data_mut()[k] = orig;
            let fd = (up - down) / two_h;
            let ad = analytic.as_ref().map_or(S::zero(), |a| a[k]);
            let err = (ad - fd).abs() / fd.abs().max(S::one());
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

/// [`grad_check_store`] over a plain list of tensors.
pub fn grad_check<S, F>(f: F, params: &[Tensor<S>], h: S) -> Result<S>
where
    S: Scalar,
    F: for<'g> Fn(&'g Graph<S>, &[Var<'g, S>]) -> Result<Var<'g, S>>,
{
    let mut store = ParamStore::new();
    for (i, t) in params.iter().enumerate() {
        store.add(format!("p{i}"), t.clone());
    }
    let n = params.len();
    grad_check_store(
        &store,
        |g, b| {
            let vars: Vec<_> = (0..n).map(|i| b.get(ParamId(i))).collect();
            f(g, &vars)
        },
        h,
    )
}
