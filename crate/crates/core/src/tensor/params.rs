use std::collections::HashMap;

use super::dense::Tensor;
use super::graph::Var;
use crate::{Error, Result, Scalar};

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Param<S> {
    pub name: String,
    pub value: Tensor<S>,
    /// Frozen parameters are bound as constants and skipped by the optimizer.
    pub frozen: bool,
}

/// Ordered, named collection of model parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<S> {
    params: Vec<Param<S>>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<S>) -> ParamId {
        let name = name.into();
        debug_assert!(self.params.iter().all(|p| p.name != name), "duplicate parameter {name}");
        self.params.push(Param {
            name,
            value,
            frozen: false,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<S>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<S>> {
        self.params.iter_mut()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.params[id.0].value
    }

    pub fn param(&self, id: ParamId) -> &Param<S> {
        &self.params[id.0]
    }

    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        self.params[id.0].frozen = frozen;
    }

    pub fn by_name(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Replaces every value from `(name, tensor)` pairs; names and shapes
    /// must match this store exactly.
    pub fn load_values(&mut self, values: Vec<(String, Tensor<S>)>) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::Integrity(format!(
                "expected {} parameter arrays, found {}",
                self.params.len(),
                values.len()
            )));
        }
        for (p, (name, t)) in self.params.iter().zip(&values) {
            if p.name != *name {
                return Err(Error::Integrity(format!(
                    "parameter `{}` expected, found `{name}`",
                    p.name
                )));
            }
            if p.value.shape() != t.shape() {
                return Err(Error::Integrity(format!(
                    "parameter `{name}` has shape {:?}, model expects {:?}",
                    t.shape(),
                    p.value.shape()
                )));
            }
        }
        for (p, (_, t)) in self.params.iter_mut().zip(values) {
            p.value = t;
        }
        Ok(())
    }

    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    frozen: p.frozen,
                })
                .collect(),
        }
    }

    /// The first `n` parameters, in order.
    pub fn prefix(&self, n: usize) -> ParamStore<S> {
        ParamStore {
            params: self.params[..n].to_vec(),
        }
    }
}

/// Gradients produced by one backward pass.
#[derive(Clone, Debug, Default)]
pub struct Gradients<S> {
    pub(crate) by_node: HashMap<usize, Tensor<S>>,
    by_param: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub(crate) fn set_param(&mut self, index: usize, t: Tensor<S>) {
        if self.by_param.len() <= index {
            self.by_param.resize(index + 1, None);
        }
        self.by_param[index] = Some(t);
    }

    /// Gradient of a leaf created with `Graph::variable` or `Graph::bind`.
    pub fn wrt(&self, v: Var<'_, S>) -> Option<&Tensor<S>> {
        self.by_node.get(&v.id())
    }

    /// Gradient of a bound parameter; `None` if it is frozen or unused.
    pub fn param(&self, id: ParamId) -> Option<&Tensor<S>> {
        self.by_param.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn param_mut(&mut self, id: ParamId) -> Option<&mut Tensor<S>> {
        self.by_param.get_mut(id.0).and_then(|g| g.as_mut())
    }

    pub fn params(&self) -> impl Iterator<Item = &Tensor<S>> {
        self.by_param.iter().flatten()
    }

    /// Euclidean norm over every parameter gradient.
    pub fn global_norm(&self) -> S {
        self.params()
            .flat_map(|t| t.data().iter())
            .map(|&g| g * g)
            .sum::<S>()
            .sqrt()
    }

    /// Rescales parameter gradients so their global norm is at most
    /// `max_norm`. Returns the norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: S) -> S {
        let norm = self.global_norm();
        if norm > max_norm && norm > S::zero() {
            let k = max_norm / norm;
            for t in self.by_param.iter_mut().flatten() {
                for g in t.data_mut() {
                    *g *= k;
                }
            }
        }
        norm
    }
}
