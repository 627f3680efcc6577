use rand::Rng;

use crate::tensor::{Bound, ParamId, ParamStore, Tensor, Var};
use crate::{Error, Result, Scalar};

/// Affine map `x W + b` with `W: in x out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    /// Uniform(-1/sqrt(in), 1/sqrt(in)) initialization.
    pub fn new<S: Scalar, R: Rng>(store: &mut ParamStore<S>, name: &str, inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let k = 1.0 / (inputs as f64).sqrt();
        let w = store.add(format!("{name}.weight"), Tensor::uniform(vec![inputs, outputs], k, rng));
        let b = store.add(format!("{name}.bias"), Tensor::uniform(vec![outputs], k, rng));
        Linear { w, b, inputs, outputs }
    }

    pub fn forward<'g, S: Scalar>(&self, p: &Bound<'g, S>, x: Var<'g, S>) -> Var<'g, S> {
        x.matmul(p.get(self.w)) + p.get(self.b)
    }
}

/// Linear classifier head producing unnormalized logits.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    pub linear: Linear,
}

impl Classifier {
    pub fn new<S: Scalar, R: Rng>(store: &mut ParamStore<S>, name: &str, inputs: usize, classes: usize, rng: &mut R) -> Self {
        Classifier {
            linear: Linear::new(store, name, inputs, classes, rng),
        }
    }

    pub fn classes(&self) -> usize {
        self.linear.outputs
    }

    pub fn classify<'g, S: Scalar>(&self, p: &Bound<'g, S>, segment: Var<'g, S>) -> Result<Var<'g, S>> {
        let shape = segment.shape();
        if shape.len() != 2 || shape[1] != self.linear.inputs {
            return Err(Error::contract(format!(
                "classifier expects width {}, got segment of shape {shape:?}",
                self.linear.inputs
            )));
        }
        Ok(self.linear.forward(p, segment))
    }
}

/// Batch-mean cross-entropy of `logits: B x K` against class indices,
/// through a max-shifted log-softmax.
pub fn cross_entropy<'g, S: Scalar>(logits: Var<'g, S>, labels: &[usize]) -> Result<Var<'g, S>> {
    let shape = logits.shape();
    if shape.len() != 2 || shape[0] != labels.len() || labels.is_empty() {
        return Err(Error::contract(format!(
            "cross-entropy needs B x K logits for {} labels, got {shape:?}",
            labels.len()
        )));
    }
    let (b, k) = (shape[0], shape[1]);
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::contract(format!("label {bad} out of range for {k} classes")));
    }
    let mut onehot = vec![S::zero(); b * k];
    for (i, &l) in labels.iter().enumerate() {
        onehot[i * k + l] = S::one();
    }
    let g = logits.graph();
    let onehot = g.constant_owned(Tensor::new(vec![b, k], onehot)?);
    let log_softmax = logits - logits.logsumexp(1).reshape(&[b, 1]);
    Ok(-(log_softmax * onehot).sum().scale(S::one() / S::of(b as f64)))
}

/// Row-wise argmax of a `B x K` logit tensor.
pub fn argmax_rows<S: Scalar>(logits: &Tensor<S>) -> Vec<usize> {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks(k)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, S::neg_infinity()), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                .0
        })
        .collect()
}
