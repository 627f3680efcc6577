use rand::Rng;

use crate::tensor::{Bound, ParamId, ParamStore, Tensor, Var};
use crate::{Error, Result, Scalar};

/// Gated recurrent unit with fused gate weights in `[reset, update, candidate]`
/// column order.
#[derive(Clone, Debug, PartialEq)]
pub struct Gru {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub b_input: ParamId,
    pub b_hidden: ParamId,
    pub input_size: usize,
    pub hidden_size: usize,
}

impl Gru {
    /// Uniform(-1/sqrt(H), 1/sqrt(H)) initialization.
    pub fn new<S: Scalar, R: Rng>(store: &mut ParamStore<S>, name: &str, input_size: usize, hidden_size: usize, rng: &mut R) -> Self {
        let k = 1.0 / (hidden_size as f64).sqrt();
        let h3 = 3 * hidden_size;
        Gru {
            w_input: store.add(format!("{name}.w_input"), Tensor::uniform(vec![input_size, h3], k, rng)),
            w_hidden: store.add(format!("{name}.w_hidden"), Tensor::uniform(vec![hidden_size, h3], k, rng)),
            b_input: store.add(format!("{name}.b_input"), Tensor::uniform(vec![h3], k, rng)),
            b_hidden: store.add(format!("{name}.b_hidden"), Tensor::uniform(vec![h3], k, rng)),
            input_size,
            hidden_size,
        }
    }

    /// Input-side gate pre-activations for `x: N x D`.
    pub fn input_projection<'g, S: Scalar>(&self, p: &Bound<'g, S>, x: Var<'g, S>) -> Var<'g, S> {
        x.matmul(p.get(self.w_input)) + p.get(self.b_input)
    }

    /// One recurrence step from input pre-activations `gi: B x 3H`.
    pub fn cell<'g, S: Scalar>(&self, p: &Bound<'g, S>, gi: Var<'g, S>, h: Var<'g, S>) -> Var<'g, S> {
        let hs = self.hidden_size;
        let gh = h.matmul(p.get(self.w_hidden)) + p.get(self.b_hidden);
        let reset = (gi.slice(1, 0, hs) + gh.slice(1, 0, hs)).sigmoid();
        let update = (gi.slice(1, hs, hs) + gh.slice(1, hs, hs)).sigmoid();
        let candidate = (gi.slice(1, 2 * hs, hs) + reset * gh.slice(1, 2 * hs, hs)).tanh();
        candidate + update * (h - candidate)
    }

    /// Hidden state after every step of `x: B x T x D`.
    pub fn run<'g, S: Scalar>(&self, p: &Bound<'g, S>, x: Var<'g, S>, h0: Var<'g, S>) -> Result<Vec<Var<'g, S>>> {
        let shape = x.shape();
        let h_shape = h0.shape();
        if shape.len() != 3 || shape[2] != self.input_size || shape[1] == 0 {
            return Err(Error::contract(format!(
                "GRU expects B x T x {} input with T >= 1, got {shape:?}",
                self.input_size
            )));
        }
        let (b, t, d) = (shape[0], shape[1], shape[2]);
        if h_shape != [b, self.hidden_size] {
            return Err(Error::contract(format!(
                "GRU initial state must be {b} x {}, got {h_shape:?}",
                self.hidden_size
            )));
        }
        let h3 = 3 * self.hidden_size;
        let gi_all = self
            .input_projection(p, x.reshape(&[b * t, d]))
            .reshape(&[b, t, h3]);
        let mut h = h0;
        let mut states = Vec::with_capacity(t);
        for step in 0..t {
            let gi = gi_all.slice(1, step, 1).reshape(&[b, h3]);
            h = self.cell(p, gi, h);
            states.push(h);
        }
        Ok(states)
    }

    /// All hidden states, `B x T x H`.
    pub fn forward<'g, S: Scalar>(&self, p: &Bound<'g, S>, x: Var<'g, S>, h0: Var<'g, S>) -> Result<Var<'g, S>> {
        let states = self.run(p, x, h0)?;
        Ok(stack_steps(&states))
    }
}

/// Stacks per-step `B x H` states into `B x T x H`.
pub fn stack_steps<'g, S: Scalar>(states: &[Var<'g, S>]) -> Var<'g, S> {
    let shape = states[0].shape();
    let (b, h) = (shape[0], shape[1]);
    let g = states[0].graph();
    let parts: Vec<_> = states.iter().map(|s| s.reshape(&[b, 1, h])).collect();
    g.concat(&parts, 1)
}
