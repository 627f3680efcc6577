use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gru::{stack_steps, Gru};
use super::linear::Linear;
use crate::group::LatentSpec;
use crate::rng::{self, tag};
use crate::tensor::{Bound, Graph, ParamStore, Tensor, Var};
use crate::{Error, Result, Scalar};

/// Lower clamp of posterior log standard deviations.
pub const LOG_STD_MIN: f64 = -6.0;
/// Upper clamp of posterior log standard deviations.
pub const LOG_STD_MAX: f64 = 2.0;

/// Windows per forward chunk during inference.
const INFERENCE_CHUNK: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Channels per time step.
    pub input_dim: usize,
    pub hidden: usize,
    pub latent: LatentSpec,
}

impl ModelConfig {
    pub fn new(input_dim: usize, hidden: usize, latent: LatentSpec) -> Result<Self> {
        if input_dim == 0 || hidden == 0 {
            return Err(Error::contract("input and hidden sizes must be positive"));
        }
        Ok(ModelConfig {
            input_dim,
            hidden,
            latent,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent.total()
    }
}

/// Posterior parameters recorded on a graph.
#[derive(Clone, Copy)]
pub struct Posterior<'g, S> {
    pub mean: Var<'g, S>,
    pub log_std: Var<'g, S>,
}

/// Diagonal Gaussian posteriors for a batch, `B x |Z|` each.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPosterior<S> {
    pub mean: Tensor<S>,
    pub log_std: Tensor<S>,
}

impl<S: Scalar> GaussianPosterior<S> {
    pub fn batch(&self) -> usize {
        self.mean.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.mean.shape()[1]
    }
}

/// Shared GRU trunk with one `(mean, log-std)` head per latent segment.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub trunk: Gru,
    pub heads: Vec<Linear>,
    pub latent: LatentSpec,
}

impl Encoder {
    pub fn new<S: Scalar, R: Rng>(store: &mut ParamStore<S>, cfg: &ModelConfig, rng: &mut R) -> Self {
        let trunk = Gru::new(store, "encoder.trunk", cfg.input_dim, cfg.hidden, rng);
        let heads = cfg
            .latent
            .segments()
            .iter()
            .map(|s| Linear::new(store, &format!("encoder.head.{}", s.name), cfg.hidden, 2 * s.size, rng))
            .collect();
        Encoder {
            trunk,
            heads,
            latent: cfg.latent.clone(),
        }
    }

    /// Posterior of `x: B x T x D`; log-std is clamped to `[-6, 2]`.
    pub fn encode<'g, S: Scalar>(&self, p: &Bound<'g, S>, x: Var<'g, S>) -> Result<Posterior<'g, S>> {
        let shape = x.shape();
        if shape.len() != 3 || shape[0] == 0 {
            return Err(Error::contract(format!("encoder expects a non-empty B x T x D batch, got {shape:?}")));
        }
        let g = x.graph();
        let h0 = g.constant_owned(Tensor::zeros(vec![shape[0], self.trunk.hidden_size]));
        let states = self.trunk.run(p, x, h0)?;
        let last = *states.last().expect("T >= 1");
        let mut means = Vec::with_capacity(self.heads.len());
        let mut log_stds = Vec::with_capacity(self.heads.len());
        for (head, seg) in self.heads.iter().zip(self.latent.segments()) {
            let out = head.forward(p, last);
            means.push(out.slice(1, 0, seg.size));
            log_stds.push(out.slice(1, seg.size, seg.size));
        }
        let (mean, log_std) = if means.len() == 1 {
            (means[0], log_stds[0])
        } else {
            (g.concat(&means, 1), g.concat(&log_stds, 1))
        };
        let log_std = log_std.clamp(S::of(LOG_STD_MIN), S::of(LOG_STD_MAX));
        g.check_finite()?;
        Ok(Posterior { mean, log_std })
    }
}

/// `z = mean + exp(log_std) * noise`; the noise is a constant.
pub fn reparameterize<'g, S: Scalar>(post: &Posterior<'g, S>, noise: &Tensor<S>) -> Result<Var<'g, S>> {
    let shape = post.mean.shape();
    if noise.shape() != shape.as_slice() {
        return Err(Error::contract(format!(
            "noise shape {:?} does not match posterior shape {shape:?}",
            noise.shape()
        )));
    }
    let g = post.mean.graph();
    Ok(post.mean + post.log_std.exp() * g.constant(noise))
}

/// Non-autoregressive GRU decoder: `z` initializes the state and is fed as
/// the input at every step.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoder {
    pub init: Linear,
    pub gru: Gru,
    pub out: Linear,
}

impl Decoder {
    pub fn new<S: Scalar, R: Rng>(store: &mut ParamStore<S>, cfg: &ModelConfig, rng: &mut R) -> Self {
        let z = cfg.latent_dim();
        Decoder {
            init: Linear::new(store, "decoder.init", z, cfg.hidden, rng),
            gru: Gru::new(store, "decoder.gru", z, cfg.hidden, rng),
            out: Linear::new(store, "decoder.out", cfg.hidden, cfg.input_dim, rng),
        }
    }

    /// Reconstruction means `B x T x D` of the unit-variance observation model.
    pub fn decode<'g, S: Scalar>(&self, p: &Bound<'g, S>, z: Var<'g, S>, steps: usize) -> Result<Var<'g, S>> {
        let shape = z.shape();
        if steps == 0 {
            return Err(Error::contract("decoder needs at least one time step"));
        }
        if shape.len() != 2 || shape[1] != self.init.inputs {
            return Err(Error::contract(format!(
                "decoder expects B x {} latents, got {shape:?}",
                self.init.inputs
            )));
        }
        let b = shape[0];
        let mut h = self.init.forward(p, z);
        let gi = self.gru.input_projection(p, z);
        let mut states = Vec::with_capacity(steps);
        for _ in 0..steps {
            h = self.gru.cell(p, gi, h);
            states.push(h);
        }
        let hidden = stack_steps(&states).reshape(&[b * steps, self.gru.hidden_size]);
        let x = self.out.forward(p, hidden).reshape(&[b, steps, self.out.outputs]);
        x.graph().check_finite()?;
        Ok(x)
    }
}

/// Shared behaviour of models built from an [`Encoder`] and a [`Decoder`].
pub trait SequenceVae<S: Scalar> {
    fn config(&self) -> &ModelConfig;
    fn store(&self) -> &ParamStore<S>;
    fn encoder(&self) -> &Encoder;
    fn decoder(&self) -> &Decoder;

    /// Inference-mode posteriors of `x: N x T x D`.
    fn posterior(&self, x: &Tensor<S>) -> Result<GaussianPosterior<S>> {
        let n = x.shape()[0];
        let z = self.config().latent_dim();
        let mut mean = Vec::with_capacity(n * z);
        let mut log_std = Vec::with_capacity(n * z);
        for start in (0..n).step_by(INFERENCE_CHUNK) {
            let rows: Vec<usize> = (start..(start + INFERENCE_CHUNK).min(n)).collect();
            let g = Graph::new();
            let p = g.bind_constant(self.store());
            let post = self.encoder().encode(&p, g.constant_owned(x.select_rows(&rows)))?;
            mean.extend_from_slice(post.mean.value().data());
            log_std.extend_from_slice(post.log_std.value().data());
        }
        Ok(GaussianPosterior {
            mean: Tensor::new(vec![n, z], mean)?,
            log_std: Tensor::new(vec![n, z], log_std)?,
        })
    }

    /// Inference-mode decoding of `z: N x |Z|` into `N x steps x D`.
    fn reconstruct(&self, z: &Tensor<S>, steps: usize) -> Result<Tensor<S>> {
        let n = z.shape()[0];
        let d = self.config().input_dim;
        let mut out = Vec::with_capacity(n * steps * d);
        for start in (0..n).step_by(INFERENCE_CHUNK) {
            let rows: Vec<usize> = (start..(start + INFERENCE_CHUNK).min(n)).collect();
            let g = Graph::new();
            let p = g.bind_constant(self.store());
            let x = self.decoder().decode(&p, g.constant_owned(z.select_rows(&rows)), steps)?;
            out.extend_from_slice(x.value().data());
        }
        Tensor::new(vec![n, steps, d], out)
    }
}

/// Encoder/decoder pair trained on a single (possibly segmented) latent.
#[derive(Clone, Debug, PartialEq)]
pub struct VaeModel<S> {
    pub config: ModelConfig,
    pub store: ParamStore<S>,
    pub encoder: Encoder,
    pub decoder: Decoder,
}

impl<S: Scalar> VaeModel<S> {
    pub fn new(config: ModelConfig, seed: u64) -> Self {
        let mut rng = rng::stream(seed, &[tag::INIT]);
        let mut store = ParamStore::new();
        let encoder = Encoder::new(&mut store, &config, &mut rng);
        let decoder = Decoder::new(&mut store, &config, &mut rng);
        VaeModel {
            config,
            store,
            encoder,
            decoder,
        }
    }

    /// Same layout with every value converted to another scalar type.
    pub fn cast<T: Scalar>(&self) -> VaeModel<T> {
        VaeModel {
            config: self.config.clone(),
            store: self.store.cast(),
            encoder: self.encoder.clone(),
            decoder: self.decoder.clone(),
        }
    }
}

impl<S: Scalar> SequenceVae<S> for VaeModel<S> {
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
