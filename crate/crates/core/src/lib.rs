//! Disentangled time-series representation learning.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: dense tensors, a tape-based reverse-mode autodiff graph,
//!   gradient reversal, Adam and finite-difference gradient checking.
//! * [`nets`]: GRU trunk, Gaussian posterior heads, sequence decoder and
//!   linear classifiers.
//! * [`elbo`]: Gaussian densities, closed-form KL, the minibatch
//!   decomposition of the KL term into index-code MI, total correlation and
//!   dimension-wise KL, the weighted objectives and the individual trainer.
//! * [`group`]: latent segments, the dual-segment adversarial model and the
//!   domain adaptation trainer.
//! * [`data`]: synthetic factor-controlled series, CSV ingestion, windowing
//!   and normalization.
//! * [`metrics`]: MIG, traversals, linear probes, proxy discrepancy and the
//!   aggregated report.
//! * [`cli`]: run configuration, checkpoints and the `dts` subcommands.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision used by the trainers, metrics and CLI.

pub mod cli;
pub mod data;
pub mod elbo;
pub mod error;
pub mod group;
pub mod metrics;
pub mod nets;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Graph64 = tensor::Graph<f64>;
pub type Graph32 = tensor::Graph<f32>;
pub type ParamStore64 = tensor::ParamStore<f64>;
pub type VaeModel64 = nets::VaeModel<f64>;
pub type VaeModel32 = nets::VaeModel<f32>;
pub type GroupModel64 = group::GroupModel<f64>;
pub type GroupModel32 = group::GroupModel<f32>;
pub type IndividualTrainer64 = elbo::IndividualTrainer<f64>;
pub type AdaptTrainer64 = group::AdaptTrainer<f64>;
