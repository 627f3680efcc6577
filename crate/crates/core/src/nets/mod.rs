//! Sequential networks parameterizing the posterior, the decoder and the
//! segment classifiers.

mod gru;
mod linear;
mod vae;

pub use gru::{stack_steps, Gru};
pub use linear::{argmax_rows, cross_entropy, Classifier, Linear};
pub use vae::{
    reparameterize, Decoder, Encoder, GaussianPosterior, ModelConfig, Posterior, SequenceVae, VaeModel, LOG_STD_MAX,
    LOG_STD_MIN,
};
