//! Named latent segments and adversarial group-segment disentanglement for
//! unsupervised domain adaptation.

mod adapt;
mod latent;
mod model;

pub use adapt::{adapt_train, AdaptConfig, AdaptEpochLog, AdaptTrainer, LambdaSchedule};
pub use latent::{segment_columns, split_latent, LatentSpec, Segment};
pub use model::{
    adversarial_losses, adversarial_losses_plain, group_elbo, AdaptBatch, AdversarialLosses, GroupElbo, GroupModel,
};
