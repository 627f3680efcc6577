//! Gaussian densities, the decomposed KL term and the vanilla / β / DTS
//! objectives, plus the single-latent trainer.

mod decompose;
mod density;
mod objective;
mod train;

pub use decompose::{decompose_minibatch, DecompositionTerms, DecompositionVars};
pub use density::{
    gaussian_log_density, gaussian_logpdf, kl_diag_gaussian, kl_diag_gaussian_tensor, recon_loglik,
    standard_normal_logpdf, HALF_LN_2PI,
};
pub use objective::{objective, objective_var, ObjectiveConfig, ObjectiveMode};
pub use train::{
    elbo_pass, evaluate_terms, plan_batches, train_individual, BatchOrder, ElboPass, EpochLog, IndividualTrainer,
    TrainConfig,
};
pub(crate) use train::{batch_noise, check_loss, optimizer_step, Snapshot};
